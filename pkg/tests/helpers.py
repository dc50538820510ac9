"""Shared test utilities: random rollout groups and a finite-difference gradient check."""

import numpy as np

from formatlab import seeding
from formatlab.env import SimEnv
from formatlab.policy import PolicyParams, fs_grpo_surrogate, format_mask, policy_logprob, sample_group
from formatlab.rewards import RewardConfig


def random_groups(params, old, ref, cfg, seed, n_groups=3, mask=None):
    env = SimEnv(seed=seed)
    rng = seeding.stream(seed, 77)
    groups = []
    for task in env.tasks(0, n_groups):
        g = sample_group(old, task, cfg.G, rng, env, ref_params=ref, mask=mask, max_content=6)
        g.advantages = rng.normal(size=cfg.G)
        groups.append(g)
    return groups


def _near_kink(params, groups, eps, tol=1e-3):
    for g in groups:
        for tr in g.trajectories:
            lp = policy_logprob(params, tr.class_id, tr.token_seq)
            rho = np.exp(lp - tr.logprobs_old)
            if np.any(np.abs(rho - (1 - eps)) < tol) or np.any(np.abs(rho - (1 + eps)) < tol):
                return True
    return False


def fd_check(kl_mode, n_configs, seed0):
    checked, worst = 0, 0.0
    seed = seed0
    while checked < n_configs:
        seed += 1
        rng = seeding.stream(seed, 1)
        cfg = RewardConfig(beta=float(rng.uniform(0, 0.5)), eps_clip=float(rng.uniform(0.1, 0.3)),
                           enabled_formats=((1, 2, 3), (1, 3))[seed % 2])
        mask = format_mask(cfg)
        ref = PolicyParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 8)))
        old = PolicyParams(ref.format_head + 0.3 * rng.normal(size=(3, 3)),
                           ref.content_head + 0.3 * rng.normal(size=(3, 8)))
        params = PolicyParams(old.format_head + 0.3 * rng.normal(size=(3, 3)),
                              old.content_head + 0.3 * rng.normal(size=(3, 8)))
        groups = random_groups(params, old, ref, cfg, seed, mask=mask)
        if _near_kink(params, groups, cfg.eps_clip):
            continue
        _, grad = fs_grpo_surrogate(params, old, ref, groups, cfg, kl_mode, mask)
        x0 = params.flat()
        fd = np.zeros_like(x0)
        h = 1e-5
        for j in range(x0.size):
            e = np.zeros_like(x0)
            e[j] = h
            fp = fs_grpo_surrogate(params.with_flat(x0 + e), old, ref, groups, cfg, kl_mode, mask)[0]
            fm = fs_grpo_surrogate(params.with_flat(x0 - e), old, ref, groups, cfg, kl_mode, mask)[0]
            fd[j] = (fp - fm) / (2 * h)
        a = grad.flat()
        rel = np.linalg.norm(a - fd) / max(np.linalg.norm(a), np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
        checked += 1
    return checked, worst


