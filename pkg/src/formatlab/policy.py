"""A tabular autoregressive policy and the clipped group-relative objective.

A response is generated as one format token drawn from
``softmax(format_head[class])`` followed by content tokens drawn i.i.d.
from ``softmax(content_head[format])`` until the stop symbol or
``max_content`` tokens. Token ids in a sequence are the format index
(0, 1, 2 for full, perception-only, direct) followed by content ids in
``range(V)``; content id ``STOP`` ends generation.

Everything is small enough for exact log-softmax values, exact
categorical KL and closed-form gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .formats import ResponseFormat
from .rewards import RewardConfig

STOP = 0
N_FORMATS = 3


@dataclass
class PolicyParams:
    format_head: np.ndarray  # [n_classes, 3]
    content_head: np.ndarray  # [3, V]

    @classmethod
    def zeros(cls, n_classes: int, vocab_size: int = 8) -> "PolicyParams":
        if vocab_size < 2:
            raise ValueError("content vocabulary needs the stop symbol and at least one other token")
        return cls(np.zeros((n_classes, N_FORMATS)), np.zeros((N_FORMATS, vocab_size)))

    @property
    def vocab_size(self) -> int:
        return self.content_head.shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.format_head.copy(), self.content_head.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.format_head.ravel(), self.content_head.ravel()])

    def with_flat(self, x: np.ndarray) -> "PolicyParams":
        n = self.format_head.size
        return PolicyParams(x[:n].reshape(self.format_head.shape).copy(),
                            x[n:].reshape(self.content_head.shape).copy())

    def __add__(self, other: "PolicyParams") -> "PolicyParams":
        return PolicyParams(self.format_head + other.format_head, self.content_head + other.content_head)

    def scaled(self, a: float) -> "PolicyParams":
        return PolicyParams(a * self.format_head, a * self.content_head)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.format_head).all() and np.isfinite(self.content_head).all())


def format_mask(cfg: RewardConfig | None) -> np.ndarray:
    mask = np.ones(N_FORMATS, dtype=bool)
    if cfg is not None:
        mask[:] = [k in cfg.enabled_formats for k in ResponseFormat]
    return mask


def log_softmax(z: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise log-softmax; masked-out entries get ``-inf``."""
    z = np.asarray(z, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def format_probs(params: PolicyParams, class_id: int, mask=None) -> np.ndarray:
    return np.exp(log_softmax(params.format_head[class_id], mask))


def policy_logprob(params: PolicyParams, class_id: int, token_seq: Sequence[int],
                   mask=None) -> np.ndarray:
    """Per-token log-probabilities of ``token_seq`` (format token first)."""
    seq = np.asarray(token_seq, dtype=int)
    if seq.size == 0:
        raise ValueError("empty token sequence")
    k = int(seq[0])
    content = seq[1:]
    if not 0 <= k < N_FORMATS or (content.size and (content.min() < 0 or content.max() >= params.vocab_size)):
        raise ValueError("token id outside the vocabulary")
    out = np.empty(seq.size)
    out[0] = log_softmax(params.format_head[class_id], mask)[k]
    out[1:] = log_softmax(params.content_head[k])[content]
    return out


def categorical_kl(lp: np.ndarray, lq: np.ndarray) -> float:
    """KL(p || q) from log-probabilities; entries with p = 0 contribute nothing."""
    p = np.exp(lp)
    support = p > 0
    return float(np.sum(p[support] * (lp[support] - lq[support])))


def token_kl(params: PolicyParams, ref_params: PolicyParams, class_id: int,
             position: int | str, mask=None) -> float:
    """Exact KL(pi_theta || pi_ref) at one decision point.

    ``position="format"`` is the format decision of ``class_id``; an integer
    ``k`` (0-2) is the content distribution following format ``k``.
    """
    if position == "format":
        return categorical_kl(log_softmax(params.format_head[class_id], mask),
                              log_softmax(ref_params.format_head[class_id], mask))
    return categorical_kl(log_softmax(params.content_head[int(position)]),
                          log_softmax(ref_params.content_head[int(position)]))


@dataclass
class Trajectory:
    class_id: int
    token_seq: np.ndarray
    logprobs_old: np.ndarray
    logprobs_ref: np.ndarray
    n_tok: int
    correct: bool
    logprobs_theta: np.ndarray | None = None

    @property
    def format(self) -> ResponseFormat:
        return ResponseFormat(int(self.token_seq[0]) + 1)

    def __len__(self) -> int:
        return int(self.token_seq.size)


@dataclass
class RolloutGroup:
    task: object
    trajectories: list[Trajectory]
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    scored: list = field(default_factory=list)

    @property
    def formats(self) -> list[ResponseFormat]:
        return [tr.format for tr in self.trajectories]


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
    # scaling by the total keeps zero-probability tail entries unreachable
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


class _Sampler:
    """Log-softmax tables of one parameter snapshot, reused for every draw."""

    def __init__(self, params: PolicyParams, mask=None):
        self.lsf = log_softmax(params.format_head, mask)
        self.lsc = log_softmax(params.content_head)
        self.cdf_f = np.cumsum(np.exp(self.lsf), axis=1)
        self.cdf_c = np.cumsum(np.exp(self.lsc), axis=1)

    def draw(self, class_id: int, rng, max_content: int) -> np.ndarray:
        k = _draw(self.cdf_f[class_id], rng)
        seq = [k]
        for _ in range(max_content):
            c = _draw(self.cdf_c[k], rng)
            seq.append(c)
            if c == STOP:
                break
        return np.asarray(seq, dtype=int)

    def logprob(self, class_id: int, seq: np.ndarray) -> np.ndarray:
        k = int(seq[0])
        out = np.empty(seq.size)
        out[0] = self.lsf[class_id, k]
        out[1:] = self.lsc[k, seq[1:]]
        return out


def sample_response(params: PolicyParams, class_id: int, rng: np.random.Generator,
                    mask=None, max_content: int = 16) -> np.ndarray:
    return _Sampler(params, mask).draw(class_id, rng, max_content)


def sample_group(params: PolicyParams, task, G: int, rng: np.random.Generator, env,
                 ref_params: PolicyParams | None = None, mask=None,
                 max_content: int = 16) -> RolloutGroup:
    """Draw G responses for ``task`` from ``params`` (the behaviour snapshot) and judge them."""
    if G < 2:
        raise ValueError("a group needs at least two rollouts")
    behaviour = _Sampler(params, mask)
    ref = behaviour if ref_params is None or ref_params is params else _Sampler(ref_params, mask)
    trajectories = []
    for _ in range(G):
        seq = behaviour.draw(task.class_id, rng, max_content)
        fmt = ResponseFormat(int(seq[0]) + 1)
        correct = env.judge(task, fmt, rng)
        n_tok = env.sample_token_count(task, fmt, rng)
        trajectories.append(Trajectory(
            class_id=task.class_id,
            token_seq=seq,
            logprobs_old=behaviour.logprob(task.class_id, seq),
            logprobs_ref=ref.logprob(task.class_id, seq),
            n_tok=n_tok,
            correct=correct,
        ))
    return RolloutGroup(task=task, trajectories=trajectories)


def _kl_and_grad(lp: np.ndarray, lq: np.ndarray) -> tuple[float, np.ndarray]:
    p = np.exp(lp)
    support = p > 0
    diff = np.where(support, lp - np.where(support, lq, 0.0), 0.0)
    kl = float(np.sum(p * diff))
    return kl, p * (diff - kl)


@dataclass
class SurrogateStats:
    value: float
    mean_kl: float
    clip_fraction: float


def fs_grpo_surrogate(params: PolicyParams, old_params: PolicyParams | None,
                      ref_params: PolicyParams, groups: Sequence[RolloutGroup],
                      cfg: RewardConfig, kl_mode: str = "exact", mask=None,
                      return_stats: bool = False):
    """Clipped token-level objective with KL penalty, and its gradient.

    For each group the per-token terms
    ``min(rho * A, clip(rho, 1-eps, 1+eps) * A) - beta * KL`` are summed and
    divided by the group's total token count; the objective is the mean over
    groups (maximisation convention). ``rho = exp(logp_theta - logp_old)``
    uses log-probabilities cached at sampling time; ``old_params`` only fills
    them in when they are missing.

    ``kl_mode="exact"`` uses the categorical KL at each decision point;
    ``"k3"`` uses the per-token estimator ``r - log r - 1`` with
    ``r = pi_ref / pi_theta`` at the sampled token.
    """
    if kl_mode not in ("exact", "k3"):
        raise ValueError(f"unknown kl_mode {kl_mode!r}")
    if not groups:
        raise ValueError("no groups")
    eps, beta = cfg.eps_clip, cfg.beta
    if mask is None:
        mask = format_mask(cfg)
    g_fmt = np.zeros_like(params.format_head)
    g_con = np.zeros_like(params.content_head)

    lsf = log_softmax(params.format_head, mask)
    lsc = log_softmax(params.content_head)
    lsf_ref = log_softmax(ref_params.format_head, mask)
    lsc_ref = log_softmax(ref_params.content_head)
    # exact KL depends only on the decision row
    kl_f, dkl_f = zip(*(_kl_and_grad(lsf[c], lsf_ref[c]) for c in range(lsf.shape[0])))
    kl_c, dkl_c = zip(*(_kl_and_grad(lsc[k], lsc_ref[k]) for k in range(N_FORMATS)))

    total = 0.0
    kl_sum = 0.0
    n_tokens = 0
    n_clipped = 0
    for group in groups:
        if group.advantages is None:
            raise ValueError("group advantages missing")
        norm = sum(len(tr) for tr in group.trajectories)
        w = 1.0 / (norm * len(groups))
        for tr, adv in zip(group.trajectories, group.advantages):
            c, seq = tr.class_id, tr.token_seq
            k, content = int(seq[0]), seq[1:]
            lp = np.empty(seq.size)
            lp[0] = lsf[c, k]
            lp[1:] = lsc[k, content]
            old = tr.logprobs_old
            if old is None:
                old = policy_logprob(old_params, c, seq, mask)
            rho = np.exp(lp - old)
            unclipped = rho * adv
            clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * adv
            surr = np.minimum(unclipped, clipped)
            # d surr / d logp is rho * A where the unclipped branch is the min
            active = unclipped <= clipped
            coef = np.where(active, rho * adv, 0.0)
            n_clipped += int(np.sum(~active))

            if kl_mode == "exact":
                kl_tok = np.empty(seq.size)
                kl_tok[0] = kl_f[c]
                kl_tok[1:] = kl_c[k]
                g_fmt[c] -= w * beta * dkl_f[c]
                g_con[k] -= w * beta * content.size * dkl_c[k]
            else:
                x = tr.logprobs_ref - lp
                ex = np.exp(x)
                kl_tok = ex - x - 1.0
                # d kl / d logp = 1 - exp(x)
                coef = coef - beta * (1.0 - ex)

            total += w * float(np.sum(surr - beta * kl_tok))
            kl_sum += float(np.sum(kl_tok))
            n_tokens += seq.size

            pf = np.exp(lsf[c])
            g_fmt[c, k] += w * coef[0]
            g_fmt[c] -= w * coef[0] * pf
            if content.size:
                pc = np.exp(lsc[k])
                g_con[k] += w * np.bincount(content, weights=coef[1:], minlength=params.vocab_size)
                g_con[k] -= w * coef[1:].sum() * pc

    g_fmt[:, ~mask] = 0.0
    grad = PolicyParams(g_fmt, g_con)
    if return_stats:
        return total, grad, SurrogateStats(total, kl_sum / n_tokens, n_clipped / n_tokens)
    return total, grad
