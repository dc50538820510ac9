"""Format-selection reward terms and group-relative advantages.

Per rollout ``i`` in a group of ``G``::

    r_i = s_L(n_tok) * (r_format + r_div)

    r_format = 1 + f_k if correct else -f_k
    r_div    = d(t) * (1 - c_k / G),   d(t) = (1 + cos(pi t / T)) / 2
    s_L      = 1 if n_tok <= L else L / n_tok

With the diversity term disabled the reward is ``s_L * r_format``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .formats import ResponseFormat

ALL_FORMATS = (ResponseFormat.FULL, ResponseFormat.PERCEPTION_ONLY, ResponseFormat.DIRECT)


@dataclass(frozen=True)
class RewardConfig:
    f: tuple[float, float, float] = (0.0, 0.3, 0.5)
    L: int = 300
    G: int = 8
    T: int = 200
    beta: float = 0.02
    eps_clip: float = 0.2
    diversity_enabled: bool = True
    adv_epsilon: float = 1e-8
    enabled_formats: tuple[ResponseFormat, ...] = field(default=ALL_FORMATS)

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(float(x) for x in self.f))
        object.__setattr__(
            self, "enabled_formats",
            tuple(sorted(ResponseFormat.parse(k) for k in self.enabled_formats)),
        )
        if len(self.f) != 3:
            raise ValueError("f must hold one bonus per format")
        if not self.enabled_formats:
            raise ValueError("at least one format must be enabled")
        bonuses = [self.bonus(k) for k in self.enabled_formats]
        if min(bonuses) < 0 or any(hi <= lo for lo, hi in zip(bonuses, bonuses[1:])):
            raise ValueError(f"format bonuses must satisfy f3 > f2 > f1 >= 0, got {self.f}")
        if self.L < 1:
            raise ValueError("L must be a positive token count")
        if self.G < 2:
            raise ValueError("group size G must be at least 2")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0 < self.eps_clip < 1:
            raise ValueError("eps_clip must lie in (0, 1)")
        if self.adv_epsilon <= 0:
            raise ValueError("adv_epsilon must be positive")

    def bonus(self, k) -> float:
        return self.f[int(k) - 1]

    @property
    def malformed_penalty(self) -> float:
        return -max(self.bonus(k) for k in self.enabled_formats)


def format_ablation_configs(base: RewardConfig = RewardConfig()) -> dict[str, RewardConfig]:
    """The three reduced-format variants alongside the full three-format setting.

    Full-only training uses no bonus at all; the two-format variants keep the
    main bonuses for the formats they retain.
    """
    F, P, D = ALL_FORMATS
    return {
        "all_formats": base,
        "full_only": replace(base, f=(0.0, 0.0, 0.0), enabled_formats=(F,)),
        "perception_plus_full": replace(base, enabled_formats=(F, P)),
        "direct_plus_full": replace(base, enabled_formats=(F, D)),
    }


def format_reward(correct: bool, k, cfg: RewardConfig) -> float:
    k = ResponseFormat(int(k))
    if k not in cfg.enabled_formats:
        raise ValueError(f"format {k.label} is not enabled")
    fk = cfg.bonus(k)
    return 1.0 + fk if correct else -fk


def decay_factor(t: int, T: int) -> float:
    if T <= 0:
        raise ValueError("T must be positive")
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    return 0.5 * (1.0 + math.cos(math.pi * t / T))


def format_counts(formats: Iterable[ResponseFormat | None]) -> tuple[int, int, int]:
    """Per-format counts; unparseable rollouts (None) land in no bucket."""
    counts = [0, 0, 0]
    for k in formats:
        if k is not None:
            counts[int(k) - 1] += 1
    return tuple(counts)


def diversity_reward(k, counts: Sequence[int], t: int, cfg: RewardConfig) -> float:
    if not cfg.diversity_enabled:
        return 0.0
    ck = counts[int(k) - 1]
    if ck < 1 or sum(counts) > cfg.G:
        raise ValueError(f"inconsistent group counts {tuple(counts)} for G={cfg.G}")
    return decay_factor(t, cfg.T) * (1.0 - ck / cfg.G)


def length_scale(n_tok: int, L: int) -> float:
    if n_tok <= L:
        return 1.0
    return L / n_tok


def total_reward(fmt, correct: bool, n_tok: int, counts: Sequence[int], t: int,
                 cfg: RewardConfig) -> float:
    return score_rollout(fmt, correct, n_tok, counts, t, cfg).r_total


@dataclass(frozen=True)
class ScoredRollout:
    format: ResponseFormat | None
    correct: bool
    n_tok: int
    r_format: float
    r_div: float
    s_L: float
    r_total: float
    advantage: float = 0.0


def score_rollout(fmt, correct, n_tok, counts, t, cfg: RewardConfig) -> ScoredRollout:
    """All reward terms for one rollout; ``fmt=None`` marks an unparseable response."""
    s = length_scale(n_tok, cfg.L)
    if fmt is None:
        r_f, r_d = cfg.malformed_penalty, 0.0
    else:
        fmt = ResponseFormat(int(fmt))
        r_f = format_reward(correct, fmt, cfg)
        r_d = diversity_reward(fmt, counts, t, cfg)
    return ScoredRollout(fmt, bool(correct), int(n_tok), r_f, r_d, s, s * (r_f + r_d))


def group_advantages(rewards: Sequence[float], adv_epsilon: float = 1e-8) -> np.ndarray:
    """(r - mean) / (population std + adv_epsilon); constant groups give zeros."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    centered = r - r.mean()
    return centered / (r.std() + adv_epsilon)


def score_group(rollouts: Sequence[tuple], t: int, cfg: RewardConfig) -> list[ScoredRollout]:
    """Score ``(format | None, correct, n_tok)`` triples forming one group.

    The diversity denominator is the full group size, including rollouts
    that failed to parse.
    """
    if len(rollouts) != cfg.G:
        cfg = replace(cfg, G=len(rollouts))
    counts = format_counts(fmt for fmt, _, _ in rollouts)
    scored = [score_rollout(fmt, c, n, counts, t, cfg) for fmt, c, n in rollouts]
    adv = group_advantages([s.r_total for s in scored], cfg.adv_epsilon)
    return [replace(s, advantage=float(a)) for s, a in zip(scored, adv)]
