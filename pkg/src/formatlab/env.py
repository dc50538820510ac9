"""Synthetic task distribution standing in for visual question answering.

A task belongs to one of three classes. Each class fixes, per response
format, the probability that an answer in that format is correct and the
distribution of its token cost (uniform integer in ``mean +/- jitter``,
floored at one token).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from math import comb
from typing import Sequence

import numpy as np

from .formats import ResponseFormat
from .rewards import RewardConfig, decay_factor, format_reward, length_scale
from . import seeding

CLASS_NAMES = ("perception_intensive", "reasoning_intensive", "general")

# Per-format accuracies measured on real benchmarks (OCRBench, MathVista, MMMU),
# ordered (full, perception-only, direct). They seed the simulator's judge.
REFERENCE_ACCURACY = {
    "perception_intensive": (0.752, 0.903, 0.862),
    "reasoning_intensive": (0.437, 0.426, 0.354),
    "general": (0.611, 0.592, 0.556),
}
# How often the reference model chose each format on the same benchmarks.
REFERENCE_RATIO = {
    "perception_intensive": (0.231, 0.475, 0.294),
    "reasoning_intensive": (0.783, 0.158, 0.059),
    "general": (0.543, 0.337, 0.120),
}

DEFAULT_TOK_MEAN = (280, 150, 10)
DEFAULT_TOK_JITTER = (100, 50, 3)


def _triple(values, cast=float) -> tuple:
    if isinstance(values, (int, float)):
        values = (values,) * 3
    out = tuple(cast(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"expected three per-format values, got {values!r}")
    return out


@dataclass(frozen=True)
class TaskClassSpec:
    name: str
    p_correct: tuple[float, float, float]
    tok_mean: tuple[int, int, int] = DEFAULT_TOK_MEAN
    tok_jitter: tuple[int, int, int] = DEFAULT_TOK_JITTER

    def __post_init__(self):
        object.__setattr__(self, "p_correct", _triple(self.p_correct))
        object.__setattr__(self, "tok_mean", _triple(self.tok_mean, int))
        object.__setattr__(self, "tok_jitter", _triple(self.tok_jitter, int))
        if not all(0.0 <= p <= 1.0 for p in self.p_correct):
            raise ValueError(f"{self.name}: p_correct entries must lie in [0, 1]")
        m = self.tok_mean
        if min(m) < 1 or not m[0] >= m[1] >= m[2]:
            raise ValueError(f"{self.name}: tok_mean must be positive with full >= perception >= direct")
        if min(self.tok_jitter) < 0:
            raise ValueError(f"{self.name}: tok_jitter must be nonnegative")

    def token_support(self, k) -> np.ndarray:
        i = int(k) - 1
        lo, hi = self.tok_mean[i] - self.tok_jitter[i], self.tok_mean[i] + self.tok_jitter[i]
        return np.maximum(np.arange(lo, hi + 1), 1)


def default_specs(tok_mean=DEFAULT_TOK_MEAN, tok_jitter=DEFAULT_TOK_JITTER) -> list[TaskClassSpec]:
    return [TaskClassSpec(name, REFERENCE_ACCURACY[name], tok_mean, tok_jitter) for name in CLASS_NAMES]


@dataclass(frozen=True)
class SyntheticTask:
    id: int
    class_id: int
    spec: TaskClassSpec
    seed: int


def judge(task: SyntheticTask, fmt, rng: np.random.Generator) -> bool:
    return bool(rng.random() < task.spec.p_correct[int(fmt) - 1])


def sample_token_count(spec: TaskClassSpec, fmt, rng: np.random.Generator) -> int:
    i = int(fmt) - 1
    lo, hi = spec.tok_mean[i] - spec.tok_jitter[i], spec.tok_mean[i] + spec.tok_jitter[i]
    return max(1, int(rng.integers(lo, hi + 1)))


@dataclass
class SimEnv:
    """A seeded stream of synthetic tasks drawn from a class mixture."""

    specs: list[TaskClassSpec] = field(default_factory=default_specs)
    weights: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        w = np.ones(len(self.specs)) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (len(self.specs),) or w.min() < 0 or w.sum() <= 0:
            raise ValueError("mixture weights must be nonnegative, one per class")
        self.weights = tuple(float(x) for x in w / w.sum())

    @property
    def n_classes(self) -> int:
        return len(self.specs)

    def tasks(self, step: int, n: int) -> list[SyntheticTask]:
        """The ``n`` tasks of batch ``step``; identical for identical seeds."""
        rng = seeding.stream(self.seed, seeding.TASKS, step)
        classes = rng.choice(self.n_classes, size=n, p=self.weights)
        return [
            SyntheticTask(id=step * n + i, class_id=int(c), spec=self.specs[int(c)],
                          seed=int(rng.integers(2**31)))
            for i, c in enumerate(classes)
        ]

    def judge(self, task: SyntheticTask, fmt, rng) -> bool:
        return judge(task, fmt, rng)

    def sample_token_count(self, task: SyntheticTask, fmt, rng) -> int:
        return sample_token_count(task.spec, fmt, rng)


def expected_length_scale(spec: TaskClassSpec, k, L: int) -> float:
    return float(np.mean([length_scale(int(n), L) for n in spec.token_support(k)]))


def expected_diversity(k, cfg: RewardConfig, t: int, policy: Sequence[float]) -> float:
    """E[r_div] for a rollout of format k when the other G-1 rollouts follow ``policy``.

    Enumerates the Binomial(G-1, pi_k) count of other rollouts sharing format k.
    """
    if not cfg.diversity_enabled:
        return 0.0
    G, pk = cfg.G, float(policy[int(k) - 1])
    d = decay_factor(t, cfg.T)
    total = 0.0
    for j in range(G):
        prob = comb(G - 1, j) * pk**j * (1.0 - pk) ** (G - 1 - j)
        total += prob * (1.0 - (j + 1) / G)
    return d * total


def uniform_policy(cfg: RewardConfig) -> tuple[float, float, float]:
    n = len(cfg.enabled_formats)
    return tuple(1.0 / n if k in cfg.enabled_formats else 0.0 for k in ResponseFormat)


def expected_reward_oracle(spec: TaskClassSpec, k, cfg: RewardConfig, t: int,
                           policy: Sequence[float] | None = None) -> float:
    """Exact expected total reward of answering a ``spec`` task in format k at step t.

    Correctness and token cost are independent, so the expectation factorises
    into E[s_L] * (E[r_format] + E[r_div]). ``policy`` is the format
    distribution of the rest of the group (uniform over enabled formats by
    default).
    """
    policy = uniform_policy(cfg) if policy is None else policy
    p = spec.p_correct[int(k) - 1]
    e_format = p * format_reward(True, k, cfg) + (1.0 - p) * format_reward(False, k, cfg)
    e_s = expected_length_scale(spec, k, cfg.L)
    return e_s * (e_format + expected_diversity(k, cfg, t, policy))


def oracle_best_format(spec: TaskClassSpec, cfg: RewardConfig, t: int | None = None,
                       policy=None) -> ResponseFormat:
    t = cfg.T if t is None else t
    values = {k: expected_reward_oracle(spec, k, cfg, t, policy) for k in cfg.enabled_formats}
    return max(values, key=values.get)


def load_env_config(path, base: Sequence[TaskClassSpec] | None = None):
    """Read per-class overrides from an INI-style file.

    Each ``[class_name]`` section may set ``p_correct``, ``tok_mean``,
    ``tok_jitter`` (comma-separated, full/perception/direct order) and
    ``weight``. Returns ``(specs, weights)``.
    """
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return apply_env_overrides(parser, base)


def apply_env_overrides(parser: configparser.ConfigParser, base=None, prefix: str = ""):
    specs = list(base or default_specs())
    weights = [1.0] * len(specs)
    names = [s.name for s in specs]
    for section in parser.sections():
        if not section.startswith(prefix):
            continue
        name = section[len(prefix):]
        if name not in names:
            if prefix:
                raise ValueError(f"unknown task class {name!r}")
            continue
        i = names.index(name)
        sec = parser[section]
        kw = {}
        for key in ("p_correct", "tok_mean", "tok_jitter"):
            if key in sec:
                kw[key] = [x.strip() for x in sec[key].split(",")]
        kw = {k: _triple(v, float if k == "p_correct" else int) for k, v in kw.items()}
        specs[i] = replace(specs[i], **kw)
        if "weight" in sec:
            weights[i] = sec.getfloat("weight")
    return specs, tuple(weights)
