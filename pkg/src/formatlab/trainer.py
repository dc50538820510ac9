"""Seeded training loop for the tabular policy on the synthetic environment."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import seeding
from .env import SimEnv, SyntheticTask
from .formats import ResponseFormat
from .policy import (PolicyParams, RolloutGroup, format_mask, format_probs,
                     fs_grpo_surrogate, sample_group, sample_response)
from .rewards import RewardConfig, score_group

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The objective or the parameters became non-finite."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainerConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 10.0
    inner_steps: int = 4
    vocab_size: int = 8
    max_content: int = 16
    kl_mode: str = "exact"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_size < 1 or self.inner_steps < 1:
            raise ValueError("batch_size and inner_steps must be positive")
        if self.kl_mode not in ("exact", "k3"):
            raise ValueError(f"unknown kl_mode {self.kl_mode!r}")


HISTORY_COLUMNS = (
    "step", "mean_reward", "mean_task_reward", "accuracy", "mean_length", "max_length",
    "usage_full", "usage_perception_only", "usage_direct",
    "surrogate", "mean_kl", "clip_fraction",
)


@dataclass(frozen=True)
class StepRecord:
    step: int
    mean_reward: float
    mean_task_reward: float
    accuracy: float
    mean_length: float
    max_length: int
    usage_full: float
    usage_perception_only: float
    usage_direct: float
    surrogate: float
    mean_kl: float
    clip_fraction: float

    @property
    def usage(self) -> tuple[float, float, float]:
        return (self.usage_full, self.usage_perception_only, self.usage_direct)


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)

    def append(self, rec: StepRecord):
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("history steps must strictly increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def usage(self) -> np.ndarray:
        return np.array([r.usage for r in self.records]).reshape(-1, 3)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            d = asdict(r)
            w.writerow([d[c] if isinstance(d[c], int) else repr(float(d[c])) for c in HISTORY_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.DictReader(io.StringIO(text)))
        hist = cls()
        for row in rows:
            hist.append(StepRecord(**{
                c: (int(row[c]) if c in ("step", "max_length") else float(row[c]))
                for c in HISTORY_COLUMNS
            }))
        return hist


@dataclass
class TrainResult:
    params: PolicyParams
    ref_params: PolicyParams
    history: TrainHistory


def _record(step, groups: list[RolloutGroup], value, stats) -> StepRecord:
    trajs = [tr for g in groups for tr in g.trajectories]
    rewards = np.concatenate([g.rewards for g in groups])
    task = [s.s_L * s.r_format for g in groups for s in g.scored]
    lengths = np.array([tr.n_tok for tr in trajs])
    fmts = np.array([int(tr.format) for tr in trajs])
    usage = [float(np.mean(fmts == k)) for k in (1, 2, 3)]
    return StepRecord(
        step=step,
        mean_reward=float(rewards.mean()),
        mean_task_reward=float(np.mean(task)),
        accuracy=float(np.mean([tr.correct for tr in trajs])),
        mean_length=float(lengths.mean()),
        max_length=int(lengths.max()),
        usage_full=usage[0],
        usage_perception_only=usage[1],
        usage_direct=usage[2],
        surrogate=float(value),
        mean_kl=float(stats.mean_kl),
        clip_fraction=float(stats.clip_fraction),
    )


def train(cfg: RewardConfig, tcfg: TrainerConfig, env: SimEnv,
          init: PolicyParams | None = None) -> TrainResult:
    """Run ``tcfg.steps`` optimizer steps.

    Each step snapshots the behaviour policy, samples ``batch_size`` groups of
    ``cfg.G`` rollouts, scores them at step ``t``, and takes ``inner_steps``
    gradient-ascent steps on the clipped objective against that snapshot.
    The frozen reference policy is the initial policy.
    """
    params = PolicyParams.zeros(env.n_classes, tcfg.vocab_size) if init is None else init.copy()
    ref = params.copy()
    mask = format_mask(cfg)
    history = TrainHistory()
    for t in range(tcfg.steps):
        old = params.copy()
        groups = []
        for i, task in enumerate(env.tasks(t, tcfg.batch_size)):
            rng = seeding.stream(tcfg.seed, seeding.ROLLOUTS, t, i)
            group = sample_group(old, task, cfg.G, rng, env, ref_params=ref, mask=mask,
                                 max_content=tcfg.max_content)
            scored = score_group([(tr.format, tr.correct, tr.n_tok) for tr in group.trajectories], t, cfg)
            group.scored = scored
            group.rewards = np.array([s.r_total for s in scored])
            group.advantages = np.array([s.advantage for s in scored])
            groups.append(group)

        first = None
        for _ in range(tcfg.inner_steps):
            value, grad, stats = fs_grpo_surrogate(params, old, ref, groups, cfg, tcfg.kl_mode, mask,
                                                   return_stats=True)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite objective at step {t}", history)
            if first is None:
                first = (value, stats)
            params = params + grad.scaled(tcfg.lr)
            if not params.is_finite():
                raise DivergenceError(f"non-finite parameters at step {t}", history)
        history.append(_record(t, groups, *first))
        if log.isEnabledFor(logging.DEBUG) and t % 20 == 0:
            log.debug("step %d reward %.3f usage %s", t, history.records[-1].mean_reward,
                      history.records[-1].usage)
    return TrainResult(params, ref, history)


def evaluate_policy(params: PolicyParams, env: SimEnv, cfg: RewardConfig, n_per_class: int = 1000,
                    seed: int = 0, max_content: int = 16) -> dict[str, list[tuple]]:
    """Sample ``n_per_class`` judged rollouts per task class from ``params``.

    Returns ``{class_name: [(format, correct, n_tok), ...]}``.
    """
    mask = format_mask(cfg)
    out = {}
    for c, spec in enumerate(env.specs):
        rng = seeding.stream(seed, seeding.EVAL, c)
        task_seed = int(rng.integers(2**31))
        rows = []
        for j in range(n_per_class):
            task = SyntheticTask(id=j, class_id=c, spec=spec, seed=task_seed)
            seq = sample_response(params, c, rng, mask, max_content)
            fmt = ResponseFormat(int(seq[0]) + 1)
            rows.append((fmt, env.judge(task, fmt, rng), env.sample_token_count(task, fmt, rng)))
        out[spec.name] = rows
    return out


def policy_format_table(params: PolicyParams, env: SimEnv, cfg: RewardConfig) -> dict[str, tuple]:
    mask = format_mask(cfg)
    return {spec.name: tuple(float(p) for p in format_probs(params, c, mask))
            for c, spec in enumerate(env.specs)}
