"""Run configuration: INI files with ``[reward]``, ``[train]`` and ``[env.<class>]``
sections, or the JSON manifest written by a previous run.

Example::

    [reward]
    f = 0, 0.3, 0.5
    L = 300
    diversity_enabled = true

    [train]
    steps = 200
    seed = 0

    [env.reasoning_intensive]
    tok_mean = 280, 150, 10
    weight = 1
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .env import TaskClassSpec, apply_env_overrides, default_specs
from .formats import ResponseFormat
from .rewards import RewardConfig
from .trainer import TrainerConfig


@dataclass(frozen=True)
class RunConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    specs: tuple[TaskClassSpec, ...] = field(default_factory=lambda: tuple(default_specs()))
    weights: tuple[float, ...] | None = None
    eval_samples: int = 1000

    def to_dict(self) -> dict:
        reward = asdict(self.reward)
        reward["enabled_formats"] = [int(k) for k in self.reward.enabled_formats]
        return {
            "reward": reward,
            "trainer": asdict(self.trainer),
            "env": [asdict(s) for s in self.specs],
            "weights": list(self.weights) if self.weights is not None else None,
            "eval_samples": self.eval_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        reward = dict(d["reward"])
        reward["f"] = tuple(reward["f"])
        reward["enabled_formats"] = tuple(ResponseFormat(k) for k in reward["enabled_formats"])
        return cls(
            reward=RewardConfig(**reward),
            trainer=TrainerConfig(**d["trainer"]),
            specs=tuple(TaskClassSpec(**s) for s in d["env"]),
            weights=tuple(d["weights"]) if d.get("weights") is not None else None,
            eval_samples=int(d.get("eval_samples", 1000)),
        )


def _coerce(raw: str, proto):
    if isinstance(proto, bool):
        if raw.strip().lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(proto, int):
        return int(raw)
    if isinstance(proto, float):
        return float(raw)
    return raw.strip()


def _section(parser, name: str, obj):
    if not parser.has_section(name):
        return {}
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    out = {}
    for key, raw in parser[name].items():
        if key not in known:
            raise ValueError(f"unknown key {key!r} in [{name}]")
        if key == "f":
            out[key] = tuple(float(x) for x in raw.split(","))
        elif key == "enabled_formats":
            out[key] = tuple(ResponseFormat.parse(x) for x in raw.split(","))
        else:
            out[key] = _coerce(raw, known[key])
    return out


def parse_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    # keys are case sensitive (L, G, T)
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(text)
    base = base or RunConfig()
    trainer = replace(base.trainer, **_section(parser, "train", base.trainer))
    reward_kw = _section(parser, "reward", base.reward)
    if "T" not in reward_kw:
        reward_kw["T"] = max(trainer.steps, 1)
    reward = replace(base.reward, **reward_kw)
    specs, weights = apply_env_overrides(parser, base.specs, prefix="env.")
    eval_samples = base.eval_samples
    if parser.has_option("eval", "samples"):
        eval_samples = parser.getint("eval", "samples")
    has_weights = any(parser.has_option(s, "weight") for s in parser.sections() if s.startswith("env."))
    return RunConfig(reward, trainer, tuple(specs), weights if has_weights else base.weights, eval_samples)


def load_config(path: str | Path | None, base: RunConfig | None = None) -> RunConfig:
    """INI config or a manifest JSON (whose ``"config"`` entry is used)."""
    if path is None:
        return base or RunConfig()
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return RunConfig.from_dict(data.get("config", data))
    return parse_ini(text, base)
