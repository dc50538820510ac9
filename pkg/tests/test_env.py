import numpy as np
import pytest

from formatlab import seeding
from formatlab.env import (SimEnv, SyntheticTask, TaskClassSpec, default_specs, expected_reward_oracle,
                           judge, load_env_config, oracle_best_format, sample_token_count)
from formatlab.formats import ResponseFormat
from formatlab.rewards import RewardConfig, length_scale

F, P, D = ResponseFormat.FULL, ResponseFormat.PERCEPTION_ONLY, ResponseFormat.DIRECT
HALF = TaskClassSpec("general", (0.5, 0.5, 0.5), (500, 150, 10), (100, 50, 3))


def test_table_accuracies():
    specs = {s.name: s for s in default_specs()}
    assert specs["perception_intensive"].p_correct == (0.752, 0.903, 0.862)
    assert specs["reasoning_intensive"].p_correct == (0.437, 0.426, 0.354)
    assert specs["general"].p_correct == (0.611, 0.592, 0.556)


def test_spec_validation():
    with pytest.raises(ValueError):
        TaskClassSpec("x", (1.2, 0.5, 0.5))
    with pytest.raises(ValueError):
        TaskClassSpec("x", (0.5, 0.5, 0.5), tok_mean=(10, 150, 5))


def test_judge_extremes():
    rng = seeding.stream(0)
    sure = SyntheticTask(0, 0, TaskClassSpec("x", (1.0, 0.0, 0.5)), 0)
    assert all(judge(sure, F, rng) for _ in range(200))
    assert not any(judge(sure, P, rng) for _ in range(200))


def test_judge_golden_sequence():
    task = SyntheticTask(0, 0, HALF, 0)
    rng = seeding.stream(0)
    got = [judge(task, F, rng) for _ in range(10)]
    assert got == [False, True, True, True, False, False, False, False, False, False]


def test_token_count_examples():
    rng = seeding.stream(0)
    assert sample_token_count(TaskClassSpec("x", (1, 1, 1), (10, 10, 10), 0), D, rng) == 10
    tiny = TaskClassSpec("x", (1, 1, 1), (1, 1, 1), 5)
    assert min(sample_token_count(tiny, D, rng) for _ in range(500)) >= 1
    assert sample_token_count(HALF, F, seeding.stream(0)) == 570


def test_task_stream_golden_and_deterministic():
    env = SimEnv(seed=0)
    assert [t.class_id for t in env.tasks(0, 8)] == [2, 1, 1, 1, 0, 2, 0, 2]
    assert env.tasks(5, 16) == SimEnv(seed=0).tasks(5, 16)
    assert env.tasks(5, 16) != SimEnv(seed=1).tasks(5, 16)
    ids = [t.id for s in range(3) for t in env.tasks(s, 16)]
    assert len(set(ids)) == len(ids)


def test_mixture_weights():
    env = SimEnv(weights=(1, 0, 0), seed=3)
    assert {t.class_id for t in env.tasks(0, 50)} == {0}
    with pytest.raises(ValueError):
        SimEnv(weights=(1, -1, 0))


@pytest.mark.parametrize("p", [0.1, 0.437, 0.5, 0.903])
def test_calibration(p):
    task = SyntheticTask(0, 0, TaskClassSpec("x", (p, p, p)), 0)
    rng = seeding.stream(7, 99)
    freq = np.mean([judge(task, F, rng) for _ in range(10_000)])
    assert abs(freq - p) <= 0.02


def test_oracle_trivial_branches():
    cfg = RewardConfig(diversity_enabled=False)
    certain = TaskClassSpec("x", (1.0, 1.0, 1.0), (100, 50, 10), (0, 0, 0))
    for k in ResponseFormat:
        assert expected_reward_oracle(certain, k, cfg, 0) == 1 + cfg.bonus(k)
    hopeless = TaskClassSpec("x", (0.0, 0.0, 0.0), (500, 150, 10), (100, 50, 3))
    es = np.mean([length_scale(n, 300) for n in range(400, 601)])
    assert expected_reward_oracle(hopeless, F, cfg, 0) == pytest.approx(-0.0 * es)
    assert expected_reward_oracle(hopeless, D, cfg, 0) == pytest.approx(-0.5)


def _monte_carlo(spec, k, cfg, t, n, rng):
    """Direct simulation: one rollout of format k plus G-1 uniform rollouts."""
    i = int(k) - 1
    others = rng.integers(0, 3, size=(n, cfg.G - 1))
    c_k = 1 + (others == i).sum(axis=1)
    correct = rng.random(n) < spec.p_correct[i]
    lo, hi = spec.tok_mean[i] - spec.tok_jitter[i], spec.tok_mean[i] + spec.tok_jitter[i]
    n_tok = np.maximum(rng.integers(lo, hi + 1, size=n), 1)
    s_L = np.where(n_tok <= cfg.L, 1.0, cfg.L / n_tok)
    r_f = np.where(correct, 1 + cfg.f[i], -cfg.f[i])
    d = 0.5 * (1 + np.cos(np.pi * t / cfg.T)) if cfg.diversity_enabled else 0.0
    return float(np.mean(s_L * (r_f + d * (1 - c_k / cfg.G))))


@pytest.mark.parametrize("spec", default_specs(tok_mean=(500, 150, 10)) + default_specs(),
                         ids=lambda s: f"{s.name}-{s.tok_mean[0]}")
def test_oracle_matches_monte_carlo(spec):
    cfg = RewardConfig()
    rng = seeding.stream(11, 5)
    for t in (0, 100):
        for k in ResponseFormat:
            mc = _monte_carlo(spec, k, cfg, t, 100_000, rng)
            assert abs(mc - expected_reward_oracle(spec, k, cfg, t)) <= 0.01


def test_oracle_argmax_with_table_values():
    cfg = RewardConfig()
    best = {s.name: oracle_best_format(s, cfg) for s in default_specs()}
    assert best == {"perception_intensive": D, "reasoning_intensive": F, "general": P}


def test_oracle_argmax_with_500_token_full_responses():
    # short formats never exceed L, so by hand at t=T:
    #   perception-only 0.903*1.3 - 0.097*0.3 = 1.1448,  direct 0.862*1.5 - 0.138*0.5 = 1.2240
    # and at tok_mean 500 the length penalty also costs Full the reasoning class
    cfg = RewardConfig()
    specs = {s.name: s for s in default_specs(tok_mean=(500, 150, 10))}
    perc = specs["perception_intensive"]
    assert expected_reward_oracle(perc, P, cfg, cfg.T) == pytest.approx(1.1448, abs=1e-12)
    assert expected_reward_oracle(perc, D, cfg, cfg.T) == pytest.approx(1.2240, abs=1e-12)
    assert oracle_best_format(perc, cfg) == D
    assert oracle_best_format(specs["reasoning_intensive"], cfg) == P


def test_oracle_uses_supplied_policy():
    cfg = RewardConfig()
    spec = default_specs()[0]
    # when every other rollout is Direct, a Direct rollout earns no diversity bonus
    all_d = expected_reward_oracle(spec, D, cfg, 0, policy=(0, 0, 1))
    assert all_d == pytest.approx(0.862 * 1.5 - 0.138 * 0.5)


def test_env_config_file(tmp_path):
    path = tmp_path / "env.ini"
    path.write_text("[reasoning_intensive]\np_correct = 0.9, 0.1, 0.1\nweight = 2\n\n[other]\nx = 1\n")
    specs, weights = load_env_config(path)
    assert specs[1].p_correct == (0.9, 0.1, 0.1)
    assert specs[0] == default_specs()[0]
    assert weights == (1.0, 2.0, 1.0)
