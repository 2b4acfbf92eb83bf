import numpy as np
import pytest

from feelopt.core import pipeline
from feelopt.core.errors import FitError, InfeasibleInstanceError
from feelopt.core.pipeline import (RunArtifact, median_rounds, prepare_data, probe_seeds,
                                   rate_check, run_pipeline, run_probes, simulate_sweep,
                                   simulated_argmin, sweep_seeds)
from feelopt.core.scenario import sample_scenario
from feelopt.core.trainer import LossTrace

from .helpers import fit_from_h


def test_prepare_data_shapes(small_config):
    data = prepare_data(small_config)
    assert len(data.shards) == 3
    assert all(len(s) == 200 for s in data.shards)
    assert len(data.validation) == 150
    assert data.true_model.shape == (64,)


def test_prepare_data_is_deterministic(small_config):
    first = prepare_data(small_config)
    second = prepare_data(small_config)
    for a, b in zip(first.shards, second.shards):
        assert np.array_equal(a.features, b.features)


def test_probes_use_configured_levels(small_config):
    first, second = run_probes(small_config, prepare_data(small_config))
    assert (first.q, second.q) == (2, 8)
    assert first.rounds == second.rounds == 30


def test_fit_levels_average_every_seed(small_config, monkeypatch):
    calls = []

    def counting(shards, q, rounds, schedule, batch_size, lam, seed, **kwargs):
        calls.append((q, seed))
        return LossTrace([1.0] + [0.5 + 0.01 * len(calls)] * rounds, q, seed)

    monkeypatch.setattr(pipeline, "run_feel", counting)
    first, second = run_probes(small_config, prepare_data(small_config))

    assert small_config.probe_seeds == 5
    assert [q for q, _ in calls] == [2] * 5 + [8] * 5
    seeds = [seed for _, seed in calls]
    assert seeds[:5] == seeds[5:] == probe_seeds(small_config)
    assert len(set(seeds[:5])) == 5
    assert first.losses[1] == pytest.approx(0.53)
    assert second.losses[1] == pytest.approx(0.58)


@pytest.mark.parametrize("counts, expected", [
    ([7], 7),
    ([3, None, 5], 5),
    ([None, None, 4], None),
    ([8, 2, 6, 4], 6),
])
def test_median_rounds(counts, expected):
    assert median_rounds(counts) == expected


def test_simulated_argmin():
    rows = [
        {"q": 2, "T_optimal_s": 30.0},
        {"q": 4, "T_optimal_s": 20.0},
        {"q": 8, "T_optimal_s": None},
    ]
    assert simulated_argmin(rows) == 4
    assert simulated_argmin([{"q": 2, "T_optimal_s": None}]) is None


def test_rate_check_agrees(small_config):
    profiles, _ = sample_scenario(small_config)
    rows = rate_check(profiles, small_config.network())
    assert len(rows) == 3
    assert all(row["relative_error"] < 1e-6 for row in rows)


def test_sweep_optimal_split_never_slower(small_config):
    data = prepare_data(small_config)
    profiles, _ = sample_scenario(small_config)
    fit = fit_from_h(d=small_config.dimension, num_devices=small_config.num_devices)

    rows = simulate_sweep(small_config, data, profiles, fit)
    assert [row["q"] for row in rows] == [2, 4, 8]
    for row in rows:
        assert 0 <= row["seeds_reached"] <= small_config.sweep_seeds
        assert row["T_d_optimal_s"] <= row["T_d_equal_s"] * (1 + 1e-9)
        if row["rounds"] is None:
            assert row["T_optimal_s"] is None
        else:
            assert row["T_optimal_s"] == row["rounds"] * row["T_d_optimal_s"]


def test_sweep_shares_seeds_and_adds_levels(small_config, monkeypatch):
    fit = fit_from_h(d=small_config.dimension, num_devices=small_config.num_devices)
    seen = {}

    def scripted(shards, q, rounds, schedule, batch_size, lam, seed, target_loss=None, **kwargs):
        seen.setdefault(q, []).append(seed)
        if q == 5:
            return LossTrace([1.0] * 10, q, seed)
        return LossTrace([1.0] * (10 + q) + [fit.Z], q, seed)

    monkeypatch.setattr(pipeline, "run_feel", scripted)
    profiles, _ = sample_scenario(small_config)
    rows = simulate_sweep(small_config, prepare_data(small_config), profiles, fit,
                          extra_levels=(1, 3, 4, 5))

    assert [row["q"] for row in rows] == [2, 3, 4, 5, 8]
    assert all(seeds == sweep_seeds(small_config) for seeds in seen.values())
    by_q = {row["q"]: row for row in rows}
    assert by_q[3]["rounds"] == 13
    assert by_q[3]["seeds_reached"] == 5
    assert by_q[5]["rounds"] is None
    assert by_q[5]["seeds_reached"] == 0
    assert by_q[5]["T_optimal_s"] is None


def test_optimize_failure_keeps_partial_results(small_config, monkeypatch):
    def refuse(*_args, **_kwargs):
        raise InfeasibleInstanceError("no split fits the budget")

    monkeypatch.setattr(pipeline, "optimize_plan", refuse)
    artifact = RunArtifact(small_config)
    with pytest.raises(InfeasibleInstanceError):
        run_pipeline(small_config, artifact, with_sweep=False)

    assert artifact.failure == "InfeasibleInstanceError: no split fits the budget"
    assert artifact.fit is not None
    assert artifact.fit.A > 0 and artifact.fit.B > 0
    assert len(artifact.check_traces) == 1
    assert artifact.plan is None
    assert len(artifact.traces) == 2
    assert len(artifact.profiles) == 3
    assert "scenario_s" in artifact.timing


def test_fit_failure_keeps_training_traces(small_config, monkeypatch):
    def reject(*_args, **_kwargs):
        raise FitError("no feasible Z on the search grid")

    monkeypatch.setattr(pipeline, "fit_probes", reject)
    artifact = RunArtifact(small_config)
    with pytest.raises(FitError):
        run_pipeline(small_config, artifact)

    assert artifact.failure == "FitError: no feasible Z on the search grid"
    assert [t.q for t in artifact.traces] == [2, 8]
    assert artifact.fit is None
    assert artifact.check_traces == []
    assert artifact.sweep == []
    assert "probes_s" in artifact.timing


@pytest.mark.slow
def test_pipeline_is_deterministic(small_config):
    first = run_pipeline(small_config)
    second = run_pipeline(small_config)

    assert first.failure is None and second.failure is None
    assert [t.losses for t in first.traces] == [t.losses for t in second.traces]
    assert first.fit == second.fit
    assert first.plan.to_dict() == second.plan.to_dict()
    assert first.sweep == second.sweep


@pytest.mark.slow
def test_pipeline_produces_consistent_plan(small_config):
    artifact = run_pipeline(small_config)

    assert artifact.failure is None
    assert artifact.plan.q >= 2
    assert artifact.oracle_best.q in range(2, small_config.oracle_q_max + 1)
    assert len(artifact.check_traces) == 1
    assert artifact.plan.bandwidths_hz.sum() == pytest.approx(
        small_config.total_bandwidth_hz, rel=1e-6)

    q = artifact.plan.q
    expected = sorted({2, 4, 8, q, q + 1} | ({q - 1} if q > 2 else set()))
    assert [row["q"] for row in artifact.sweep] == expected
