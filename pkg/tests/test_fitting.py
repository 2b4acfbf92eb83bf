import math

import numpy as np
import pytest

from feelopt.core.errors import DegenerateTraceError, FitError, InfeasibleZError, InvalidInputError
from feelopt.core.fitting import (FitDerived, GapFit, alpha, fit_gap_model, fit_xy_given_z,
                                  fitted_losses, gap_objective, predict_gap, recover_parameters,
                                  rounds_needed, z_grid)
from feelopt.core.trainer import LossTrace

from .helpers import EPSILON, H1, H2, fit_from_h

D = 1024
K = 6


def model_trace(A, B, C, D_, Z, q, rounds=100, d=D, num_devices=K):
    """Loss trace following Z + U(n) exactly, round 0 included."""

    factor = alpha(q, num_devices, d)
    n = np.arange(0, rounds + 1, dtype=float)
    losses = Z + (factor * A + D_) / (n + factor * B + C)
    return LossTrace(losses.tolist(), q, seed=0)


def test_alpha():
    assert alpha(4, 6, 1024) == pytest.approx(32 / 24 + 1)


def test_xy_exact_on_model_trace():
    n = np.arange(1, 101)
    losses = 0.25 + 50.0 / (n + 10.0)

    x, y = fit_xy_given_z(losses, 0.25)
    assert x == pytest.approx(50.0, rel=1e-8)
    assert y == pytest.approx(10.0, rel=1e-8)
    assert gap_objective(losses, 0.25, x, y) == pytest.approx(0.0, abs=1e-16)


def test_xy_robust_to_small_noise():
    n = np.arange(1, 101)
    noise = np.random.default_rng(0).normal(0.0, 1e-3, size=100)
    losses = 0.25 + 50.0 / (n + 10.0) + noise

    x, y = fit_xy_given_z(losses, 0.25)
    assert x == pytest.approx(50.0, rel=0.05)
    assert y == pytest.approx(10.0, rel=0.05)


def test_constant_trace_is_degenerate():
    with pytest.raises(DegenerateTraceError):
        fit_xy_given_z(np.full(100, 0.5), 0.25)


def test_short_trace_is_degenerate():
    with pytest.raises(DegenerateTraceError):
        fit_xy_given_z(np.array([0.5, 0.4]), 0.25)


def test_z_above_samples_is_infeasible():
    with pytest.raises(InfeasibleZError):
        fit_xy_given_z(np.array([0.5, 0.4, 0.3]), 0.35)


def test_recover_parameters_exact():
    a1, a2 = alpha(4, K, D), alpha(6, K, D)
    A, B, C, D_ = 2.0, 5.0, 3.0, 1.0
    recovered = recover_parameters(a1 * A + D_, a1 * B + C, a2 * A + D_, a2 * B + C, a1, a2)
    assert recovered == pytest.approx((A, B, C, D_), rel=1e-12)


def test_recover_parameters_clamps_negative_offsets():
    a1, a2 = 3.0, 2.0
    a, b, c, d = recover_parameters(5.99, 15.0, 3.99, 10.0, a1, a2)
    assert d == 0.0
    assert a == pytest.approx((a1 * 5.99 + a2 * 3.99) / (a1 ** 2 + a2 ** 2))
    assert c == pytest.approx(0.0, abs=1e-12)


def test_recover_parameters_rejects_equal_levels():
    with pytest.raises(InvalidInputError):
        recover_parameters(1.0, 1.0, 1.0, 1.0, 2.0, 2.0)


def test_recover_parameters_rejects_negative_slope():
    with pytest.raises(FitError):
        recover_parameters(1.0, 5.0, 2.0, 3.0, 3.0, 2.0)


def test_gap_model_recovered_from_model_traces():
    rng = np.random.default_rng(10)
    grid = np.linspace(0.0, 0.3, 301)
    for _ in range(10):
        A = rng.uniform(1.0, 5.0)
        B = rng.uniform(1.0, 20.0)
        C = rng.uniform(0.5, 10.0)
        D_ = rng.uniform(0.1, 2.0)
        Z = float(grid[rng.integers(100, 280)])

        first = model_trace(A, B, C, D_, Z, 4)
        second = model_trace(A, B, C, D_, Z, 6)
        fit = fit_gap_model(first, second, D, K, z_values=grid)

        assert fit.Z == pytest.approx(Z, abs=1e-9)
        assert (fit.A, fit.B, fit.C, fit.D) == pytest.approx((A, B, C, D_), rel=1e-6)
        assert (fit.q1, fit.q2, fit.N_tilde, fit.d, fit.K) == (4, 6, 100, D, K)


def test_gap_model_default_grid_is_optimal():
    first = model_trace(2.0, 5.0, 3.0, 1.0, 0.247, 4)
    second = model_trace(2.0, 5.0, 3.0, 1.0, 0.247, 6)
    fit = fit_gap_model(first, second, D, K)

    windows = (first.fit_window(100), second.fit_window(100))
    step = min(float(w.min()) for w in windows) / 2000
    assert fit.Z == pytest.approx(0.247, abs=step)

    for z in z_grid(windows)[::50]:
        total = 0.0
        for window in windows:
            try:
                x, y = fit_xy_given_z(window, z)
            except FitError:
                total = math.inf
                break
            total += gap_objective(window, z, x, y)
        assert fit.objective <= total + 1e-15


def test_gap_model_rejects_equal_levels():
    trace = model_trace(2.0, 5.0, 3.0, 1.0, 0.25, 4)
    with pytest.raises(InvalidInputError):
        fit_gap_model(trace, trace, D, K)


def test_gap_model_needs_feasible_grid():
    first = model_trace(2.0, 5.0, 3.0, 1.0, 0.25, 4)
    second = model_trace(2.0, 5.0, 3.0, 1.0, 0.25, 6)
    with pytest.raises(FitError):
        fit_gap_model(first, second, D, K, z_values=np.array([5.0, 6.0]))


def test_gap_model_rejects_z_with_non_positive_slope():
    # levels swapped: the coarser probe converges faster, so A and B come out negative
    coarse = model_trace(2.0, 5.0, 3.0, 1.0, 0.247, 6)
    fine = model_trace(2.0, 5.0, 3.0, 1.0, 0.247, 4)
    first = LossTrace(coarse.losses, 4, seed=0)
    second = LossTrace(fine.losses, 6, seed=0)

    with pytest.raises(FitError, match="positive A and B"):
        fit_gap_model(first, second, D, K, z_values=np.array([0.247]))


def test_fit_json_round_trip(reference_fit):
    assert GapFit.from_dict(reference_fit.to_dict()) == reference_fit
    assert set(reference_fit.to_dict()) >= {"A", "B", "C", "D", "Z", "q1", "q2", "N_tilde", "d", "K"}


def test_malformed_fit_document():
    with pytest.raises(FitError):
        GapFit.from_dict({"A": 1.0})


def test_derived_coefficients(reference_fit):
    derived = reference_fit.derive(EPSILON)
    assert derived.H1 == pytest.approx(H1)
    assert derived.H2 == pytest.approx(H2)


def test_derive_rejects_large_epsilon():
    fit = GapFit(A=2.0, B=5.0, C=3.0, D=1.0, Z=0.2, q1=4, q2=6, N_tilde=100, d=D, K=K)
    with pytest.raises(FitError):
        fit.derive(10.0)


def test_rounds_needed_reference_value(reference_fit):
    derived = FitDerived(H1, H2, EPSILON)
    assert math.ceil(derived.approx_rounds(4, K, D)) == 107
    assert rounds_needed(reference_fit, 4, EPSILON) == 107


def test_rounds_needed_large_q_limit():
    fit = GapFit(A=2.0, B=5.0, C=3.0, D=1.1, Z=0.2, q1=4, q2=6, N_tilde=100, d=D, K=K)
    limit = math.ceil((fit.A + fit.D) / EPSILON - fit.B - fit.C)
    assert rounds_needed(fit, 10 ** 12, EPSILON) == limit


def test_rounds_needed_monotone():
    fit = GapFit(A=2.0, B=5.0, C=3.0, D=1.0, Z=0.2, q1=4, q2=6, N_tilde=100, d=D, K=K)
    by_q = [rounds_needed(fit, q, EPSILON) for q in range(2, 65)]
    by_k = [rounds_needed(fit, 4, EPSILON, num_devices=k) for k in range(1, 20)]

    assert all(a >= b for a, b in zip(by_q, by_q[1:]))
    assert all(a >= b for a, b in zip(by_k, by_k[1:]))
    assert rounds_needed(fit, 4, 2 * EPSILON) <= rounds_needed(fit, 4, EPSILON)


def test_rounds_needed_reaches_epsilon():
    fit = GapFit(A=2.0, B=5.0, C=3.0, D=1.0, Z=0.2, q1=4, q2=6, N_tilde=100, d=D, K=K)
    for q in (2, 4, 8, 16):
        n = rounds_needed(fit, q, EPSILON)
        assert predict_gap(fit, q, n) <= EPSILON


def test_rounds_needed_for_trivial_epsilon():
    fit = GapFit(A=2.0, B=5.0, C=3.0, D=1.0, Z=0.2, q1=4, q2=6, N_tilde=100, d=D, K=K)
    assert rounds_needed(fit, 4, 100.0) == 1


def test_predict_gap_limits():
    fit = GapFit(A=2.0, B=5.0, C=3.0, D=1.0, Z=0.2, q1=4, q2=6, N_tilde=100, d=D, K=K)
    assert predict_gap(fit, 4, 1e9) < 1e-6
    assert predict_gap(fit, 1e15, 50) == pytest.approx((fit.A + fit.D) / (50 + fit.B + fit.C))

    gaps = [predict_gap(fit, q, 50) for q in range(2, 65)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_fitted_losses_follow_model():
    fit = GapFit(A=2.0, B=5.0, C=3.0, D=1.0, Z=0.2, q1=4, q2=6, N_tilde=100, d=D, K=K)
    trace = model_trace(2.0, 5.0, 3.0, 1.0, 0.2, 8, rounds=20)
    np.testing.assert_allclose(fitted_losses(fit, 8, 20), trace.fit_window(), rtol=1e-12)


def test_fit_from_helper_matches_reference_arithmetic():
    fit = fit_from_h()
    assert fit.B == 0.0 and fit.C == 0.0
    assert fit.A > 0 and fit.D > 0
