"""
Training-time minimization over the quantization level and the bandwidth split.

The total time is N_eps(q) * T_d. With q fixed, the best split makes every
device finish at the same deadline T_d, found by a two-layer bisection (outer
on T_d, inner on each device's bandwidth). With the split fixed, q is
improved by successive convex approximation of the per-device time bound.
The two steps alternate until the total time settles, then q is rounded to
an integer.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Final, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import DeviceProfile, NetworkConfig, compute_time, ergodic_rate, invert_rate
from .errors import InfeasibleInstanceError, InvalidInputError, NonConvergenceError
from .fitting import FitDerived, GapFit, rounds_needed
from .quantizer import payload_bits

logger = logging.getLogger(__name__)

Q_MIN: Final[float] = 2.0
Q_MAX: Final[float] = 4096.0
Q_INIT: Final[float] = 8.0

BUDGET_RTOL: Final[float] = 1e-6
TIME_TOL_S: Final[float] = 1e-6
LOW_BANDWIDTH_FRACTION: Final[float] = 1e-6
BANDWIDTH_WIDEN_STEPS: Final[int] = 60
DEADLINE_MAX_ITER: Final[int] = 200
SCA_MAX_ITER: Final[int] = 200
ALTERNATION_MAX_ITER: Final[int] = 100
SURROGATE_XATOL: Final[float] = 1e-9


@dataclass(frozen=True)
class BandwidthAllocation:
    """Bandwidth per device and the common round deadline it achieves."""

    bandwidths_hz: np.ndarray
    round_deadline_s: float


@dataclass(frozen=True)
class ScaState:
    q_current: float
    T_tilde: float
    iteration: int


@dataclass
class AllocationPlan:
    """Integer quantization level, bandwidth split and the predicted training time."""

    q: int
    bandwidths_hz: np.ndarray
    round_deadline_s: float
    predicted_rounds: int
    predicted_total_s: float = field(init=False)
    q_continuous: Optional[float] = None
    history: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.predicted_total_s = self.predicted_rounds * self.round_deadline_s

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "q": int(self.q),
            "b_hz": [float(b) for b in self.bandwidths_hz],
            "T_d_s": float(self.round_deadline_s),
            "N_eps": int(self.predicted_rounds),
            "T_total_s": float(self.predicted_total_s),
        }
        if self.q_continuous is not None:
            data["q_continuous"] = float(self.q_continuous)

        return data


def _thetas(profiles: Sequence[DeviceProfile], net: NetworkConfig) -> np.ndarray:
    return np.array([p.theta(net.noise_psd_w_per_hz) for p in profiles])


def _compute_times(profiles: Sequence[DeviceProfile]) -> np.ndarray:
    return np.array([compute_time(p) for p in profiles])


def device_latencies(profiles: Sequence[DeviceProfile], net: NetworkConfig,
                     bandwidths_hz: np.ndarray, s_bits: float) -> np.ndarray:
    """Compute plus upload time of every device for one round."""

    rates = np.asarray(ergodic_rate(np.asarray(bandwidths_hz, dtype=float), _thetas(profiles, net)))
    return _compute_times(profiles) + s_bits / rates


def _bandwidth_for_deadline(deadline: float, compute_s: np.ndarray, thetas: np.ndarray,
                            s_bits: float, total_hz: float) -> np.ndarray:
    """
    Bandwidth each device needs to finish exactly at the deadline.

    Devices that cannot make it even with the whole band get infinity.
    """

    needed = np.full(compute_s.shape, np.inf)
    slack = deadline - compute_s
    usable = slack > 0
    if not np.any(usable):
        return needed

    target = np.full(compute_s.shape, np.inf)
    target[usable] = s_bits / slack[usable]

    cap = np.asarray(ergodic_rate(np.full(compute_s.shape, total_hz), thetas))
    fits = usable & (target <= cap)
    if not np.any(fits):
        return needed

    lo = np.full(int(fits.sum()), LOW_BANDWIDTH_FRACTION * total_hz)
    for _ in range(BANDWIDTH_WIDEN_STEPS):
        too_fast = np.asarray(ergodic_rate(lo, thetas[fits])) > target[fits]
        if not np.any(too_fast):
            break
        lo[too_fast] *= 1e-3

    needed[fits] = invert_rate(target[fits], thetas[fits], (lo, np.full(lo.shape, total_hz)))
    return needed


def allocate_bandwidth(profiles: Sequence[DeviceProfile], net: NetworkConfig, s_bits: float,
                       tol: Optional[float] = None) -> BandwidthAllocation:
    """
    Bandwidth split that minimizes the round deadline for a fixed payload.

    Outer bisection on T_d between max_k T_k^comp and
    max_k (T_k^comp + S / R_k(B0 / K)); for each T_d the inner bisection
    gives b_k with T_k^comp + S / R_k(b_k) = T_d. Stops once the bandwidths
    sum to B0 within tol.

    Args:
        profiles: Devices taking part.
        net: Network parameters (B0, N0).
        s_bits: Upload size per device per round.
        tol: Budget tolerance in Hz, defaults to 1e-6 * B0.

    Returns:
        BandwidthAllocation with every device finishing at the deadline.
    """

    if not profiles:
        raise InvalidInputError("need at least one device")

    if not s_bits > 0:
        raise InvalidInputError("payload must be positive")

    total_hz = net.total_bandwidth_hz
    tol = BUDGET_RTOL * total_hz if tol is None else tol
    compute_s = _compute_times(profiles)
    thetas = _thetas(profiles, net)

    # the optimum sits on the upper bracket end, which bisection never reaches
    if len(profiles) == 1:
        deadline = float(compute_s[0] + s_bits / ergodic_rate(total_hz, float(thetas[0])))
        return BandwidthAllocation(np.array([total_hz]), deadline)

    equal_share = np.full(len(profiles), total_hz / len(profiles))
    lower = float(np.max(compute_s))
    upper = float(np.max(compute_s + s_bits / np.asarray(ergodic_rate(equal_share, thetas))))
    if not math.isfinite(upper) or upper <= lower:
        raise InfeasibleInstanceError("round deadline bracket is empty")

    for iteration in range(DEADLINE_MAX_ITER):
        deadline = 0.5 * (lower + upper)
        bandwidths = _bandwidth_for_deadline(deadline, compute_s, thetas, s_bits, total_hz)
        used = float(np.sum(bandwidths))

        if abs(used - total_hz) <= tol:
            logger.debug("deadline %.6g s after %d bisection steps", deadline, iteration + 1)
            return BandwidthAllocation(bandwidths, deadline)

        if used > total_hz:
            lower = deadline
        else:
            upper = deadline

    raise InfeasibleInstanceError(
        f"bandwidth budget not met within {DEADLINE_MAX_ITER} bisection steps")


@dataclass(frozen=True)
class QuantizationProblem:
    """
    Continuous-q subproblem with the bandwidths (hence the rates) fixed.

    J_k(q) = ln(T_k^comp + S(q) / R_k) + ln(q K H2 + H1 sqrt(d)) is concave in
    q, and J_k(q) - ln(q K) is the log of device k's share of the total time.
    """

    compute_s: np.ndarray
    rates: np.ndarray
    d: int
    derived: FitDerived
    q_max: float = Q_MAX

    @classmethod
    def build(cls, profiles: Sequence[DeviceProfile], net: NetworkConfig,
              bandwidths_hz: np.ndarray, derived: FitDerived, d: int,
              q_max: float = Q_MAX) -> 'QuantizationProblem':
        rates = np.asarray(ergodic_rate(np.asarray(bandwidths_hz, dtype=float),
                                        _thetas(profiles, net)))
        return cls(_compute_times(profiles), rates, d, derived, q_max)

    @property
    def num_devices(self) -> int:
        return int(self.rates.shape[0])

    def per_round(self, q: float) -> np.ndarray:
        return self.compute_s + payload_bits(self.d, q) / self.rates

    def total_time(self, q: float) -> float:
        """max_k per-round time times the ceiling-free N_eps."""

        rounds = self.derived.approx_rounds(q, self.num_devices, self.d)
        return float(np.max(self.per_round(q))) * rounds

    def concave_part(self, q: float) -> np.ndarray:
        spread = q * self.num_devices * self.derived.H2 + self.derived.H1 * math.sqrt(self.d)
        return np.log(self.per_round(q)) + math.log(spread)

    def concave_slope(self, q: float) -> np.ndarray:
        k, h1, h2 = self.num_devices, self.derived.H1, self.derived.H2
        rounds_term = k * h2 / (q * k * h2 + h1 * math.sqrt(self.d))
        upload_term = 1.0 / (math.log(2.0) * (1.0 + q)
                             * (math.log2(1.0 + q) + self.rates * self.compute_s / self.d + 1.0))
        return rounds_term + upload_term

    def surrogate_log(self, q: float, anchor: float) -> float:
        """log of the convex upper bound on the total time, linearized at anchor."""

        bound = self.concave_part(anchor) + self.concave_slope(anchor) * (q - anchor)
        return float(np.max(bound)) - math.log(q * self.num_devices)


def sca_step(problem: QuantizationProblem, q_r: float) -> ScaState:
    """
    One successive convex approximation step.

    Linearizes every J_k at q_r and minimizes max_k exp(J_hat_k(q) - ln(q K))
    over [2, q_max]; each exponent is affine minus log, so the bounded scalar
    search finds the global minimum of the surrogate.
    """

    if q_r < Q_MIN:
        raise InvalidInputError(f"expansion point must be >= {Q_MIN}, got {q_r}")

    result = minimize_scalar(lambda q: problem.surrogate_log(q, q_r), bounds=(Q_MIN, problem.q_max),
                             method="bounded", options={"xatol": SURROGATE_XATOL})

    # the anchor and the box ends guard against a slightly inexact scalar search
    candidates = [float(result.x), float(q_r), Q_MIN, float(problem.q_max)]
    values = [problem.surrogate_log(q, q_r) for q in candidates]
    best = int(np.argmin(values))
    return ScaState(candidates[best], math.exp(values[best]), 0)


def solve_quantization(problem: QuantizationProblem, q0: float, tol: float = TIME_TOL_S,
                       max_iter: int = SCA_MAX_ITER,
                       history: Optional[List[ScaState]] = None) -> float:
    """
    Iterate SCA steps until the surrogate time changes by at most tol seconds.

    Returns:
        The stationary continuous quantization level.
    """

    q = max(float(q0), Q_MIN)
    previous = problem.total_time(q)

    for iteration in range(1, max_iter + 1):
        state = sca_step(problem, q)
        state = ScaState(state.q_current, state.T_tilde, iteration)
        if history is not None:
            history.append(state)

        q = state.q_current
        if abs(state.T_tilde - previous) <= tol:
            logger.debug("SCA converged to q=%.4f after %d steps", q, iteration)
            return q

        previous = state.T_tilde

    raise NonConvergenceError(f"SCA did not converge in {max_iter} steps", last_iterate=q)


def _round_deadline(profiles: Sequence[DeviceProfile], net: NetworkConfig,
                    bandwidths_hz: np.ndarray, d: int, q: float) -> float:
    return float(np.max(device_latencies(profiles, net, bandwidths_hz, payload_bits(d, q))))


def evaluate_plan(profiles: Sequence[DeviceProfile], net: NetworkConfig, fit: GapFit,
                  epsilon: float, q: int, bandwidths_hz: np.ndarray) -> AllocationPlan:
    """Plan for a given q and split; the deadline is the slowest device."""

    deadline = _round_deadline(profiles, net, bandwidths_hz, fit.d, q)
    rounds = rounds_needed(fit, q, epsilon, len(profiles), fit.d)
    return AllocationPlan(int(q), np.asarray(bandwidths_hz, dtype=float), deadline, rounds)


def equal_bandwidth_plan(profiles: Sequence[DeviceProfile], net: NetworkConfig, fit: GapFit,
                         epsilon: float, q: int) -> AllocationPlan:
    share = np.full(len(profiles), net.total_bandwidth_hz / len(profiles))
    return evaluate_plan(profiles, net, fit, epsilon, q, share)


def optimal_bandwidth_plan(profiles: Sequence[DeviceProfile], net: NetworkConfig, fit: GapFit,
                           epsilon: float, q: int) -> AllocationPlan:
    """Plan for a fixed integer q with the bandwidth split of allocate_bandwidth."""

    allocation = allocate_bandwidth(profiles, net, payload_bits(fit.d, q))
    rounds = rounds_needed(fit, q, epsilon, len(profiles), fit.d)
    return AllocationPlan(int(q), allocation.bandwidths_hz, allocation.round_deadline_s, rounds)


def brute_force(profiles: Sequence[DeviceProfile], net: NetworkConfig, fit: GapFit,
                epsilon: float, q_values: Iterable[int] = range(2, 65)
                ) -> Tuple[List[AllocationPlan], AllocationPlan]:
    """Optimal split for every integer q; returns all rows and the fastest plan."""

    rows = [optimal_bandwidth_plan(profiles, net, fit, epsilon, int(q)) for q in q_values]
    if not rows:
        raise InvalidInputError("no quantization levels to sweep")

    best = min(rows, key=lambda plan: (plan.predicted_total_s, plan.q))
    return rows, best


def joint_optimize(profiles: Sequence[DeviceProfile], net: NetworkConfig, fit: GapFit,
                   epsilon: float, tol: float = TIME_TOL_S, q0: float = Q_INIT,
                   q_max: float = Q_MAX, max_iter: int = ALTERNATION_MAX_ITER) -> AllocationPlan:
    """
    Alternate bandwidth allocation and quantization-level updates.

    Starts from q0 and an equal split. Each pass re-solves the split for
    the current q, then runs SCA on q with that split, until the total time
    moves by at most tol. The continuous level is rounded to the better of
    ceil(q) - 1 and ceil(q), each evaluated with its own optimal split and
    the ceiling of N_eps.

    Returns:
        The final AllocationPlan, with the alternation history attached.
    """

    if not profiles:
        raise InvalidInputError("need at least one device")

    num_devices = len(profiles)
    if fit.K != num_devices:
        logger.warning("fit was made with K=%d devices, optimizing for %d", fit.K, num_devices)

    derived = fit.derive(epsilon)
    d = fit.d

    def total_time(q: float, bandwidths: np.ndarray) -> float:
        return derived.approx_rounds(q, num_devices, d) * _round_deadline(profiles, net, bandwidths, d, q)

    q = min(max(float(q0), Q_MIN), q_max)
    bandwidths = np.full(num_devices, net.total_bandwidth_hz / num_devices)
    previous = total_time(q, bandwidths)
    history: List[Tuple[float, float]] = [(q, previous)]
    best_q, best_time = q, previous

    for iteration in range(max_iter):
        allocation = allocate_bandwidth(profiles, net, payload_bits(d, q))
        bandwidths = allocation.bandwidths_hz
        problem = QuantizationProblem.build(profiles, net, bandwidths, derived, d, q_max)

        try:
            q = solve_quantization(problem, q, tol)
        except NonConvergenceError as e:
            logger.warning("%s, keeping the last iterate", e)
            q = e.last_iterate

        current = total_time(q, bandwidths)
        history.append((q, current))
        logger.info("alternation %d: q=%.4f T=%.6f s", iteration + 1, q, current)

        if current < best_time:
            best_q, best_time = q, current

        if abs(current - previous) <= tol:
            break

        if len(history) >= 3 and abs(history[-3][0] - q) <= 1e-9 < abs(history[-2][0] - q):
            logger.warning("quantization level is oscillating, using the best iterate")
            break

        previous = current
    else:
        logger.warning("alternation hit %d passes, using the best iterate", max_iter)

    ceiling = math.ceil(best_q)
    candidates = sorted({max(int(Q_MIN), ceiling - 1), max(int(Q_MIN), ceiling)})
    plans = [optimal_bandwidth_plan(profiles, net, fit, epsilon, c) for c in candidates]
    plan = min(plans, key=lambda p: (p.predicted_total_s, p.q))

    plan.q_continuous = best_q
    plan.history = history
    logger.info("plan: q=%d T_d=%.6f s N=%d T=%.4f s", plan.q, plan.round_deadline_s,
                plan.predicted_rounds, plan.predicted_total_s)
    return plan
