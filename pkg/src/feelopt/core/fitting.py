"""
Optimality-gap curve fitting.

The gap after N rounds is modelled as U(N) = (alpha A + D) / (N + alpha B + C)
with alpha = sqrt(d) / (q K) + 1. Two short probe runs at different levels
q1 and q2 give loss samples F_{i,n}; for a fixed Z = F(w*) each probe is a
linear regression in (X_i, Y_i), so the whole fit reduces to a 1-D search
over Z followed by closed-form recovery of A, B, C and D.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Final, Optional, Tuple

import numpy as np

from .errors import DegenerateTraceError, FitError, InfeasibleZError, InvalidInputError
from .trainer import LossTrace

logger = logging.getLogger(__name__)

Z_GRID_POINTS: Final[int] = 2000
Z_REFINE_FACTOR: Final[int] = 10
DEFAULT_N_TILDE: Final[int] = 100
DEGENERATE_RTOL: Final[float] = 1e-12


def alpha(q: float, num_devices: int, d: int) -> float:
    """Quantization distortion factor sqrt(d) / (q K) + 1."""

    return math.sqrt(d) / (q * num_devices) + 1.0


@dataclass(frozen=True)
class FitDerived:
    """Round-count coefficients for a target gap epsilon."""

    H1: float
    H2: float
    epsilon: float

    def approx_rounds(self, q: float, num_devices: int, d: int) -> float:
        """Ceiling-free N_eps = sqrt(d) / (q K) * H1 + H2."""

        return math.sqrt(d) / (q * num_devices) * self.H1 + self.H2


@dataclass(frozen=True)
class GapFit:
    """Fitted gap model and the probe setup it came from."""

    A: float
    B: float
    C: float
    D: float
    Z: float
    q1: int
    q2: int
    N_tilde: int
    d: int
    K: int
    objective: float = 0.0

    def alpha(self, q: float, num_devices: Optional[int] = None, d: Optional[int] = None) -> float:
        return alpha(q, num_devices or self.K, d or self.d)

    def derive(self, epsilon: float) -> FitDerived:
        """H1 = A / eps - B and H2 = (A + D) / eps - B - C."""

        if epsilon <= 0:
            raise InvalidInputError("epsilon must be positive")

        h1 = self.A / epsilon - self.B
        h2 = (self.A + self.D) / epsilon - self.B - self.C
        if h1 <= 0 or h2 <= 0:
            raise FitError(f"epsilon={epsilon} is too large for this fit (H1={h1:.4g}, H2={h2:.4g})")

        return FitDerived(h1, h2, epsilon)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GapFit':
        try:
            return cls(
                A=float(data["A"]), B=float(data["B"]), C=float(data["C"]), D=float(data["D"]),
                Z=float(data["Z"]), q1=int(data["q1"]), q2=int(data["q2"]),
                N_tilde=int(data["N_tilde"]), d=int(data["d"]), K=int(data["K"]),
                objective=float(data.get("objective", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FitError(f"malformed fit document: {e}")


def fit_xy_given_z(losses: np.ndarray, Z: float) -> Tuple[float, float]:
    """
    Closed-form (X, Y) minimizing sum_n ((F_n - Z)(n + Y) - X)^2.

    Args:
        losses: F_1, ..., F_N (round 1 first).
        Z: Candidate optimal loss.

    Returns:
        (X, Y) for this probe.
    """

    values = np.asarray(losses, dtype=float)
    n_tilde = values.size
    if n_tilde < 3:
        raise DegenerateTraceError("need at least three loss samples")

    psi = values - Z
    if np.any(psi <= 0):
        raise InfeasibleZError(f"Z={Z} is not below every loss sample")

    chi = psi * np.arange(1, n_tilde + 1)
    sum_psi = psi.sum()
    sum_psi2 = psi @ psi
    sum_chi = chi.sum()
    sum_chi_psi = chi @ psi

    denominator = n_tilde * sum_psi2 - sum_psi ** 2
    if denominator <= DEGENERATE_RTOL * n_tilde * sum_psi2:
        raise DegenerateTraceError("loss trace is constant, the regression is singular")

    x = (sum_chi * sum_psi2 - sum_chi_psi * sum_psi) / denominator
    y = (sum_chi * sum_psi - n_tilde * sum_chi_psi) / denominator
    return float(x), float(y)


def gap_objective(losses: np.ndarray, Z: float, x: float, y: float) -> float:
    values = np.asarray(losses, dtype=float)
    n = np.arange(1, values.size + 1)
    residual = (values - Z) * (n + y) - x
    return float(residual @ residual)


def _probe_objective(windows: Tuple[np.ndarray, ...], Z: float,
                     alphas: Optional[Tuple[float, float]] = None) -> Optional[float]:
    """
    Summed regression error of all probes at Z, None if Z is unusable.

    With alphas given, Z is also unusable when the recovered A or B would
    not be positive.
    """

    total = 0.0
    coefficients = []
    for window in windows:
        try:
            x, y = fit_xy_given_z(window, Z)
        except (InfeasibleZError, DegenerateTraceError):
            return None
        coefficients.append((x, y))
        total += gap_objective(window, Z, x, y)

    if alphas is not None:
        (x1, y1), (x2, y2) = coefficients
        a, b, _, _, _ = _solve_parameters(x1, y1, x2, y2, *alphas)
        if a <= 0 or b <= 0:
            return None

    return total


def z_grid(windows: Tuple[np.ndarray, ...], points: int = Z_GRID_POINTS) -> np.ndarray:
    """Uniform grid on [0, min F) across all probes."""

    upper = min(float(np.min(window)) for window in windows)
    if upper <= 0:
        raise FitError("loss samples must be positive to search for Z")

    return np.linspace(0.0, upper, points, endpoint=False)


def _solve_parameters(x1: float, y1: float, x2: float, y2: float, alpha1: float,
                      alpha2: float) -> Tuple[float, float, float, float, Tuple[str, ...]]:
    """Closed-form A, B, C, D with negative C and D clamped; also names what was clamped."""

    a = (x1 - x2) / (alpha1 - alpha2)
    b = (y1 - y2) / (alpha1 - alpha2)
    c = (alpha2 * y1 - alpha1 * y2) / (alpha2 - alpha1)
    d = (alpha2 * x1 - alpha1 * x2) / (alpha2 - alpha1)

    clamped = []
    norm = alpha1 ** 2 + alpha2 ** 2
    if c < 0:
        clamped.append(f"C={c:.4g}")
        c = 0.0
        b = (alpha1 * y1 + alpha2 * y2) / norm

    if d < 0:
        clamped.append(f"D={d:.4g}")
        d = 0.0
        a = (alpha1 * x1 + alpha2 * x2) / norm

    return a, b, c, d, tuple(clamped)


def recover_parameters(x1: float, y1: float, x2: float, y2: float,
                       alpha1: float, alpha2: float) -> Tuple[float, float, float, float]:
    """
    A, B, C, D from X_i = alpha_i A + D and Y_i = alpha_i B + C.

    Slightly negative C or D is clamped to zero and its partner refitted
    through the origin; non-positive A or B is a failed fit.
    """

    if alpha1 == alpha2:
        raise InvalidInputError("probe levels must differ")

    a, b, c, d, clamped = _solve_parameters(x1, y1, x2, y2, alpha1, alpha2)
    for value in clamped:
        logger.debug("clamping %s to 0", value)

    if a <= 0 or b <= 0:
        raise FitError(f"fit produced non-positive A={a:.4g} or B={b:.4g}")

    return a, b, c, d


def fit_gap_model(trace1: LossTrace, trace2: LossTrace, d: int, num_devices: int,
                  n_tilde: Optional[int] = None,
                  z_values: Optional[np.ndarray] = None) -> GapFit:
    """
    Fit U(N) to two probe traces.

    The search only accepts Z values at which the recovered A and B are
    positive, so noisy probes fall back to the best Z that yields a valid
    model instead of failing outright.

    Args:
        trace1: Probe trace at level q1.
        trace2: Probe trace at level q2.
        d: Model dimension.
        num_devices: Number of devices K in the probes.
        n_tilde: Number of rounds to use, defaults to the shorter trace.
        z_values: Explicit Z grid; defaults to 2000 points on [0, min F).

    Returns:
        GapFit at the best Z after one local refinement of the grid.
    """

    if trace1.q is None or trace2.q is None:
        raise InvalidInputError("probe traces must be quantized")

    if trace1.q == trace2.q:
        raise InvalidInputError("probe levels q1 and q2 must differ")

    if n_tilde is None:
        n_tilde = min(trace1.rounds, trace2.rounds)

    windows = (trace1.fit_window(n_tilde), trace2.fit_window(n_tilde))
    if windows[0].size != windows[1].size or windows[0].size < n_tilde:
        raise InvalidInputError(f"both traces need at least {n_tilde} rounds")

    alphas = (alpha(trace1.q, num_devices, d), alpha(trace2.q, num_devices, d))
    grid = np.sort(np.asarray(z_values, dtype=float)) if z_values is not None else z_grid(windows)
    candidates = [(z, _probe_objective(windows, z, alphas)) for z in grid]
    candidates = [(z, value) for z, value in candidates if value is not None]
    if not candidates:
        if any(_probe_objective(windows, z) is not None for z in grid):
            raise FitError("no Z on the search grid gives positive A and B")
        raise FitError("no feasible Z on the search grid")

    best_z, best_value = min(candidates, key=lambda item: (item[1], item[0]))

    if grid.size > 1:
        step = float(np.min(np.diff(grid)))
        fine = np.linspace(best_z - step, best_z + step, 2 * Z_REFINE_FACTOR + 1)
        fine = fine[fine >= 0.0]
        for z in fine:
            value = _probe_objective(windows, z, alphas)
            if value is not None and (value, z) < (best_value, best_z):
                best_z, best_value = float(z), value

    x1, y1 = fit_xy_given_z(windows[0], best_z)
    x2, y2 = fit_xy_given_z(windows[1], best_z)
    a, b, c, dd = recover_parameters(x1, y1, x2, y2, *alphas)

    fit = GapFit(a, b, c, dd, float(best_z), int(trace1.q), int(trace2.q),
                 int(n_tilde), int(d), int(num_devices), float(best_value))
    logger.info("fitted gap model A=%.4g B=%.4g C=%.4g D=%.4g Z=%.6f", a, b, c, dd, best_z)
    return fit


def predict_gap(fit: GapFit, q: float, n: float, num_devices: Optional[int] = None,
                d: Optional[int] = None) -> float:
    """U(N) = (alpha A + D) / (N + alpha B + C)."""

    if q <= 0:
        raise InvalidInputError("quantization level must be positive")

    factor = fit.alpha(q, num_devices, d)
    return (factor * fit.A + fit.D) / (n + factor * fit.B + fit.C)


def fitted_losses(fit: GapFit, q: float, rounds: int) -> np.ndarray:
    """Z + U(n) for n = 1..rounds, for comparing against measured traces."""

    n = np.arange(1, rounds + 1, dtype=float)
    factor = fit.alpha(q)
    return fit.Z + (factor * fit.A + fit.D) / (n + factor * fit.B + fit.C)


def rounds_needed(fit: GapFit, q: float, epsilon: float, num_devices: Optional[int] = None,
                  d: Optional[int] = None) -> int:
    """
    Minimum rounds to an epsilon gap.

    N_eps = ceil(alpha (A / eps - B) + D / eps - C); an epsilon so large that
    the bracket is non-positive needs a single round.
    """

    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")

    factor = fit.alpha(q, num_devices, d)
    interior = factor * (fit.A / epsilon - fit.B) + fit.D / epsilon - fit.C
    if interior <= 0:
        logger.warning("epsilon=%g is reached immediately by the fitted model", epsilon)
        return 1

    return max(1, math.ceil(interior))
