"""
Wireless uplink model.

Large-scale propagation, the ergodic capacity of a fast Rayleigh fading link
and the per-round latency of a device. All quantities are SI (Hz, W, s,
bits); dB and dBm only appear in the conversion helpers.
"""

import logging
import math
from dataclasses import dataclass
from typing import Final, Tuple, Union

import numpy as np
from scipy.integrate import quad

from .errors import InvalidInputError, RateBracketError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

PATH_LOSS_INTERCEPT_DB: Final[float] = 128.1
PATH_LOSS_SLOPE_DB: Final[float] = 37.6

SERIES_SWITCH: Final[float] = 1.0
SERIES_TERMS: Final[int] = 40
FRACTION_MAX_ITER: Final[int] = 1000
FRACTION_EPS: Final[float] = 1e-15
FPMIN: Final[float] = 1e-300

RATE_RTOL: Final[float] = 1e-13
RATE_MAX_ITER: Final[int] = 400


def db_to_linear(value_db: ArrayLike) -> ArrayLike:
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_watts(value_dbm: ArrayLike) -> ArrayLike:
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class DeviceProfile:
    """Compute and radio characteristics of one edge device."""

    cpu_hz: float
    cycles_per_batch: float
    tx_power_watts: float
    large_scale_gain: float

    def __post_init__(self) -> None:
        for name in ("cpu_hz", "cycles_per_batch", "tx_power_watts", "large_scale_gain"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise InvalidInputError(f"{name} must be positive and finite, got {value}")

    def theta(self, noise_psd_w_per_hz: float) -> float:
        """Noise-to-received-power ratio N0 / (p * phi), in 1/Hz."""

        return noise_psd_w_per_hz / (self.tx_power_watts * self.large_scale_gain)


@dataclass(frozen=True)
class NetworkConfig:
    """Cell geometry, noise floor and shared uplink bandwidth."""

    total_bandwidth_hz: float = 10e3
    noise_psd_w_per_hz: float = float(dbm_to_watts(-174.0))
    cell_radius_m: float = 500.0
    exclusion_radius_m: float = 100.0
    shadowing_std_db: float = 8.0

    def __post_init__(self) -> None:
        if not self.total_bandwidth_hz > 0:
            raise InvalidInputError("total bandwidth must be positive")

        if not self.noise_psd_w_per_hz > 0:
            raise InvalidInputError("noise spectral density must be positive")

        if not 0 < self.exclusion_radius_m < self.cell_radius_m:
            raise InvalidInputError("exclusion radius must lie strictly inside the cell radius")

        if self.shadowing_std_db < 0:
            raise InvalidInputError("shadowing standard deviation must be non-negative")


@dataclass(frozen=True)
class LatencyBreakdown:
    """Per-round time spent computing and uploading, in seconds."""

    compute_s: float
    comm_s: float

    @property
    def total_s(self) -> float:
        return self.compute_s + self.comm_s


def path_loss_db(distance_m: ArrayLike) -> ArrayLike:
    distance = np.asarray(distance_m, dtype=float)

    if np.any(distance <= 0):
        raise InvalidInputError("distance must be positive")

    return PATH_LOSS_INTERCEPT_DB + PATH_LOSS_SLOPE_DB * np.log10(distance / 1000.0)


def large_scale_gain(distance_m: ArrayLike, shadowing_db: ArrayLike = 0.0) -> ArrayLike:
    """
    Linear large-scale power gain of a link.

    Args:
        distance_m: Device to server distance in meters.
        shadowing_db: Shadow fading attenuation in dB.

    Returns:
        10 ** (-(PL + shadowing) / 10), the attenuation applied as phi.
    """

    attenuation_db = path_loss_db(distance_m) + np.asarray(shadowing_db, dtype=float)
    gain = 10.0 ** (-attenuation_db / 10.0)
    return float(gain) if np.ndim(gain) == 0 else gain


def _e1_series(x: np.ndarray) -> np.ndarray:
    """E1(x) = -gamma - ln x - sum_{n>=1} (-x)^n / (n * n!) for small x."""

    total = np.zeros_like(x)
    term = np.ones_like(x)
    for n in range(1, SERIES_TERMS + 1):
        term = term * (-x) / n
        total += term / n

    return -np.euler_gamma - np.log(x) - total


def _scaled_e1_fraction(x: np.ndarray) -> np.ndarray:
    """exp(x) * E1(x) from its continued fraction, modified Lentz for x > 1."""

    b = x + 1.0
    c = np.full_like(x, 1.0 / FPMIN)
    d = 1.0 / b
    h = d.copy()

    for i in range(1, FRACTION_MAX_ITER + 1):
        an = -float(i * i)
        b = b + 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if np.all(np.abs(delta - 1.0) < FRACTION_EPS):
            break

    return h


def scaled_e1(x: ArrayLike) -> ArrayLike:
    """
    exp(x) * E1(x) for x > 0.

    The scaled form stays finite where exp(x) overflows and E1(x) underflows.
    """

    values = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise InvalidInputError("scaled E1 needs positive finite arguments")

    flat = np.atleast_1d(values).astype(float)
    result = np.empty_like(flat)

    small = flat <= SERIES_SWITCH
    if np.any(small):
        result[small] = np.exp(flat[small]) * _e1_series(flat[small])

    if np.any(~small):
        result[~small] = _scaled_e1_fraction(flat[~small])

    result = result.reshape(values.shape)
    return float(result) if result.ndim == 0 else result


def exp_integral_ei(x: ArrayLike) -> ArrayLike:
    """
    Exponential integral Ei(x) for negative arguments.

    Uses Ei(x) = -E1(-x): a power series for |x| <= 1 and a continued
    fraction beyond.
    """

    values = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values >= 0):
        raise InvalidInputError("exp_integral_ei is only defined here for x < 0")

    result = -np.exp(values) * np.asarray(scaled_e1(-values))
    return float(result) if result.ndim == 0 else result


def _check_positive(name: str, value: ArrayLike) -> np.ndarray:
    array = np.asarray(value, dtype=float)

    if np.any(~np.isfinite(array)) or np.any(array <= 0):
        raise InvalidInputError(f"{name} must be positive and finite")

    return array


def ergodic_rate(b_hz: ArrayLike, theta: ArrayLike) -> ArrayLike:
    """
    Ergodic capacity of a Rayleigh fading link in bits/s.

    R = -(b / ln 2) * exp(b * theta) * Ei(-b * theta), evaluated through the
    scaled E1 so large b * theta does not overflow.

    Args:
        b_hz: Allocated bandwidth in Hz.
        theta: N0 / (p * phi) in 1/Hz.
    """

    bandwidth = _check_positive("bandwidth", b_hz)
    ratio = _check_positive("theta", theta)

    rate = bandwidth / math.log(2.0) * np.asarray(scaled_e1(bandwidth * ratio))
    return float(rate) if np.ndim(rate) == 0 else rate


def ergodic_rate_quadrature(b_hz: float, theta: float) -> float:
    """
    Reference ergodic rate by direct numerical integration.

    E[b log2(1 + h / (b * theta))] over a unit-mean exponential power gain h.
    """

    bandwidth = float(_check_positive("bandwidth", b_hz))
    ratio = float(_check_positive("theta", theta))
    snr_scale = 1.0 / (bandwidth * ratio)

    value, _ = quad(
        lambda h: math.log1p(h * snr_scale) * math.exp(-h),
        0.0,
        np.inf,
        epsabs=0.0,
        epsrel=1e-12,
        limit=200,
    )
    return bandwidth * value / math.log(2.0)


def invert_rate(target_rate: ArrayLike, theta: ArrayLike,
                bracket: Tuple[ArrayLike, ArrayLike]) -> ArrayLike:
    """
    Bandwidth that achieves a target ergodic rate, by bisection.

    Works elementwise on arrays so every device of a round can be solved in
    one pass.

    Args:
        target_rate: Required rate in bits/s.
        theta: N0 / (p * phi) per device.
        bracket: (b_lo, b_hi) with R(b_lo) <= target <= R(b_hi).

    Returns:
        Bandwidth in Hz with |R(b) - target| within 1e-9 relative.
    """

    target = _check_positive("target rate", target_rate)
    ratio = _check_positive("theta", theta)
    target, ratio, lo, hi = np.broadcast_arrays(
        target, ratio,
        np.asarray(bracket[0], dtype=float), np.asarray(bracket[1], dtype=float),
    )
    lo = _check_positive("bracket lower end", lo).astype(float)
    hi = _check_positive("bracket upper end", hi).astype(float)

    rate_lo = ergodic_rate(lo, ratio)
    rate_hi = ergodic_rate(hi, ratio)
    if np.any(rate_lo > target) or np.any(rate_hi < target):
        raise RateBracketError("bandwidth bracket does not straddle the target rate")

    for _ in range(RATE_MAX_ITER):
        mid = 0.5 * (lo + hi)
        too_low = np.asarray(ergodic_rate(mid, ratio)) < target
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
        if np.all(hi - lo <= RATE_RTOL * hi):
            break

    result = 0.5 * (lo + hi)
    return float(result) if result.ndim == 0 else result


def compute_time(profile: DeviceProfile) -> float:
    """Seconds to process one mini-batch: cycles / CPU frequency."""

    return profile.cycles_per_batch / profile.cpu_hz


def comm_time(s_bits: ArrayLike, rate: ArrayLike) -> ArrayLike:
    """Seconds to upload s_bits at the given rate."""

    result = np.asarray(s_bits, dtype=float) / _check_positive("rate", rate)
    return float(result) if result.ndim == 0 else result


def round_latency(profile: DeviceProfile, bandwidth_hz: float, s_bits: float,
                  noise_psd_w_per_hz: float) -> LatencyBreakdown:
    """Compute plus upload time of one device in one round (downlink is free)."""

    rate = ergodic_rate(bandwidth_hz, profile.theta(noise_psd_w_per_hz))
    return LatencyBreakdown(compute_time(profile), comm_time(s_bits, rate))
