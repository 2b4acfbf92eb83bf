"""
Stochastic gradient quantizer.

A gradient g is sent as its l2 norm, the sign of every entry and an integer
level per entry. Entry i is rounded to one of the two grid points l/q and
(l+1)/q around |g_i|/||g|| with probabilities that keep the reconstruction
unbiased.
"""

import logging
import math
from dataclasses import dataclass
from typing import Final

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

SIGN_BITS_PER_ENTRY: Final[int] = 1


@dataclass(frozen=True)
class QuantizedGradient:
    """Wire representation of a quantized gradient."""

    norm: float
    signs: np.ndarray
    levels: np.ndarray
    q: int

    @property
    def dimension(self) -> int:
        return int(self.levels.shape[0])


def _as_gradient(g) -> np.ndarray:
    """Validate a gradient vector and return it as a flat float array."""

    vector = np.asarray(g, dtype=float).reshape(-1)

    if vector.size < 1:
        raise InvalidInputError("gradient must have at least one entry")

    if not np.all(np.isfinite(vector)):
        raise InvalidInputError("gradient contains non-finite entries")

    return vector


def quantize(g, q: int, rng: np.random.Generator) -> QuantizedGradient:
    """
    Stochastically quantize a gradient vector.

    Args:
        g: Gradient entries, length d.
        q: Number of quantization intervals.
        rng: Source of randomness for the rounding decisions.

    Returns:
        QuantizedGradient whose dequantization is an unbiased estimate of g.
    """

    if int(q) != q or q < 1:
        raise InvalidInputError(f"quantization level must be a positive integer, got {q}")
    q = int(q)

    vector = _as_gradient(g)
    d = vector.size
    signs = np.where(vector < 0, -1, 1).astype(np.int8)

    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        return QuantizedGradient(0.0, signs, np.zeros(d, dtype=np.int64), q)

    ratios = np.clip(np.abs(vector) / norm, 0.0, 1.0)
    scaled = ratios * q
    lower = np.minimum(np.floor(scaled), q - 1)
    round_up = rng.random(d) < (scaled - lower)
    levels = lower.astype(np.int64) + round_up

    return QuantizedGradient(norm, signs, levels, q)


def dequantize(qg: QuantizedGradient) -> np.ndarray:
    """Rebuild the gradient estimate norm * sign * level / q."""

    return qg.norm * qg.signs.astype(float) * qg.levels.astype(float) / qg.q


def payload_bits(d: int, q: int) -> float:
    """
    Bits needed to upload one quantized gradient.

    Each entry costs one sign bit plus log2(q + 1) bits for its level; the
    norm is not counted. Fractional results are kept on purpose: the rate
    model works with real-valued payloads.
    """

    if d < 1:
        raise InvalidInputError(f"dimension must be >= 1, got {d}")

    if q < 1:
        raise InvalidInputError(f"quantization level must be >= 1, got {q}")

    return (SIGN_BITS_PER_ENTRY + math.log2(q + 1)) * d


def variance_bound(g, q: int) -> float:
    """Upper bound min(d/q^2, sqrt(d)/q) * ||g||^2 on the quantization error."""

    vector = _as_gradient(g)
    d = vector.size
    return min(d / q ** 2, math.sqrt(d) / q) * float(vector @ vector)
