"""
Builders shared by several test modules.
"""

from feelopt.core.channel import DeviceProfile
from feelopt.core.fitting import GapFit

EPSILON = 0.012
H1 = 43.01
H2 = 48.79


def fit_from_h(h1: float = H1, h2: float = H2, epsilon: float = EPSILON,
               d: int = 1024, num_devices: int = 6) -> GapFit:
    """Fit with B = C = 0 whose derived coefficients are exactly (h1, h2)."""

    a = h1 * epsilon
    return GapFit(A=a, B=0.0, C=0.0, D=h2 * epsilon - a, Z=0.247, q1=4, q2=6,
                  N_tilde=100, d=d, K=num_devices)


def make_profile(cpu_hz: float, gain: float = 1e-11, power: float = 1e-3) -> DeviceProfile:
    return DeviceProfile(cpu_hz=cpu_hz, cycles_per_batch=1e8, tx_power_watts=power,
                         large_scale_gain=gain)
