"""
Core package for simulation, curve fitting and optimization.

Holds the gradient quantizer, the wireless channel model, the federated
trainer, the gap-model fitter and the joint quantization and bandwidth
optimizer, plus the scenario configuration and the pipeline that chains
them.
"""

from .channel import DeviceProfile, NetworkConfig
from .fitting import GapFit, fit_gap_model
from .optimizer import AllocationPlan, allocate_bandwidth, joint_optimize
from .quantizer import dequantize, quantize
from .scenario import ScenarioConfig, sample_scenario

__all__ = [
    'AllocationPlan', 'DeviceProfile', 'GapFit', 'NetworkConfig', 'ScenarioConfig',
    'allocate_bandwidth', 'dequantize', 'fit_gap_model', 'joint_optimize', 'quantize',
    'sample_scenario',
]
