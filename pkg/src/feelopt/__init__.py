"""
feelopt - Quantized Federated Edge Learning Simulator and Training-Time Optimizer
Simulates quantized federated SGD over a fading uplink, fits its convergence
curve and picks the quantization level and bandwidth split that finish
training fastest.
"""

__version__ = "0.1.0"
__author__ = "TN3W"
