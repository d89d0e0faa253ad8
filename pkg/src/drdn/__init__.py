"""Dilated residual CNN for Gaussian image denoising, in plain numpy."""

from drdn.conv_arith import LayerSpec, LayerStackSpec, output_size, receptive_field
from drdn.network import DenoiserModel, NetworkConfig, build, denoise, forward_residual, param_count

__all__ = [
    "LayerSpec",
    "LayerStackSpec",
    "output_size",
    "receptive_field",
    "DenoiserModel",
    "NetworkConfig",
    "build",
    "denoise",
    "forward_residual",
    "param_count",
]

__version__ = "0.1.0"
