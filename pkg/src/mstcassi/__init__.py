"""CASSI forward model and a numpy implementation of the mask-guided
spectral-wise transformer (MST) for hyperspectral snapshot reconstruction."""

from .audit import count_flops, count_macs, count_params
from .estimator import MSTReconstructor
from .model import MST, MstConfig, preset
from .optics import disperse, generate_mask, generate_scene, init_input, measure, modulate, shift_mask
from .tensor import Tensor

__all__ = [
    "MST",
    "MSTReconstructor",
    "MstConfig",
    "Tensor",
    "count_flops",
    "count_macs",
    "count_params",
    "disperse",
    "generate_mask",
    "generate_scene",
    "init_input",
    "measure",
    "modulate",
    "preset",
    "shift_mask",
]

__version__ = "0.1.0"
