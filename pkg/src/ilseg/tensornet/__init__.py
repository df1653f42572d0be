"""Minimal differentiable 3D operators and the dual-head U-Net."""
from .checkpoint import load_checkpoint, save_checkpoint
from .unet import DESK_CHANNELS, FULL_CHANNELS, Network, UNetConfig, init_parameters, unet_forward

__all__ = [
    "DESK_CHANNELS",
    "FULL_CHANNELS",
    "Network",
    "UNetConfig",
    "init_parameters",
    "load_checkpoint",
    "save_checkpoint",
    "unet_forward",
]
