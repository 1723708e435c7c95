"""
Audio-guided editing: DDIM inversion, plug-and-play injection, sound controls.
"""

from src.editing.controls import interpolate_audio, scale_volume
from src.editing.pnp import DiffusionTrajectory, InjectionConfig, ddim_invert, pnp_edit

__all__ = [
    "interpolate_audio",
    "scale_volume",
    "DiffusionTrajectory",
    "InjectionConfig",
    "ddim_invert",
    "pnp_edit",
]
