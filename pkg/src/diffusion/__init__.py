"""
Denoising backbone, noise schedule, gated audio adapters and feature hooks.
"""

from src.diffusion.adapters import (
    AdapterState,
    GatedCrossAttention,
    build_adapters,
    init_adapters_from_text_attention,
    parameter_digest,
    trainable_partition,
)
from src.diffusion.hooks import (
    AdapterNormHook,
    CompositeHooks,
    FeatureHooks,
    FeatureInjector,
    FeatureRecorder,
)
from src.diffusion.latent import IdentityCodec, pixels_to_tensor, tensor_to_pixels
from src.diffusion.schedule import (
    NoiseSchedule,
    add_noise,
    ddim_inversion_step,
    ddim_step,
    ddim_timesteps,
    posterior_step,
)
from src.diffusion.text import CaptionEmbedder, align_tokens
from src.diffusion.unet import DenoisingUNet

__all__ = [
    "AdapterState",
    "GatedCrossAttention",
    "build_adapters",
    "init_adapters_from_text_attention",
    "parameter_digest",
    "trainable_partition",
    "AdapterNormHook",
    "CompositeHooks",
    "FeatureHooks",
    "FeatureInjector",
    "FeatureRecorder",
    "IdentityCodec",
    "pixels_to_tensor",
    "tensor_to_pixels",
    "NoiseSchedule",
    "add_noise",
    "ddim_inversion_step",
    "ddim_step",
    "ddim_timesteps",
    "posterior_step",
    "CaptionEmbedder",
    "align_tokens",
    "DenoisingUNet",
]
