"""
DDIM sampling with classifier-free guidance over text and audio tokens.
"""

from src.sampling.guidance import (
    FORMULATIONS,
    Conditioning,
    GuidanceConfig,
    SampleResult,
    cfg_epsilon,
    combine_guidance,
    ddim_sample,
    initial_noise,
    null_caption_dropout,
    null_conditioning_dropout,
)

__all__ = [
    "FORMULATIONS",
    "Conditioning",
    "GuidanceConfig",
    "SampleResult",
    "cfg_epsilon",
    "combine_guidance",
    "ddim_sample",
    "initial_noise",
    "null_caption_dropout",
    "null_conditioning_dropout",
]
