"""Panorama inpainting with windowed Fourier token mixers."""

from .adversarial import LossWeights, PatchDiscriminator, build_perceptual_extractor
from .core_ops import (
    ChannelLayerNorm,
    ConfigError,
    GatedConv,
    SphericalConv,
    StarReLU,
    spherical_pad,
    window_merge,
    window_split,
)
from .data import ScenePair, load_split, scan_split, toy_scene, write_toy_corpus
from .fourier import FourierUnit, MixerVariant, WFourierMixer, build_token_mixer
from .generator import (
    FourierFormerBlock,
    GeneratorConfig,
    PanoGenerator,
    build_input,
    composite,
    count_parameters,
)
from .masks import MaskKind, MaskSpec, make_mask, mask_ratio, sample_training_mask
from .metrics import MetricsReport, evaluate, mae, psnr, ssim
from .training import (
    TrainConfig,
    Trainer,
    ablation_preset,
    fit,
    load_checkpoint,
    load_generator,
    save_checkpoint,
)

__all__ = [
    "ChannelLayerNorm",
    "ConfigError",
    "FourierFormerBlock",
    "FourierUnit",
    "GatedConv",
    "GeneratorConfig",
    "LossWeights",
    "MaskKind",
    "MaskSpec",
    "MetricsReport",
    "MixerVariant",
    "PanoGenerator",
    "PatchDiscriminator",
    "ScenePair",
    "SphericalConv",
    "StarReLU",
    "TrainConfig",
    "Trainer",
    "WFourierMixer",
    "ablation_preset",
    "build_input",
    "build_perceptual_extractor",
    "build_token_mixer",
    "composite",
    "count_parameters",
    "evaluate",
    "fit",
    "load_checkpoint",
    "load_generator",
    "load_split",
    "mae",
    "make_mask",
    "mask_ratio",
    "psnr",
    "sample_training_mask",
    "save_checkpoint",
    "scan_split",
    "spherical_pad",
    "ssim",
    "toy_scene",
    "window_merge",
    "window_split",
    "write_toy_corpus",
]

__version__ = "0.1.0"
