"""Adapting video inpainting generators to outpainting with a hierarchical discriminator."""

from .discriminator import DesignKind, DiscConfig, Discriminator, build_design, empirical_rf, receptive_field
from .losses import LossWeights, outpainting_loss
from .masking import MaskSpec, make_mask, out_extract
from .tensorio import VideoTensor, load_clip, load_fixture, save_fixture
from .trainer import TrainConfig, fit

__all__ = [
    "DesignKind",
    "DiscConfig",
    "Discriminator",
    "LossWeights",
    "MaskSpec",
    "TrainConfig",
    "VideoTensor",
    "build_design",
    "empirical_rf",
    "fit",
    "load_clip",
    "load_fixture",
    "make_mask",
    "out_extract",
    "outpainting_loss",
    "receptive_field",
    "save_fixture",
]
__version__ = "0.1.0"
