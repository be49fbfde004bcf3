"""Multimodal banner layout generation at desk scale: a detection-style
transformer generator conditioned on background images and foreground
text/image elements, trained under GAN, VAE, or VAE-GAN objectives, with an
evaluation suite, deterministic renderer, design service, and CLI."""

from .conditioning import EmbedderConfig, MultimodalEmbedder
from .elements import (
    BackgroundImage,
    DesignSample,
    ForegroundSet,
    ImageElement,
    TextElement,
)
from .geometry import Layout, NormalizedBox
from .losses import LossReport, LossWeights
from .metrics import MetricReport, evaluate_layout_sets
from .networks import ModelBundle, NetworkConfig, build_bundle, load_checkpoint, save_checkpoint
from .rendering import RenderSpec, render_design
from .training import TrainConfig, Trainer, train_loop

__version__ = "0.1.0"

__all__ = [
    "BackgroundImage",
    "DesignSample",
    "EmbedderConfig",
    "ForegroundSet",
    "ImageElement",
    "Layout",
    "LossReport",
    "LossWeights",
    "MetricReport",
    "ModelBundle",
    "MultimodalEmbedder",
    "NetworkConfig",
    "NormalizedBox",
    "RenderSpec",
    "TextElement",
    "TrainConfig",
    "Trainer",
    "build_bundle",
    "evaluate_layout_sets",
    "load_checkpoint",
    "render_design",
    "save_checkpoint",
    "train_loop",
    "__version__",
]
