"""Unsupervised image-enhancement GAN: generator, discriminator, losses, data, training and evaluation."""

from uegan.discriminator import MultiScaleDiscriminator, mean_scores
from uegan.generator import (
    VARIANTS,
    FeaturePyramid,
    GeneratorConfig,
    GlobalAttention,
    GlobalAttentionState,
    JointGenerator,
    Modulation,
    build_generator,
    enhance,
    modulate,
)
from uegan.losses import (
    LossRecord,
    LossWeights,
    PerceptualExtractor,
    d_loss,
    fidelity_loss,
    g_quality_loss,
    identity_loss,
    total_g_loss,
)

__version__ = "0.1.0"

__all__ = [
    "VARIANTS",
    "FeaturePyramid",
    "GeneratorConfig",
    "GlobalAttention",
    "GlobalAttentionState",
    "JointGenerator",
    "LossRecord",
    "LossWeights",
    "Modulation",
    "MultiScaleDiscriminator",
    "PerceptualExtractor",
    "build_generator",
    "d_loss",
    "enhance",
    "fidelity_loss",
    "g_quality_loss",
    "identity_loss",
    "mean_scores",
    "modulate",
    "total_g_loss",
]
