"""Relativistic average hinge losses, VGG-19 fidelity loss, identity loss and their weighted total."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
import torchvision
from torch import nn

from uegan.discriminator import mean_scores

log = logging.getLogger(__name__)

WEIGHTS_ENV = "UEGAN_VGG_WEIGHTS"
DEFAULT_WEIGHTS_NAME = "vgg19-dcbb9e9d.pth"
RANDOM_WEIGHTS = "random"

# torchvision vgg19().features indices of the first ReLU in each block
VGG19_RELU_INDEX = {"relu1_1": 1, "relu2_1": 6, "relu3_1": 11, "relu4_1": 20, "relu5_1": 29}
DEFAULT_LAYERS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
NUM_LAYERS = 5

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class LossWeights:
    lambda_qua: float = 0.05
    lambda_fid: float = 1.0
    lambda_idt: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ValueError(f"{name} must be a non-negative number, got {value}")


@dataclass(frozen=True)
class LossRecord:
    d_loss: float
    g_qua: float
    g_fid: float
    g_idt: float
    g_total: float

    @classmethod
    def from_parts(cls, d: float, qua: float, fid: float, idt: float, weights: LossWeights) -> LossRecord:
        d, qua, fid, idt = float(d), float(qua), float(fid), float(idt)
        return cls(d, qua, fid, idt, float(total_g_loss(qua, fid, idt, weights)))

    def reconstructs(self, weights: LossWeights) -> bool:
        return self.g_total == total_g_loss(self.g_qua, self.g_fid, self.g_idt, weights)


def _scores(x) -> torch.Tensor:
    # plain Python numbers are doubles; keep them that way
    return (x if torch.is_tensor(x) else torch.tensor(x, dtype=torch.float64)).reshape(-1)


def d_loss(d_low, d_high, d_gen) -> torch.Tensor:
    """Discriminator loss over three populations.

    Real high-quality scores are pushed above the batch mean of both the real
    low-quality scores and the generated scores by a unit margin, and vice
    versa. Inputs are per-image scores; expectations are batch means.
    """
    d_low, d_high, d_gen = _scores(d_low), _scores(d_high), _scores(d_gen)
    m_low, m_high, m_gen = d_low.mean(), d_high.mean(), d_gen.mean()
    return (
        F.relu(1 + (d_low - m_high)).mean()
        + F.relu(1 - (d_high - m_low)).mean()
        + F.relu(1 + (d_gen - m_high)).mean()
        + F.relu(1 - (d_high - m_gen)).mean()
    )


def g_quality_loss(d_high, d_gen) -> torch.Tensor:
    d_high, d_gen = _scores(d_high), _scores(d_gen)
    m_high, m_gen = d_high.mean(), d_gen.mean()
    return F.relu(1 + (d_high - m_gen)).mean() + F.relu(1 - (d_gen - m_high)).mean()


def discriminator_loss(
    low: Sequence[torch.Tensor], high: Sequence[torch.Tensor], gen: Sequence[torch.Tensor]
) -> torch.Tensor:
    """Per-scale :func:`d_loss`, averaged over scales with equal weight."""
    if not len(low) == len(high) == len(gen):
        raise ValueError("discriminator outputs have different numbers of scales")
    terms = [d_loss(l, h, g) for l, h, g in zip(mean_scores(low), mean_scores(high), mean_scores(gen))]
    return torch.stack(terms).mean()


def generator_quality_loss(high: Sequence[torch.Tensor], gen: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(high) != len(gen):
        raise ValueError("discriminator outputs have different numbers of scales")
    terms = [g_quality_loss(h, g) for h, g in zip(mean_scores(high), mean_scores(gen))]
    return torch.stack(terms).mean()


def default_weights_path() -> Path:
    env = os.environ.get(WEIGHTS_ENV)
    if env:
        return Path(env)
    return Path(torch.hub.get_dir()) / "checkpoints" / DEFAULT_WEIGHTS_NAME


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_checksum(path: Path, expected: str | None = None) -> None:
    """Compare against ``expected`` or, failing that, the hash prefix in a
    torchvision-style filename (``name-<hex>.pth``). No reference, no check."""
    if expected is None:
        m = re.search(r"-([0-9a-f]{8,64})\.pth?$", path.name)
        if m is None:
            log.warning("no checksum available for %s; skipping verification", path)
            return
        expected = m.group(1)
    digest = sha256_file(path)
    if not digest.startswith(expected.lower()):
        raise ValueError(f"checksum mismatch for {path}: expected {expected}, got {digest}")


class PerceptualExtractor(nn.Module):
    """Frozen VGG-19 returning activations at five ReLU layers.

    ``weights`` is a path to a torchvision VGG-19 state dict, ``None`` to use
    ``$UEGAN_VGG_WEIGHTS`` or the torch hub cache, or ``"random"`` for a
    seeded random initialization (useful offline; features carry no
    ImageNet semantics then).
    """

    def __init__(
        self,
        weights: str | Path | None = None,
        layers: Sequence[str] = DEFAULT_LAYERS,
        sha256: str | None = None,
        seed: int = 0,
    ):
        super().__init__()
        layers = tuple(layers)
        if len(layers) != NUM_LAYERS:
            raise ValueError(f"fidelity loss uses exactly {NUM_LAYERS} VGG layers, got {len(layers)}")
        unknown = [name for name in layers if name not in VGG19_RELU_INDEX]
        if unknown:
            raise ValueError(f"unknown VGG-19 layers {unknown}; choose from {list(VGG19_RELU_INDEX)}")
        self.layers = layers
        self.indices = [VGG19_RELU_INDEX[name] for name in layers]

        with torch.random.fork_rng(devices=[]):
            # keep torchvision's default init from consuming the caller's RNG stream
            vgg = torchvision.models.vgg19(weights=None)

        features = vgg.features[: max(self.indices) + 1]
        if weights == RANDOM_WEIGHTS:
            _random_init(features, seed)
            self.source = f"random(seed={seed})"
        else:
            path = Path(weights) if weights is not None else default_weights_path()
            if not path.is_file():
                raise FileNotFoundError(
                    f"VGG-19 weights not found at {path}; set {WEIGHTS_ENV} or pass the weights path"
                )
            verify_checksum(path, sha256)
            state = torch.load(path, map_location="cpu", weights_only=True)
            if not any(k.startswith("features.") for k in state):
                state = {f"features.{k}": v for k, v in state.items()}
            # layers past the deepest tap are unused, so they may be absent from the file
            keep = {f"features.{k}" for k in features.state_dict()}
            features_state = {k[len("features.") :]: v for k, v in state.items() if k in keep}
            features.load_state_dict(features_state)
            self.source = str(path)

        self.features = features
        for m in self.features:
            if isinstance(m, nn.ReLU):
                m.inplace = False
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # always frozen
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        x = (x - self.mean) / self.std
        feats = []
        wanted = set(self.indices)
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in wanted:
                feats.append(x)
        return feats


def _random_init(features: nn.Module, seed: int) -> None:
    # fan-in scaling keeps activations at unit scale through all 16 convs;
    # torchvision's fan-out default shrinks them and makes the fidelity term negligible
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in features:
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
                m.bias.zero_()


def extract_perceptual_features(image: torch.Tensor, extractor: PerceptualExtractor) -> list[torch.Tensor]:
    return extractor(image)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def fidelity_loss(
    x_l: torch.Tensor, x_g: torch.Tensor, extractor: PerceptualExtractor, squared: bool = True
) -> torch.Tensor:
    """Sum over the five VGG layers of the batch-mean feature distance.

    Per image and layer the distance is the mean squared feature difference
    (``squared=True``) or its square root.
    """
    _check_same_shape(x_l, x_g, "fidelity_loss")
    total = 0
    for f_l, f_g in zip(extractor(x_l), extractor(x_g)):
        mse = (f_l - f_g).pow(2).flatten(1).mean(dim=1)
        if not squared:
            # zero distance gets zero gradient instead of nan
            mse = torch.where(mse > 0, mse.clamp_min(1e-30).sqrt(), torch.zeros_like(mse))
        total = total + mse.mean()
    return total


def identity_loss(x_h: torch.Tensor, g_xh: torch.Tensor) -> torch.Tensor:
    _check_same_shape(x_h, g_xh, "identity_loss")
    return (x_h - g_xh).abs().mean()


def total_g_loss(g_qua, g_fid, g_idt, weights: LossWeights = LossWeights()):
    """Weighted sum of the three generator terms. Works on floats or tensors."""
    for name, value in (("g_qua", g_qua), ("g_fid", g_fid), ("g_idt", g_idt)):
        finite = torch.isfinite(value).all().item() if torch.is_tensor(value) else math.isfinite(value)
        if not finite:
            raise ValueError(f"non-finite generator loss component {name}: {value}")
    return weights.lambda_qua * g_qua + weights.lambda_fid * g_fid + weights.lambda_idt * g_idt
