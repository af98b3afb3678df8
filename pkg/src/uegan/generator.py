"""Joint global and local generator.

A four-stage encoder/decoder with skip connections. A global attention
module (GAM) re-weights the bottleneck with per-channel global statistics,
and a modulation module (MM) multiplies a projection of the first encoder
stage with a projection of the last decoder stage before the output layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

NUM_STAGES = 4
VARIANTS = ("full", "no_gam", "no_gam_no_mm", "gam_unet", "gam_mm_pixel")

_HAS_GAM = {"full", "gam_unet", "gam_mm_pixel"}


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 32
    num_stages: int = NUM_STAGES
    variant: str = "full"
    input_channels: int = 3
    attention_reduction: int = 8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown generator variant {self.variant!r}; expected one of {VARIANTS}")
        if self.num_stages != NUM_STAGES:
            raise ValueError(f"num_stages must be {NUM_STAGES}, got {self.num_stages}")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")

    @property
    def stage_channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.num_stages)]

    @property
    def multiple(self) -> int:
        return 2**self.num_stages


@dataclass
class FeaturePyramid:
    stages: list[torch.Tensor]
    bottleneck: torch.Tensor


@dataclass
class GlobalAttentionState:
    g_mean: torch.Tensor
    rho: torch.Tensor


class ConvNormAct(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        # no conv bias: instance norm removes it anyway and it would never see a gradient
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
            nn.InstanceNorm2d(out_ch, affine=True),
            nn.LeakyReLU(0.2),
        )


class GlobalAttention(nn.Module):
    """Pool each channel to its spatial mean, pass the vector through two
    fully-connected layers, broadcast the result back over H x W, concatenate
    it with the input and fuse the 2C channels back to C with a 1x1 conv."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(),
            nn.Linear(hidden, channels),
        )
        self.fuse = nn.Conv2d(2 * channels, channels, 1)

    def statistics(self, z: torch.Tensor) -> GlobalAttentionState:
        g_mean = z.mean(dim=(2, 3))
        return GlobalAttentionState(g_mean=g_mean, rho=self.fc(g_mean))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 4:
            raise ValueError(f"expected a B x C x H x W feature map, got shape {tuple(z.shape)}")
        rho = self.statistics(z).rho
        expanded = rho[:, :, None, None].expand_as(z)
        return self.fuse(torch.cat([expanded, z], dim=1))


def modulate(early: torch.Tensor, late: torch.Tensor) -> torch.Tensor:
    """Element-wise product of two already-projected feature branches."""
    if early.shape != late.shape:
        raise ValueError(f"modulation branches differ in shape: {tuple(early.shape)} vs {tuple(late.shape)}")
    return early * late


class Modulation(nn.Module):
    def __init__(self, early_channels: int, late_channels: int, width: int):
        super().__init__()
        self.early = nn.Conv2d(early_channels, width, 3, padding=1)
        self.late = nn.Conv2d(late_channels, width, 3, padding=1)

    def forward(self, early: torch.Tensor, late: torch.Tensor) -> torch.Tensor:
        if early.shape[-2:] != late.shape[-2:]:
            raise ValueError(
                f"modulation inputs have incompatible spatial dims {tuple(early.shape[-2:])} "
                f"and {tuple(late.shape[-2:])}"
            )
        return modulate(self.early(early), self.late(late))


class UpBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.up = ConvNormAct(in_ch, out_ch)
        self.merge = ConvNormAct(2 * out_ch, out_ch)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = self.up(F.interpolate(x, scale_factor=2, mode="nearest"))
        return self.merge(torch.cat([x, skip], dim=1))


class JointGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config = config or GeneratorConfig()
        chs = config.stage_channels
        c = chs[0]

        stages = [nn.Sequential(ConvNormAct(config.input_channels, c), ConvNormAct(c, c))]
        for prev, cur in zip(chs[:-1], chs[1:]):
            stages.append(nn.Sequential(ConvNormAct(prev, cur, stride=2), ConvNormAct(cur, cur)))
        self.encoder = nn.ModuleList(stages)

        # bottleneck is left unnormalized: it can be 1x1 for 16x16 inputs
        self.bottleneck = nn.Sequential(
            nn.Conv2d(chs[-1], chs[-1], 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(chs[-1], chs[-1], 3, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.attention = (
            GlobalAttention(chs[-1], config.attention_reduction) if config.variant in _HAS_GAM else None
        )

        ups = []
        in_ch = chs[-1]
        for cur in reversed(chs):
            ups.append(UpBlock(in_ch, cur))
            in_ch = cur
        self.decoder = nn.ModuleList(ups)

        self.modulation = Modulation(c, c, c) if config.variant in ("full", "no_gam") else None
        self.fusion = (
            nn.Sequential(nn.Conv2d(2 * c, c, 3, padding=1), nn.LeakyReLU(0.2))
            if config.variant == "gam_unet"
            else None
        )
        self.output = nn.Conv2d(c, config.input_channels, 3, padding=1)

        self.apply(init_weights)

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4:
            raise ValueError(f"expected a B x C x H x W batch, got shape {tuple(x.shape)}")
        m = self.config.multiple
        h, w = x.shape[-2:]
        if h % m or w % m:
            raise ValueError(f"image dims {h}x{w} must be multiples of {m}")

    def encode(self, x: torch.Tensor) -> FeaturePyramid:
        self.check_input(x)
        stages = []
        for stage in self.encoder:
            x = stage(x)
            stages.append(x)
        return FeaturePyramid(stages=stages, bottleneck=self.bottleneck(x))

    def decode(self, pyramid: FeaturePyramid) -> torch.Tensor:
        x = pyramid.bottleneck
        if self.attention is not None:
            x = self.attention(x)
        for block, skip in zip(self.decoder, reversed(pyramid.stages)):
            x = block(x, skip)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pyramid = self.encode(x)
        late = self.decode(pyramid)
        early = pyramid.stages[0]

        if self.modulation is not None:
            feats = self.modulation(early, late)
        elif self.fusion is not None:
            feats = self.fusion(torch.cat([early, late], dim=1))
        else:
            feats = late

        out = self.output(feats)
        if self.config.variant == "gam_mm_pixel":
            # pixel-level modulation: a per-pixel gain in (0, 2) applied to the input
            return torch.clamp(x * 2 * torch.sigmoid(out), 0, 1)
        return torch.sigmoid(out)


def init_weights(m: nn.Module) -> None:
    if isinstance(m, (nn.Conv2d, nn.Linear)):
        nn.init.normal_(m.weight, 0.0, 0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.InstanceNorm2d) and m.affine:
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


def build_generator(config: GeneratorConfig | str | None = None, **kwargs) -> JointGenerator:
    if isinstance(config, str):
        config = GeneratorConfig(variant=config, **kwargs)
    elif config is None:
        config = GeneratorConfig(**kwargs)
    return JointGenerator(config)


def _as_batch(image: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if image.dim() == 3:
        return image.unsqueeze(0), True
    if image.dim() == 4:
        return image, False
    raise ValueError(f"expected C x H x W or B x C x H x W, got shape {tuple(image.shape)}")


def check_range(image: torch.Tensor) -> None:
    if not torch.isfinite(image).all() or image.min() < 0 or image.max() > 1:
        raise ValueError("image values must lie in [0, 1]; preprocess the image first")


@torch.no_grad()
def enhance(image: torch.Tensor, generator: JointGenerator) -> torch.Tensor:
    """Map a low-quality image (or batch) in [0, 1] to its enhanced version.

    The generator is switched to eval mode. Image dims must already be
    multiples of 16; see :func:`enhance_any_size` for arbitrary sizes.
    """
    check_range(image)
    batch, squeeze = _as_batch(image)
    generator.eval()
    out = generator(batch)
    return out[0] if squeeze else out


@torch.no_grad()
def enhance_any_size(image: torch.Tensor, generator: JointGenerator) -> torch.Tensor:
    """Replicate-pad to the next multiple of 16, enhance, then crop back."""
    check_range(image)
    batch, squeeze = _as_batch(image)
    m = generator.config.multiple
    h, w = batch.shape[-2:]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        batch = F.pad(batch, (0, pw, 0, ph), mode="replicate")
    out = enhance(batch, generator)[..., :h, :w]
    return out[0] if squeeze else out


def named_parameter_shapes(module: nn.Module) -> dict[str, tuple[int, ...]]:
    return {name: tuple(p.shape) for name, p in module.named_parameters()}


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


__all__ = [
    "VARIANTS",
    "FeaturePyramid",
    "GeneratorConfig",
    "GlobalAttention",
    "GlobalAttentionState",
    "JointGenerator",
    "Modulation",
    "build_generator",
    "count_parameters",
    "enhance",
    "enhance_any_size",
    "init_weights",
    "modulate",
    "named_parameter_shapes",
]
