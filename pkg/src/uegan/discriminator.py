"""Multi-scale patch discriminator.

A stack of strided 4x4 conv blocks. Score heads tap a shallow block (small
receptive field, fine detail), a middle block and the last block (large
receptive field, global consistency). Scores are raw logits: the hinge
losses need them unbounded.
"""

from __future__ import annotations

from collections.abc import Sequence

import torch
from torch import nn

from uegan.generator import init_weights

DEFAULT_TAPS = (1, 2, 4)


class MultiScaleDiscriminator(nn.Module):
    def __init__(
        self,
        in_channels: int = 3,
        base_channels: int = 64,
        num_blocks: int = 5,
        taps: Sequence[int] = DEFAULT_TAPS,
    ):
        super().__init__()
        taps = tuple(taps)
        if not taps or list(taps) != sorted(set(taps)) or taps[-1] != num_blocks - 1 or taps[0] < 0:
            raise ValueError(f"taps must be strictly increasing block indices ending at {num_blocks - 1}")
        self.taps = taps
        self.num_blocks = num_blocks

        widths = [base_channels * min(2**i, 8) for i in range(num_blocks)]
        blocks = []
        in_ch = in_channels
        for w in widths:
            blocks.append(nn.Sequential(nn.Conv2d(in_ch, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2)))
            in_ch = w
        self.blocks = nn.ModuleList(blocks)
        self.heads = nn.ModuleList(nn.Conv2d(widths[t], 1, 3, padding=1, bias=False) for t in taps)
        # a shared offset on all scores cancels in the relativistic losses, so heads carry no bias
        self.apply(init_weights)

    @property
    def num_scales(self) -> int:
        return len(self.taps)

    @property
    def min_size(self) -> int:
        return 2**self.num_blocks

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Return one B x 1 x h x w score map per scale, finest first."""
        if x.dim() != 4:
            raise ValueError(f"expected a B x C x H x W batch, got shape {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if min(h, w) < self.min_size:
            raise ValueError(f"image {h}x{w} is smaller than the {self.min_size}x{self.min_size} minimum")

        scores = []
        heads = iter(self.heads)
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i in self.taps:
                scores.append(next(heads)(x))
        return scores


def discriminate(image: torch.Tensor, discriminator: MultiScaleDiscriminator) -> list[torch.Tensor]:
    if image.dim() == 3:
        image = image.unsqueeze(0)
    return discriminator(image)


def mean_scores(outputs: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Spatial mean of each score map.

    A ``B x 1 x h x w`` map reduces to a length-B vector of per-image scores;
    a bare ``h x w`` map reduces to a scalar.
    """
    if len(outputs) == 0:
        raise ValueError("no discriminator outputs to reduce")
    reduced = []
    for score in outputs:
        score = torch.as_tensor(score)
        if score.dim() < 2:
            raise ValueError(f"score map must be at least 2-D, got shape {tuple(score.shape)}")
        m = score.mean(dim=(-2, -1))
        if m.dim() == 2:
            m = m.squeeze(1)
        reduced.append(m)
    return reduced
