"""PSNR / SSIM against expert-retouched references."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from uegan.data import preprocess
from uegan.generator import JointGenerator, enhance_any_size

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
BT601 = (0.299, 0.587, 0.114)


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a: torch.Tensor, b: torch.Tensor, max_value: float = 1.0) -> float:
    """PSNR in dB with the MSE pooled over all channels; ``inf`` for identical images."""
    _check_pair(a, b)
    mse = (a.double() - b.double()).pow(2).mean().item()
    if mse == 0:
        return math.inf
    return 10 * math.log10(max_value**2 / mse)


def luminance(image: torch.Tensor) -> torch.Tensor:
    if image.shape[-3] == 1:
        return image[..., 0, :, :]
    r, g, b = image[..., 0, :, :], image[..., 1, :, :], image[..., 2, :, :]
    return BT601[0] * r + BT601[1] * g + BT601[2] * b


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0) -> float:
    """Mean SSIM on BT.601 luminance with an 11x11 Gaussian window (sigma 1.5).

    Only window positions fully inside the image are pooled.
    """
    _check_pair(a, b)
    if a.dim() != 3:
        raise ValueError(f"expected a C x H x W image, got shape {tuple(a.shape)}")
    h, w = a.shape[-2:]
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    x = luminance(a.double())[None, None]
    y = luminance(b.double())[None, None]
    win = gaussian_window()[None, None]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    var_x = F.conv2d(x * x, win) - mu_x**2
    var_y = F.conv2d(y * y, win) - mu_y**2
    cov = F.conv2d(x * y, win) - mu_x * mu_y
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return s.mean().item()


@dataclass
class ImageScore:
    id: str
    psnr: float
    ssim: float
    input_psnr: float
    input_ssim: float
    nima: float | None = None


@dataclass
class MetricsReport:
    per_image: list[ImageScore] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.per_image)

    def _mean(self, attr: str) -> float:
        values = [getattr(s, attr) for s in self.per_image]
        if not values or any(v is None for v in values):
            return math.nan
        return sum(values) / len(values)

    @property
    def mean_psnr(self) -> float:
        return self._mean("psnr")

    @property
    def mean_ssim(self) -> float:
        return self._mean("ssim")

    @property
    def input_psnr(self) -> float:
        return self._mean("input_psnr")

    @property
    def input_ssim(self) -> float:
        return self._mean("input_ssim")

    @property
    def mean_nima(self) -> float:
        return self._mean("nima")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["id", "psnr_db", "ssim", "input_psnr_db", "input_ssim", "nima"])
            for s in self.per_image:
                writer.writerow([s.id, _fmt(s.psnr), _fmt(s.ssim), _fmt(s.input_psnr), _fmt(s.input_ssim),
                                 "" if s.nima is None else _fmt(s.nima)])

    def summary(self, name: str = "Enhanced") -> str:
        rows = [("Input", self.input_psnr, self.input_ssim, math.nan),
                (name, self.mean_psnr, self.mean_ssim, self.mean_nima)]
        lines = [f"{'Method':<16}| {'PSNR':>8} | {'SSIM':>8} | {'NIMA':>6}", "-" * 48]
        for label, p, s, n in rows:
            nima = "n/a" if math.isnan(n) else f"{n:.2f}"
            lines.append(f"{label:<16}| {_fmt(p, 2):>8} | {_fmt(s, 4):>8} | {nima:>6}")
        lines.append(f"images: {self.count}, skipped: {len(self.skipped)}")
        if self.skipped:
            lines.append("skipped ids: " + ", ".join(self.skipped))
        return "\n".join(lines)


def _fmt(x: float, digits: int = 6) -> str:
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.{digits}f}"


def evaluate(
    generator: JointGenerator | Callable[[torch.Tensor], torch.Tensor],
    pairs: Sequence[tuple[str, Path, Path | None]],
    long_side: int | None = 512,
    aesthetic_scorer: Callable[[torch.Tensor], float] | None = None,
) -> MetricsReport:
    """Enhance every test input and score it against its expert reference.

    ``pairs`` holds ``(id, input_path, reference_path)``; ids with no
    reference are skipped and listed in the report. ``generator`` may also be
    any callable on a 3 x H x W tensor (e.g. ``lambda x: x`` for the input
    baseline). ``aesthetic_scorer`` is an optional NIMA-style plug-in.
    """
    if isinstance(generator, JointGenerator):
        def run(x):
            return enhance_any_size(x, generator)
    else:
        run = generator

    report = MetricsReport()
    for image_id, input_path, ref_path in pairs:
        if ref_path is None or not Path(ref_path).is_file():
            log.warning("no reference for %s; skipping", image_id)
            report.skipped.append(image_id)
            continue
        x = preprocess(input_path, long_side)
        ref = preprocess(ref_path, long_side)
        if x.shape != ref.shape:
            log.warning("input and reference for %s differ in size; skipping", image_id)
            report.skipped.append(image_id)
            continue
        with torch.no_grad():
            y = run(x).clamp(0, 1)
        report.per_image.append(
            ImageScore(
                id=image_id,
                psnr=psnr(y, ref),
                ssim=ssim(y, ref),
                input_psnr=psnr(x, ref),
                input_ssim=ssim(x, ref),
                nima=None if aesthetic_scorer is None else float(aesthetic_scorer(y)),
            )
        )
    return report
