from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from PIL import Image

from uegan.config import TrainConfig
from uegan.data import SplitManifest
from uegan.losses import PerceptualExtractor


@pytest.fixture(scope="session")
def extractor():
    return PerceptualExtractor("random", seed=0)


@pytest.fixture(scope="session")
def extractor64():
    return PerceptualExtractor("random", seed=0).double()


def smooth_image(gen: torch.Generator, h: int, w: int, lo: float = 0.0, hi: float = 1.0) -> torch.Tensor:
    """Smooth random colour field in [lo, hi]."""
    coarse = torch.rand(1, 3, 5, 5, generator=gen)
    img = F.interpolate(coarse, size=(h, w), mode="bicubic", align_corners=False)[0].clamp(0, 1)
    return lo + (hi - lo) * img


def write_png(path: Path, image: torch.Tensor) -> None:
    arr = (image.clamp(0, 1) * 255).round().to(torch.uint8).permute(1, 2, 0).numpy()
    Image.fromarray(np.ascontiguousarray(arr)).save(path)


def make_toy_corpus(root: Path, n_low=8, n_high=8, n_val=2, n_test=2, size=(40, 48), seed=0) -> Path:
    """Unpaired train images plus a few raw/expert pairs; writes ``manifest.txt`` at the root."""
    gen = torch.Generator().manual_seed(seed)
    (root / "raw").mkdir(parents=True, exist_ok=True)
    (root / "expertC").mkdir(parents=True, exist_ok=True)
    h, w = size
    low = [f"low{i:02d}" for i in range(n_low)]
    high = [f"high{i:02d}" for i in range(n_high)]
    val = [f"val{i:02d}" for i in range(n_val)]
    test = [f"test{i:02d}" for i in range(n_test)]
    for i in low:
        write_png(root / "raw" / f"{i}.png", smooth_image(gen, h, w, 0.0, 0.45))
    for i in high:
        write_png(root / "expertC" / f"{i}.png", smooth_image(gen, h, w, 0.35, 1.0))
    for i in val + test:
        base = smooth_image(gen, h, w)
        write_png(root / "raw" / f"{i}.png", 0.45 * base)
        write_png(root / "expertC" / f"{i}.png", 0.35 + 0.65 * base)
    SplitManifest(low, high, val, test, seed=seed).save(root / "manifest.txt")
    return root


@pytest.fixture
def toy_corpus(tmp_path):
    return make_toy_corpus(tmp_path / "corpus")


def toy_config(corpus: Path, out_dir: Path, **kw) -> TrainConfig:
    base = dict(
        base_channels=4,
        disc_channels=8,
        epochs=5,
        decay_start=3,
        batch_size=4,
        crop=32,
        long_side=0,
        vgg_weights="random",
        data_root=str(corpus),
        manifest=str(corpus / "manifest.txt"),
        out_dir=str(out_dir),
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
