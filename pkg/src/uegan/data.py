"""Unpaired data pipeline: split manifests, image preprocessing and random patch sampling.

Expected corpus layout::

    <root>/raw/       low-quality inputs
    <root>/expertC/   expert-retouched versions, same file stems
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

RAW_DIR = "raw"
EXPERT_DIR = "expertC"
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

FULL_CORPUS = 5000
FULL_SIZES = {"low_train": 2250, "high_train": 2250, "val": 100, "test": 400}
SECTIONS = tuple(FULL_SIZES)


@dataclass
class SplitManifest:
    low_train: list[str]
    high_train: list[str]
    val: list[str]
    test: list[str]
    seed: int = 0

    def sections(self) -> dict[str, list[str]]:
        return {name: getattr(self, name) for name in SECTIONS}

    def save(self, path: str | Path) -> None:
        lines = [f"# seed: {self.seed}"]
        for name, ids in self.sections().items():
            lines.append(f"[{name}]")
            lines.extend(ids)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> SplitManifest:
        sections: dict[str, list[str]] = {name: [] for name in SECTIONS}
        seed = 0
        current = None
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("# seed:"):
                seed = int(line.split(":", 1)[1])
            elif line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                if current not in sections:
                    raise ValueError(f"{path}: unknown manifest section {current!r}")
            elif current is None:
                raise ValueError(f"{path}: id {line!r} appears before any section header")
            else:
                sections[current].append(line)
        return cls(seed=seed, **sections)


def split_sizes(n: int) -> dict[str, int]:
    if n >= FULL_CORPUS:
        return dict(FULL_SIZES)
    return {name: size * n // FULL_CORPUS for name, size in FULL_SIZES.items()}


def build_splits(raw_ids: Iterable[str], retouched_ids: Iterable[str], seed: int = 0) -> SplitManifest:
    """Randomly partition the photos present in both sets into four disjoint splits.

    Uses 2250/2250/100/400 for a 5000-photo corpus and the same proportions
    (rounded down) for smaller ones.
    """
    common = sorted(set(raw_ids) & set(retouched_ids))
    sizes = split_sizes(len(common))
    empty = [name for name, size in sizes.items() if size == 0]
    if empty:
        raise ValueError(
            f"corpus of {len(common)} paired photos is too small: splits {empty} would be empty "
            f"(need at least {FULL_CORPUS // FULL_SIZES['val']})"
        )
    order = np.random.default_rng(seed).permutation(len(common))
    shuffled = [common[i] for i in order]
    out, start = {}, 0
    for name in SECTIONS:
        out[name] = shuffled[start : start + sizes[name]]
        start += sizes[name]
    return SplitManifest(seed=seed, **out)


def list_image_ids(directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory not found: {directory}")
    return {
        p.stem: p for p in sorted(directory.iterdir()) if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    }


@dataclass
class Corpus:
    root: Path
    raw: dict[str, Path] = field(default_factory=dict)
    expert: dict[str, Path] = field(default_factory=dict)

    @classmethod
    def scan(cls, root: str | Path) -> Corpus:
        root = Path(root)
        return cls(root, list_image_ids(root / RAW_DIR), list_image_ids(root / EXPERT_DIR))

    def splits(self, seed: int = 0) -> SplitManifest:
        return build_splits(self.raw, self.expert, seed)

    def pairs(self, ids: Sequence[str]) -> list[tuple[str, Path, Path | None]]:
        return [(i, self.raw[i], self.expert.get(i)) for i in ids]


def _scaled_size(width: int, height: int, long_side: int) -> tuple[int, int]:
    long, short = max(width, height), min(width, height)
    # round half up in exact integer arithmetic
    new_short = (2 * short * long_side + long) // (2 * long)
    return (long_side, new_short) if width >= height else (new_short, long_side)


def preprocess(image_file: str | Path, long_side: int | None = 512) -> torch.Tensor:
    """Decode an 8-bit RGB image, resize its long side to ``long_side``
    (bilinear, aspect preserved) and return a float32 3 x H x W tensor in [0, 1].

    ``long_side`` of ``None`` or 0 keeps the native size.
    """
    path = Path(image_file)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode != "RGB":
                raise ValueError(f"{path}: expected an 8-bit RGB image, got mode {img.mode}")
            if long_side and max(img.size) != long_side:
                img = img.resize(_scaled_size(*img.size, long_side), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise ValueError(f"{path}: cannot decode image ({e})") from e
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).float().div_(255.0)


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """3 x H x W in [0, 1] to H x W x 3 uint8."""
    arr = image.detach().clamp(0, 1).mul(255).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def save_image(image: torch.Tensor, path: str | Path) -> None:
    Image.fromarray(to_uint8(image)).save(path)


def build_pool(
    paths: Iterable[Path], crop: int, long_side: int | None = 512
) -> tuple[list[torch.Tensor], list[Path]]:
    """Preprocess images for patch sampling; images shorter than ``crop`` are rejected, never padded."""
    pool, rejected = [], []
    for p in paths:
        img = preprocess(p, long_side)
        if min(img.shape[-2:]) < crop:
            log.warning("rejecting %s: %dx%d is smaller than the %d crop", p, img.shape[-1], img.shape[-2], crop)
            rejected.append(Path(p))
        else:
            pool.append(img)
    return pool, rejected


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def sample_patches(
    pool: Sequence[torch.Tensor],
    batch_size: int,
    crop: int,
    rng: np.random.Generator,
    flip: bool = False,
) -> torch.Tensor:
    if not pool:
        raise ValueError("cannot sample from an empty pool")
    idx = rng.choice(len(pool), size=batch_size, replace=len(pool) < batch_size)
    patches = []
    for i in idx:
        img = pool[i]
        h, w = img.shape[-2:]
        if h < crop or w < crop:
            raise ValueError(f"pool image {i} ({w}x{h}) is smaller than the {crop} crop")
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        patch = img[:, top : top + crop, left : left + crop]
        if flip and rng.random() < 0.5:
            patch = patch.flip(-1)
        patches.append(patch)
    return torch.stack(patches)


def sample_batch(
    low_pool: Sequence[torch.Tensor],
    high_pool: Sequence[torch.Tensor],
    batch_size: int,
    crop: int = 256,
    rng=None,
    flip: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw an unpaired (low, high) pair of ``batch_size x 3 x crop x crop`` batches.

    ``rng`` is either a pair of generators, one per pool, or a seed /
    generator that gets split into two independent streams. Either way the
    draws from one pool never depend on the other pool's contents.
    """
    if isinstance(rng, tuple):
        low_rng, high_rng = (_as_rng(r) for r in rng)
    else:
        low_rng, high_rng = _as_rng(rng).spawn(2)
    low = sample_patches(low_pool, batch_size, crop, low_rng, flip)
    high = sample_patches(high_pool, batch_size, crop, high_rng, flip)
    return low, high


def epoch_rngs(seed: int, epoch: int) -> tuple[np.random.Generator, np.random.Generator]:
    """One stream per pool per epoch, derived from the run seed."""
    return np.random.default_rng([seed, epoch, 0]), np.random.default_rng([seed, epoch, 1])
