"""Variant x identity-weight ablation matrix at toy scale."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

from uegan.config import TrainConfig
from uegan.data import Corpus, SplitManifest
from uegan.evaluator import evaluate
from uegan.generator import VARIANTS, build_generator
from uegan.losses import PerceptualExtractor
from uegan.trainer import load_generator, make_extractor, train

log = logging.getLogger(__name__)

IDENTITY_WEIGHTS = (0.0, 0.1)

VARIANT_LABELS = {
    "full": "UEGAN",
    "no_gam": "UEGAN w/o GAM",
    "no_gam_no_mm": "UEGAN w/o GAM and MM",
    "gam_unet": "GAM + U-Net",
    "gam_mm_pixel": "GAM + MM-P",
}


@dataclass
class AblationRow:
    variant: str
    lambda_idt: float
    psnr: float
    ssim: float
    g_total: float
    out_dir: str

    @property
    def label(self) -> str:
        loss = "w/o L_idt" if self.lambda_idt == 0 else "w/ L_idt"
        return f"{VARIANT_LABELS[self.variant]}, {loss}"


class AblationError(RuntimeError):
    pass


def run_ablation(base: TrainConfig, extractor: PerceptualExtractor | None = None) -> list[AblationRow]:
    # fail fast: every variant must build before any training starts
    for variant in VARIANTS:
        try:
            build_generator(replace(base, variant=variant).generator_config)
        except Exception as e:
            raise AblationError(f"variant {variant} failed to build: {e}") from e

    extractor = extractor if extractor is not None else make_extractor(base)
    root = Path(base.out_dir)
    rows = []
    for variant in VARIANTS:
        for lam in IDENTITY_WEIGHTS:
            cfg = replace(base, variant=variant, lambda_idt=lam, out_dir=str(root / f"{variant}-idt{lam:g}"))
            log.info("ablation run %s, lambda_idt=%g", variant, lam)
            final = train(cfg, extractor=extractor)
            rows.append(_score(cfg, final, variant, lam))
    return rows


def _score(cfg: TrainConfig, final, variant: str, lam: float) -> AblationRow:
    corpus = Corpus.scan(cfg.data_root)
    manifest = SplitManifest.load(Path(cfg.out_dir) / "splits.txt")
    pairs = [p for p in corpus.pairs(manifest.test or manifest.val) if p[2] is not None]
    psnr = ssim = math.nan
    if pairs:
        report = evaluate(load_generator(final), pairs, cfg.long_side)
        psnr, ssim = report.mean_psnr, report.mean_ssim
    g_total = _last_g_total(Path(cfg.out_dir) / "metrics.csv")
    return AblationRow(variant, lam, psnr, ssim, g_total, cfg.out_dir)


def _last_g_total(path: Path) -> float:
    lines = path.read_text().strip().splitlines()
    if len(lines) < 2:
        return math.nan
    return float(lines[-1].split(",")[6])


def format_table(rows: list[AblationRow]) -> str:
    header = f"{'Method':<38}| {'PSNR':>8} | {'SSIM':>7} | {'NIMA':>5} | {'final g_total':>13}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.label:<38}| {r.psnr:>8.2f} | {r.ssim:>7.4f} | {'n/a':>5} | {r.g_total:>13.4f}"
        )
    return "\n".join(lines)
