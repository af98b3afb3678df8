"""Adversarial training: alternating D/G updates, lr schedule, checkpoints and CSV loss log."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from uegan.config import TrainConfig, save_config
from uegan.data import Corpus, SplitManifest, build_pool, epoch_rngs, sample_batch
from uegan.discriminator import MultiScaleDiscriminator
from uegan.evaluator import evaluate
from uegan.generator import JointGenerator, build_generator
from uegan.losses import (
    RANDOM_WEIGHTS,
    LossRecord,
    LossWeights,
    PerceptualExtractor,
    discriminator_loss,
    fidelity_loss,
    generator_quality_loss,
    identity_loss,
    total_g_loss,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "epoch", "d_loss", "g_qua", "g_fid", "g_idt", "g_total", "lr")
CHECKPOINT_MAGIC = b"UEGAN-CHECKPOINT v1\n"


class NonFiniteLoss(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Constant ``config.lr`` until ``decay_start``, then linear decay that
    would reach zero at ``epoch == config.epochs``."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.decay_start:
        return config.lr
    return config.lr * (config.epochs - epoch) / (config.epochs - config.decay_start)


@dataclass
class Checkpoint:
    generator_state: dict
    discriminator_state: dict
    optimizer_states: dict
    epoch: int
    step: int
    rng_state: torch.Tensor
    config: dict
    config_hash: str
    val_psnr: float = math.nan
    path: Path | None = field(default=None, compare=False)

    def save(self, path: str | Path) -> Path:
        payload = {
            "generator_state": self.generator_state,
            "discriminator_state": self.discriminator_state,
            "optimizer_states": self.optimizer_states,
            "epoch": self.epoch,
            "step": self.step,
            "rng_state": self.rng_state,
            "config": self.config,
            "config_hash": self.config_hash,
            "val_psnr": self.val_psnr,
        }
        buf = io.BytesIO()
        torch.save(payload, buf)
        data = buf.getvalue()
        header = {
            "sha256": hashlib.sha256(data).hexdigest(),
            "size": len(data),
            "epoch": self.epoch,
            "step": self.step,
            "config_hash": self.config_hash,
            "variant": self.config.get("variant"),
        }
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(json.dumps(header).encode() + b"\n")
            f.write(data)
        tmp.replace(path)
        self.path = path
        return path

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                magic = f.read(len(CHECKPOINT_MAGIC))
                if magic != CHECKPOINT_MAGIC:
                    raise CheckpointError(f"{path}: integrity check failed: not a UEGAN checkpoint")
                header = json.loads(f.readline())
                data = f.read()
        except OSError as e:
            raise CheckpointError(f"{path}: cannot read checkpoint: {e}") from e
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise CheckpointError(f"{path}: integrity check failed: corrupt header") from e
        if len(data) != header.get("size") or hashlib.sha256(data).hexdigest() != header.get("sha256"):
            raise CheckpointError(f"{path}: integrity check failed: sha256 mismatch")
        payload = torch.load(io.BytesIO(data), map_location="cpu", weights_only=True)
        return cls(**payload, path=path)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)


def load_generator(checkpoint: Checkpoint | str | Path) -> JointGenerator:
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    generator = build_generator(checkpoint.train_config.generator_config)
    generator.load_state_dict(checkpoint.generator_state)
    generator.eval()
    return generator


@dataclass
class TrainState:
    generator: JointGenerator
    discriminator: MultiScaleDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    extractor: PerceptualExtractor
    weights: LossWeights = field(default_factory=LossWeights)
    fidelity_squared: bool = True
    epoch: int = 0
    step: int = 0

    def set_lr(self, lr: float) -> None:
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    def checkpoint(self, config: TrainConfig, val_psnr: float = math.nan) -> Checkpoint:
        return Checkpoint(
            generator_state=copy.deepcopy(self.generator.state_dict()),
            discriminator_state=copy.deepcopy(self.discriminator.state_dict()),
            optimizer_states={
                "generator": copy.deepcopy(self.opt_g.state_dict()),
                "discriminator": copy.deepcopy(self.opt_d.state_dict()),
            },
            epoch=self.epoch,
            step=self.step,
            rng_state=torch.get_rng_state(),
            config=config.to_dict(),
            config_hash=config.hash(),
            val_psnr=val_psnr,
        )

    def restore(self, ckpt: Checkpoint) -> None:
        self.generator.load_state_dict(ckpt.generator_state)
        self.discriminator.load_state_dict(ckpt.discriminator_state)
        self.opt_g.load_state_dict(ckpt.optimizer_states["generator"])
        self.opt_d.load_state_dict(ckpt.optimizer_states["discriminator"])
        torch.set_rng_state(ckpt.rng_state)
        self.epoch = ckpt.epoch
        self.step = ckpt.step


def make_extractor(config: TrainConfig) -> PerceptualExtractor:
    weights = config.vgg_weights or None
    if weights == RANDOM_WEIGHTS:
        log.warning("using randomly initialised VGG-19 features for the fidelity loss")
    return PerceptualExtractor(weights, sha256=config.vgg_sha256 or None, seed=config.seed)


def build_state(config: TrainConfig, extractor: PerceptualExtractor | None = None) -> TrainState:
    torch.manual_seed(config.seed)
    generator = build_generator(config.generator_config)
    discriminator = MultiScaleDiscriminator(base_channels=config.disc_channels)
    betas = (config.beta1, config.beta2)
    return TrainState(
        generator=generator,
        discriminator=discriminator,
        opt_g=torch.optim.Adam(generator.parameters(), lr=config.lr, betas=betas),
        opt_d=torch.optim.Adam(discriminator.parameters(), lr=config.lr, betas=betas),
        extractor=extractor if extractor is not None else make_extractor(config),
        weights=config.weights,
        fidelity_squared=config.fidelity_squared,
    )


def discriminator_step(low: torch.Tensor, high: torch.Tensor, state: TrainState) -> torch.Tensor:
    """Update D on real low, real high and generated images; G is only run forward."""
    G, D = state.generator, state.discriminator
    D.requires_grad_(True)
    with torch.no_grad():
        fake = G(low)
    loss_d = discriminator_loss(D(low), D(high), D(fake))
    if not torch.isfinite(loss_d):
        raise NonFiniteLoss(f"non-finite discriminator loss {loss_d.item()}")
    state.opt_d.zero_grad(set_to_none=True)
    loss_d.backward()
    state.opt_d.step()
    return loss_d.detach()


def generator_step(
    low: torch.Tensor, high: torch.Tensor, state: TrainState
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Update G against the current D; D is frozen for the duration."""
    G, D = state.generator, state.discriminator
    D.requires_grad_(False)
    try:
        fake = G(low)
        with torch.no_grad():
            scores_high = D(high)
        g_qua = generator_quality_loss(scores_high, D(fake))
        g_fid = fidelity_loss(low, fake, state.extractor, squared=state.fidelity_squared)
        g_idt = identity_loss(high, G(high))
        try:
            total = total_g_loss(g_qua, g_fid, g_idt, state.weights)
        except ValueError as e:
            raise NonFiniteLoss(str(e)) from e
        state.opt_g.zero_grad(set_to_none=True)
        total.backward()
        state.opt_g.step()
    finally:
        D.requires_grad_(True)
    return g_qua.detach(), g_fid.detach(), g_idt.detach()


def training_step(low: torch.Tensor, high: torch.Tensor, state: TrainState) -> LossRecord:
    """One discriminator update followed by one generator update on an unpaired batch."""
    if low.shape[-2:] != high.shape[-2:]:
        raise ValueError(f"low and high batches differ in crop size: {tuple(low.shape)} vs {tuple(high.shape)}")
    state.generator.train()
    state.discriminator.train()
    loss_d = discriminator_step(low, high, state)
    g_qua, g_fid, g_idt = generator_step(low, high, state)
    return LossRecord.from_parts(loss_d.item(), g_qua.item(), g_fid.item(), g_idt.item(), state.weights)


def _rewrite_log(path: Path, keep_until_step: int) -> None:
    """Drop log rows written after the checkpoint we resume from."""
    if not path.exists():
        return
    with open(path, newline="") as f:
        rows = [r for r in csv.DictReader(f) if int(r["step"]) <= keep_until_step]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def _load_manifest(config: TrainConfig, corpus: Corpus) -> SplitManifest:
    if config.manifest:
        return SplitManifest.load(config.manifest)
    return corpus.splits(config.seed)


def train(
    config: TrainConfig,
    resume: str | Path | None = None,
    extractor: PerceptualExtractor | None = None,
    stop_after_epoch: int | None = None,
) -> Checkpoint:
    """Run (or resume) a full training job and return the final checkpoint.

    Writes into ``config.out_dir``: ``effective_config.ini``, ``splits.txt``,
    ``metrics.csv`` (one row per step), ``checkpoints/epoch_NNN.pt`` after
    every epoch, ``checkpoints/best.pt`` (highest validation PSNR, when a
    paired validation split exists) and ``summary.json``.
    ``stop_after_epoch`` ends the run early, as if interrupted.
    """
    if config.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
    ckpt = None
    if resume is not None:
        # validate before touching the run directory
        ckpt = Checkpoint.load(resume)
        if ckpt.config_hash != config.hash():
            raise CheckpointError(
                f"{resume}: config hash {ckpt.config_hash} does not match the current config {config.hash()}"
            )
    out = Path(config.out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "effective_config.ini")

    corpus = Corpus.scan(config.data_root)
    manifest = _load_manifest(config, corpus)
    manifest.save(out / "splits.txt")
    low_pool, _ = build_pool([corpus.raw[i] for i in manifest.low_train], config.crop, config.long_side)
    high_pool, _ = build_pool([corpus.expert[i] for i in manifest.high_train], config.crop, config.long_side)
    if not low_pool or not high_pool:
        raise ValueError("training pools are empty after preprocessing")
    val_pairs = [p for p in corpus.pairs(manifest.val) if p[2] is not None]

    state = build_state(config, extractor)
    log_path = out / "metrics.csv"
    best_psnr = -math.inf
    last_ckpt: Path | None = None
    if ckpt is not None:
        state.restore(ckpt)
        last_ckpt = ckpt.path
        best_psnr = _best_so_far(ckpt_dir, ckpt.val_psnr)
        _rewrite_log(log_path, ckpt.step)
        log.info("resumed from %s at epoch %d, step %d", resume, ckpt.epoch, ckpt.step)
    else:
        with open(log_path, "w", newline="") as f:
            csv.writer(f).writerow(CSV_COLUMNS)

    steps = config.steps_per_epoch or max(1, len(low_pool) // config.batch_size)
    final = None
    end_epoch = config.epochs if stop_after_epoch is None else min(config.epochs, stop_after_epoch)
    for epoch in range(state.epoch, end_epoch):
        lr = lr_at(epoch, config)
        state.set_lr(lr)
        rngs = epoch_rngs(config.seed, epoch)
        with open(log_path, "a", newline="") as f:
            writer = csv.writer(f)
            for _ in range(steps):
                low, high = sample_batch(low_pool, high_pool, config.batch_size, config.crop, rngs, config.flip)
                try:
                    rec = training_step(low, high, state)
                except NonFiniteLoss as e:
                    raise NonFiniteLoss(f"{e}; last good checkpoint: {last_ckpt}") from e
                state.step += 1
                writer.writerow([state.step, epoch, repr(rec.d_loss), repr(rec.g_qua), repr(rec.g_fid),
                                 repr(rec.g_idt), repr(rec.g_total), repr(lr)])
        state.epoch = epoch + 1

        val_psnr = math.nan
        if val_pairs:
            snapshot = copy.deepcopy(state.generator)
            val_psnr = evaluate(snapshot, val_pairs, config.long_side).mean_psnr
        final = state.checkpoint(config, val_psnr)
        last_ckpt = final.save(ckpt_dir / f"epoch_{state.epoch:03d}.pt")
        if val_psnr > best_psnr:
            best_psnr = val_psnr
            final.save(ckpt_dir / "best.pt")
            final.path = last_ckpt
        log.info("epoch %d/%d done (step %d, val PSNR %.3f)", state.epoch, config.epochs, state.step, val_psnr)

    if final is None:
        final = state.checkpoint(config)
        final.path = last_ckpt
    _write_summary(out, final, ckpt_dir)
    return final


def _best_so_far(ckpt_dir: Path, fallback: float) -> float:
    best = ckpt_dir / "best.pt"
    if best.exists():
        return Checkpoint.load(best).val_psnr
    return fallback if not math.isnan(fallback) else -math.inf


def _write_summary(out: Path, final: Checkpoint, ckpt_dir: Path) -> None:
    best = ckpt_dir / "best.pt"
    summary = {
        "last": {"path": str(final.path), "epoch": final.epoch, "step": final.step, "val_psnr": final.val_psnr},
        "best": None,
        "config_hash": final.config_hash,
    }
    if best.exists():
        b = Checkpoint.load(best)
        summary["best"] = {"path": str(best), "epoch": b.epoch, "val_psnr": b.val_psnr}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, allow_nan=True))
