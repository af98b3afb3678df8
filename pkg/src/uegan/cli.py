"""Command-line entry point: ``uegan {train,enhance,evaluate,ablate,make-splits}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Config keys can be overridden with ``--override key=value`` (repeatable) or
directly as ``--key=value``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from uegan.config import ConfigError, TrainConfig, load_config
from uegan.data import Corpus, SplitManifest, preprocess, save_image
from uegan.generator import enhance_any_size

log = logging.getLogger("uegan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        # unknown --key=value tokens are config overrides; never prefix-match them to flags
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(message)


def build_parser() -> Parser:
    parser = Parser(prog="uegan", description="Unsupervised image enhancement GAN")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=Parser)

    def config_args(p):
        p.add_argument("--config", type=Path, help="INI config file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model")
    config_args(p)
    p.add_argument("--output-dir", type=Path, help="run directory (overrides out_dir)")
    p.add_argument("--input-dir", type=Path, help="corpus root (overrides data_root)")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")

    p = sub.add_parser("enhance", help="enhance every image in a directory")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input-dir", type=Path, required=True)
    p.add_argument("--output-dir", type=Path, required=True)

    p = sub.add_parser("evaluate", help="PSNR/SSIM on the test split")
    config_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input-dir", type=Path, help="corpus root (overrides data_root)")
    p.add_argument("--output-dir", type=Path, required=True)
    p.add_argument("--split", choices=("test", "val"), default="test")

    p = sub.add_parser("ablate", help="run the variant x identity-loss ablation matrix")
    config_args(p)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--input-dir", type=Path)

    p = sub.add_parser("make-splits", help="write the split manifest for a corpus")
    config_args(p)
    p.add_argument("--input-dir", type=Path, help="corpus root (overrides data_root)")
    p.add_argument("--output-dir", type=Path, required=True)
    return parser


def _config(args, extra: list[str]) -> TrainConfig:
    overrides = list(args.override)
    for token in extra:
        if not token.startswith("--") or "=" not in token:
            raise UsageError(f"unrecognized argument: {token}")
        overrides.append(token[2:])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "output_dir", None) is not None and args.verb in ("train", "ablate"):
        overrides.append(f"out_dir={args.output_dir}")
    if getattr(args, "input_dir", None) is not None:
        overrides.append(f"data_root={args.input_dir}")
    return load_config(args.config, overrides)


def cmd_train(args, extra) -> int:
    from uegan.trainer import train

    config = _config(args, extra)
    final = train(config, resume=args.resume)
    print(f"trained {final.epoch} epochs ({final.step} steps); last checkpoint {final.path}")
    return EXIT_OK


def cmd_enhance(args, extra) -> int:
    from uegan.trainer import Checkpoint, load_generator

    if extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    ckpt = Checkpoint.load(args.checkpoint)
    generator = load_generator(ckpt)
    long_side = ckpt.train_config.long_side
    if not args.input_dir.is_dir():
        raise UsageError(f"input directory not found: {args.input_dir}")
    args.output_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in args.input_dir.iterdir() if p.is_file() and not p.name.startswith("."))
    rows = []
    for path in files:
        try:
            x = preprocess(path, long_side)
            save_image(enhance_any_size(x, generator), args.output_dir / path.name)
            rows.append((path.name, "processed", f"{x.shape[-1]}x{x.shape[-2]}"))
        except (ValueError, OSError) as e:
            log.warning("skipping %s: %s", path, e)
            rows.append((path.name, "skipped", str(e)))
    with open(args.output_dir / "manifest.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file", "status", "detail"])
        writer.writerows(rows)
    if not files:
        log.warning("no files found in %s", args.input_dir)
        return EXIT_OK
    done = sum(r[1] == "processed" for r in rows)
    print(f"enhanced {done}/{len(files)} images into {args.output_dir}")
    return EXIT_OK if done else EXIT_RUNTIME


def cmd_evaluate(args, extra) -> int:
    from uegan.evaluator import evaluate
    from uegan.trainer import Checkpoint, load_generator

    ckpt = Checkpoint.load(args.checkpoint)
    config = _config(args, extra) if (args.config or args.override or extra or args.input_dir) else ckpt.train_config
    corpus = Corpus.scan(config.data_root)
    manifest = SplitManifest.load(config.manifest) if config.manifest else corpus.splits(config.seed)
    pairs = corpus.pairs(getattr(manifest, args.split))
    report = evaluate(load_generator(ckpt), pairs, config.long_side)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.output_dir / "metrics.csv")
    summary = report.summary(name=f"UEGAN ({ckpt.config.get('variant')})")
    (args.output_dir / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_ablate(args, extra) -> int:
    from uegan.ablation import format_table, run_ablation

    config = _config(args, extra)
    rows = run_ablation(config)
    table = format_table(rows)
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(config.out_dir) / "ablation.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_make_splits(args, extra) -> int:
    config = _config(args, extra)
    manifest = Corpus.scan(config.data_root).splits(config.seed)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    out = args.output_dir / "splits.txt"
    manifest.save(out)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in manifest.sections().items())
    print(f"wrote {out} ({sizes})")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "make-splits": cmd_make_splits,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except UsageError as e:
        print(f"uegan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.verb](args, extra)
    except (UsageError, ConfigError) as e:
        print(f"uegan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # runtime failures get a one-line message and exit 2
        log.debug("command failed", exc_info=True)
        print(f"uegan: {args.verb} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
