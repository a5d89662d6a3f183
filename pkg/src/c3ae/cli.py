"""Command-line interface.

Exit codes: 0 success, 2 usage or I/O error, 3 domain or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, data, model, synth, training
from .color import DomainError, as_illuminant, correct_image
from .imageio import ImageFormatError, load_image, save_image
from .metrics import format_csv, format_table

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN = 0, 2, 3
METHODS = ("c3ae",) + tuple(baselines.BASELINES)

log = logging.getLogger("c3ae")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness (default: %(default)s)")
    p.add_argument("--workers", type=int, default=1, help="data/evaluation worker threads (default: %(default)s)")
    p.add_argument("--config", type=Path, default=None,
                   help="UTF-8 file of key=value defaults; command-line flags win (default: none)")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch log lines (default: off)")


def _train_flags(p, epochs: int, batch: int):
    p.add_argument("--epochs", type=int, default=epochs, help="training epochs (default: %(default)s)")
    p.add_argument("--batch-size", type=int, default=batch, help="batch size (default: %(default)s)")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default: %(default)s)")
    p.add_argument("--out", type=Path, required=True, help="output model file")
    p.add_argument("--report", type=Path, default=None,
                   help="loss-curve CSV (default: <out>.csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c3ae", description="Colour-constancy autoencoder toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = sub.choices

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--labeled", type=int, default=60, help="labeled scenes (default: %(default)s)")
    p.add_argument("--unlabeled", type=int, default=200, help="unlabeled scenes (default: %(default)s)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--width", type=int, default=192, help="scene width (default: %(default)s)")
    p.add_argument("--height", type=int, default=192, help="scene height (default: %(default)s)")
    p.add_argument("--patches", type=int, default=40, help="rectangles per scene (default: %(default)s)")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std (default: %(default)s)")
    p.add_argument("--balanced", action="store_true", help="force grey-world balanced scenes (default: off)")
    p.add_argument("--prior", choices=("cluster", "uniform-chromaticity"), default="cluster",
                   help="illuminant prior (default: %(default)s)")
    p.add_argument("--split", choices=data.SPLITS, default="train", help="split tag (default: %(default)s)")
    p.add_argument("--camera", default="synth", help="camera id (default: %(default)s)")
    p.add_argument("--format", choices=("png", "ppm"), default="png", help="image format (default: %(default)s)")

    p = sub.add_parser("pretrain", help="reconstruction pre-training on labeled + unlabeled images")
    _common(p)
    p.add_argument("--data", type=Path, action="append", required=True,
                   help="manifest file or dataset directory (repeatable)")
    p.add_argument("--init", type=Path, default=None, help="start from this model (default: fresh)")
    p.add_argument("--code-channels", type=int, default=50, help="code width of a fresh model (default: %(default)s)")
    _train_flags(p, 1000, 10)

    p = sub.add_parser("finetune", help="fine-tune the estimator on labeled images")
    _common(p)
    p.add_argument("--data", type=Path, action="append", required=True, help="labeled manifest (repeatable)")
    p.add_argument("--init", type=Path, default=None, help="start from this model (default: fresh)")
    p.add_argument("--code-channels", type=int, default=50, help="code width of a fresh model (default: %(default)s)")
    p.add_argument("--val", type=Path, default=None, help="validation manifest (default: none)")
    _train_flags(p, 1000, 20)

    p = sub.add_parser("train-composite", help="semi-supervised composite-loss training plus fine-tuning")
    _common(p)
    p.add_argument("--labeled", type=Path, required=True, help="labeled manifest")
    p.add_argument("--unlabeled", type=Path, default=None, help="unlabeled manifest (default: none)")
    p.add_argument("--init", type=Path, default=None, help="start from this model (default: fresh)")
    p.add_argument("--code-channels", type=int, default=3, help="code width of a fresh model (default: %(default)s)")
    p.add_argument("--alpha", type=float, default=0.5, help="reconstruction weight (default: %(default)s)")
    p.add_argument("--finetune-epochs", type=int, default=1000, help="phase-2 epochs (default: %(default)s)")
    p.add_argument("--finetune-batch-size", type=int, default=20, help="phase-2 batch size (default: %(default)s)")
    p.add_argument("--val", type=Path, default=None, help="validation manifest (default: none)")
    _train_flags(p, 1000, 10)

    p = sub.add_parser("eval", help="evaluate an estimator on a labeled manifest")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="labeled manifest")
    p.add_argument("--method", choices=METHODS, default="c3ae", help="estimator (default: %(default)s)")
    p.add_argument("--model", type=Path, default=None, help="model file (required for c3ae)")
    p.add_argument("--csv", type=Path, default=None, help="per-image results CSV (default: none)")
    p.add_argument("--table-csv", type=Path, default=None, help="summary row as CSV (default: none)")

    p = sub.add_parser("correct", help="white-balance one image")
    _common(p)
    p.add_argument("--input", type=Path, required=True, help="input PNG/PPM")
    p.add_argument("--output", type=Path, required=True, help="output PNG/PPM")
    p.add_argument("--method", choices=METHODS, default="c3ae", help="estimator (default: %(default)s)")
    p.add_argument("--model", type=Path, default=None, help="model file (required for c3ae)")
    p.add_argument("--illuminant", default=None, help="r,g,b illuminant; skips estimation (default: none)")
    return parser


def _read_config(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_args(argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path, default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None or known.command not in parser.commands:
        return parser.parse_args(argv)
    sub = parser.commands[known.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in _read_config(known.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {known.command}")
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        conv = action.type or str
        try:
            value = conv(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {raw!r}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"bad value for {key}: {raw!r}")
        if isinstance(action, argparse._AppendAction):
            if any(opt in argv for opt in action.option_strings):
                continue  # flags replace, rather than extend, config lists
            value = [value]
        defaults[key] = value
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _init_params(args, code_channels: int | None = None) -> model.CAEParams:
    if args.init is not None:
        return model.load(args.init, code_channels=code_channels)
    cfg = model.CAEConfig(code_channels=args.code_channels)
    if code_channels is not None and cfg.code_channels != code_channels:
        raise model.ConfigurationError(
            f"this command needs a {code_channels}-channel code, got --code-channels {cfg.code_channels}"
        )
    return model.build(cfg, args.seed)


def _finish_training(args, params, report):
    model.save(params, args.out)
    report_path = args.report or args.out.with_suffix(args.out.suffix + ".csv")
    report.to_csv(report_path)
    print(f"model: {args.out}")
    print(f"report: {report_path}")
    if report.val_stats is not None:
        print(format_table({"validation": report.val_stats}))


def cmd_synth(args) -> int:
    cfg = synth.SceneConfig(width=args.width, height=args.height, num_patches=args.patches,
                            noise_std=args.noise, seed=args.seed, balanced=args.balanced)
    prior = synth.IlluminantPrior(mode=args.prior)
    synth.gen_dataset(args.labeled, args.unlabeled, cfg, prior, args.out, split=args.split,
                      camera=args.camera, image_format=args.format, workers=args.workers)
    print(args.out / data.MANIFEST_NAME)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    params = _init_params(args)
    manifests = [data.load_manifest(p) for p in args.data]
    cfg = training.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    params, report = training.pretrain(params, manifests, cfg)
    _finish_training(args, params, report)
    return EXIT_OK


def cmd_finetune(args) -> int:
    params = _init_params(args)
    manifests = [data.load_manifest(p) for p in args.data]
    val = data.load_manifest(args.val) if args.val else None
    cfg = training.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    params, report = training.finetune(params, manifests, cfg, val=val)
    _finish_training(args, params, report)
    return EXIT_OK


def cmd_train_composite(args) -> int:
    params = _init_params(args, code_channels=3)
    labeled = data.load_manifest(args.labeled)
    unlabeled = data.load_manifest(args.unlabeled) if args.unlabeled else None
    val = data.load_manifest(args.val) if args.val else None
    cfg = training.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, alpha=args.alpha, lr=args.lr,
                               seed=args.seed, finetune_epochs=args.finetune_epochs,
                               finetune_batch_size=args.finetune_batch_size)
    params, report = training.train_composite(params, labeled, unlabeled, cfg, val=val)
    _finish_training(args, params, report)
    return EXIT_OK


def _estimator(args):
    if args.method == "c3ae":
        if args.model is None:
            raise UsageError("--model is required for --method c3ae")
        return model.load(args.model)
    return baselines.BASELINES[args.method]


def cmd_eval(args) -> int:
    manifest = data.load_manifest(args.data)
    estimator = _estimator(args)
    stats, _ = data.evaluate(estimator, manifest, seed=args.seed, csv_path=args.csv, workers=args.workers)
    rows = {args.method: stats}
    print(format_table(rows))
    if args.table_csv is not None:
        args.table_csv.write_text(format_csv(rows), encoding="utf-8")
    return EXIT_OK


def cmd_correct(args) -> int:
    img = load_image(args.input)
    if args.illuminant is not None:
        try:
            ill = as_illuminant([float(v) for v in args.illuminant.split(",")])
        except ValueError as exc:
            raise UsageError(f"--illuminant must be r,g,b, got {args.illuminant!r}") from exc
    else:
        estimator = _estimator(args)
        if isinstance(estimator, model.CAEParams):
            ill = data.infer_illuminant(estimator, img, np.random.default_rng(args.seed))
        else:
            ill = estimator(img)
    save_image(args.output, correct_image(img, ill))
    print("illuminant: " + ",".join(f"{v:.6f}" for v in ill))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "train-composite": cmd_train_composite,
    "eval": cmd_eval,
    "correct": cmd_correct,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, FileNotFoundError) as exc:
        print(f"c3ae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, OSError, data.ManifestError, ImageFormatError, model.ModelFormatError) as exc:
        print(f"c3ae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, model.ConfigurationError, ValueError) as exc:
        print(f"c3ae: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
