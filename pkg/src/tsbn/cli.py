"""Command-line entry point: ``tsbn {synth,gsim-preview,train,cv}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets, gsim
from .checkpoint import save_checkpoint
from .errors import DivergenceError, TsbnError
from .metrics import report_to_json, roc_to_csv
from .trainer import METHODS, TrainConfig, cross_validate, evaluate, train

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3

# flag name -> TrainConfig field
CONFIG_FLAGS = {
    "lr": float, "weight_decay": float, "batch_size": int, "epochs": int, "d": float,
    "alpha": float, "w": float, "K": int, "seed": int, "variant": str,
    "pretrain_epochs": int, "height": int, "width": int,
}


class UsageError(Exception):
    pass


def _write_runspec(out: Path, command: str, args: argparse.Namespace, config: TrainConfig | None = None):
    spec = {"command": command,
            "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"}}
    if config is not None:
        spec["config"] = config.to_dict()
    (out / "runspec.json").write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _make_out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from exc
    return out


def cmd_synth(args) -> int:
    params = datasets.SynthParams(
        n_samples=args.n, height=args.height, width=args.width,
        positive_fraction=args.positive_fraction, separability=args.separability,
        noise_sigma=args.noise_sigma, seed=args.seed,
    )
    params.validate()
    out = _make_out_dir(args.out)
    ds = datasets.make_synthetic(params)
    datasets.write_manifest(ds, out)
    _write_runspec(out, "synth", args)
    print(f"wrote {len(ds)} images to {out}: {ds.n_positive} positive, {len(ds) - ds.n_positive} negative")
    return EXIT_OK


def _display(image: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)


def cmd_gsim_preview(args) -> int:
    label = gsim.check_label(args.label)
    image = datasets.read_image(args.image, normalization="dtype")
    target = gsim.gsim_target(image, label, args.d).pixels
    out = Path(args.out)
    if out.suffix.lower() != ".png":
        out = _make_out_dir(args.out) / "gsim_preview.png"
    else:
        _make_out_dir(str(out.parent))
    # shared display range so the shift is visible in the side-by-side
    lo, hi = -args.d / 2.0, 1.0 + args.d / 2.0
    gap = np.ones((image.shape[0], 2))
    panel = np.concatenate([_display(image, lo, hi), gap, _display(target, lo, hi)], axis=1)
    datasets.write_png(out, panel)
    print(f"input  min={image.min():.6f} max={image.max():.6f}")
    print(f"target min={target.min():.6f} max={target.max():.6f}")
    print(f"max_abs_diff={np.abs(target - image).max():.6f}")
    print(f"wrote {out}")
    return EXIT_OK


def build_config(args) -> TrainConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    for name in CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return TrainConfig.from_dict(data).validate()


def _load_data(args, config: TrainConfig) -> datasets.Dataset:
    return datasets.load_manifest(args.data, config.height, config.width)


def _write_history(out: Path, trained):
    (out / "history.csv").write_text(trained.history.to_csv(), encoding="utf-8")
    if trained.pretrain_history is not None:
        (out / "pretrain_history.csv").write_text(trained.pretrain_history.to_csv(), encoding="utf-8")


def cmd_train(args) -> int:
    config = build_config(args)
    ds = _load_data(args, config)
    train_ds, test_ds = datasets.stratified_holdout(ds, args.holdout, args.split_seed)
    out = _make_out_dir(args.out)
    _write_runspec(out, "train", args, config)
    trained = train(args.method, train_ds, config)
    report = evaluate(trained, test_ds, args.threshold)
    _write_history(out, trained)
    save_checkpoint(trained.bundle, out / "checkpoint.bin", out / "arch.json", method=args.method)
    payload = {"method": args.method, "n_train": len(train_ds), "n_test": len(test_ds), **report.to_dict()}
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if report.roc:
        (out / "roc.csv").write_text(roc_to_csv(report.roc), encoding="utf-8")
    print(json.dumps(report.scalars(), sort_keys=True))
    print(f"trained {args.method} in {trained.seconds:.1f}s; outputs in {out}")
    return EXIT_OK


def cmd_cv(args) -> int:
    config = build_config(args)
    ds = _load_data(args, config)
    out = _make_out_dir(args.out)
    _write_runspec(out, "cv", args, config)
    result = cross_validate(args.method, ds, config, args.folds, args.split_seed, args.threshold)

    fold_of = result.split.fold_of()
    lines = ["id,label,fold"] + [f"{s.id},{s.label},{fold_of[s.id]}" for s in ds.samples]
    (out / "folds.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for f, (fold_report, trained) in enumerate(zip(result.report.folds, result.outputs)):
        fold_dir = out / f"fold_{f}"
        fold_dir.mkdir(exist_ok=True)
        _write_history(fold_dir, trained)
        (fold_dir / "metrics.json").write_text(report_to_json(fold_report), encoding="utf-8")
    payload = {"method": args.method, "folds": args.folds, "split_seed": args.split_seed,
               **result.report.to_dict()}
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if result.report.pooled is not None and result.report.pooled.roc:
        (out / "roc.csv").write_text(roc_to_csv(result.report.pooled.roc), encoding="utf-8")
    for name, mean in result.report.mean.items():
        std = result.report.std[name]
        if mean is None:
            print(f"{name:12s} undefined")
        else:
            print(f"{name:12s} {100 * mean:6.2f} +/- {100 * (std or 0.0):5.2f}")
    return EXIT_OK


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--method", choices=METHODS, default="tsbn")
    p.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    p.add_argument("--data", required=True, help="manifest CSV (id,path,label)")
    p.add_argument("--out", required=True)
    p.add_argument("--split-seed", type=int, default=0, help="seed for the data split, independent of --seed")
    p.add_argument("--threshold", type=float, default=0.5)
    for name, typ in CONFIG_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsbn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic phantom dataset (PNG + manifest.csv)")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=datasets.DEFAULT_HEIGHT)
    p.add_argument("--width", type=int, default=datasets.DEFAULT_WIDTH)
    p.add_argument("--positive-fraction", type=float, default=datasets.INBREAST_POSITIVE_FRACTION)
    p.add_argument("--separability", type=float, default=0.7)
    p.add_argument("--noise-sigma", type=float, default=0.08)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gsim-preview", help="render an image next to its gray-scale mapping target")
    p.add_argument("--image", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--d", type=float, default=gsim.DEFAULT_SHIFT)
    p.add_argument("--out", required=True, help="output .png file or directory")
    p.set_defaults(func=cmd_gsim_preview)

    p = sub.add_parser("train", help="train one method and evaluate on a stratified holdout")
    _add_train_flags(p)
    p.add_argument("--holdout", type=float, default=0.2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_cv)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (TsbnError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
