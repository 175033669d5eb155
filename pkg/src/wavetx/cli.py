"""Command-line entry point.

Exit codes: 0 success, 2 configuration problems (bad flags, missing
files, invalid config), 3 malformed data files, 4 numeric failures.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .container import load_model, save_model
from .data import load_dataset, split_dataset
from .errors import ConfigError, FormatError, WavetxError
from .harness import (
    ExperimentConfig,
    export_images,
    run_attack,
    run_filter_sweep,
    run_table2,
    run_transfer,
)
from .models import build_small_resnet, build_table1_cnn, evaluate_accuracy, train
from .wavelet import FILTER_NAMES, filter_bank

DATASET_SHAPES = {"fmnist": (1, 28, 28), "cifar10": (3, 32, 32)}


def _data_root(args):
    root = args.data_root or os.environ.get("WAVETX_DATA_ROOT") or "data"
    return root


def _add_common(parser):
    parser.add_argument("--dataset", choices=("fmnist", "cifar10"), default=None)
    parser.add_argument("--data-root", default=None,
                        help="dataset directory (default: $WAVETX_DATA_ROOT or ./data)")
    parser.add_argument("--config", default=None, help="JSON config file; flags override it")
    parser.add_argument("--limit", type=int, default=None, help="number of test images")
    parser.add_argument("--seed", type=int, default=None)


def _add_attack_args(parser):
    parser.add_argument("--method", choices=("subband", "fgsm", "pgd"), default=None)
    parser.add_argument("--subbands", default=None,
                        help="ll, lh, hl, hh, high or all (subband method)")
    parser.add_argument("--filter", dest="filter_name", default=None,
                        help="wavelet family: haar, db2, db3 or bior")
    parser.add_argument("--eps", dest="epsilon", type=float, default=None)
    parser.add_argument("--gamma", type=float, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--restarts", type=int, default=None)
    parser.add_argument("--pgd-step", dest="pgd_step", type=float, default=None)


def _build_config(args):
    """Precedence: defaults < config file < environment < flags."""
    base = ExperimentConfig() if args.config is None else ExperimentConfig.from_file(args.config)
    overrides = {}
    for field in dataclasses.fields(ExperimentConfig):
        if hasattr(args, field.name):
            overrides[field.name] = getattr(args, field.name)
    overrides["data_root"] = args.data_root or os.environ.get("WAVETX_DATA_ROOT")
    return base.merged(overrides).validate()


def _load_test_set(cfg):
    return load_dataset(cfg.dataset, cfg.data_root, "test")


def cmd_train(args):
    dataset_name = args.dataset or "fmnist"
    root = _data_root(args)
    train_ds = load_dataset(dataset_name, root, "train")
    test_ds = load_dataset(dataset_name, root, "test")
    if args.limit:
        train_ds = train_ds.subset(np.arange(min(args.limit, len(train_ds))))
    seed = args.seed if args.seed is not None else 0
    shape = DATASET_SHAPES[dataset_name]
    if args.arch == "table1_cnn":
        model = build_table1_cnn(input_shape=shape, classes=10, seed=seed)
    else:
        model = build_small_resnet(input_shape=shape, classes=10, seed=seed)
    val_images = val_labels = None
    if args.val_fraction:
        train_ds, val_ds = split_dataset(train_ds, 1.0 - args.val_fraction, seed)
        val_images, val_labels = val_ds.images, val_ds.labels
    history = train(
        model, train_ds.images, train_ds.labels,
        epochs=args.epochs, lr=args.lr, batch_size=args.batch, seed=seed,
        val_images=val_images, val_labels=val_labels, log=print,
    )
    test_accuracy = evaluate_accuracy(model, test_ds.images, test_ds.labels)
    print(f"test accuracy {100.0 * test_accuracy:.2f}%")
    save_model(model, args.out, extra_meta={
        "history": history,
        "test_accuracy": test_accuracy,
        "dataset": dataset_name,
        "train_config": {
            "epochs": args.epochs, "lr": args.lr, "batch": args.batch,
            "seed": seed, "limit": args.limit,
        },
    })
    print(f"saved model to {args.out}")
    return 0


def cmd_attack(args):
    cfg = _build_config(args)
    model, _ = load_model(args.model)
    dataset = _load_test_set(cfg)
    report = run_attack(model, dataset, cfg, args.out, log=print)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_table2(args):
    cfg = _build_config(args)
    model, _ = load_model(args.model)
    dataset = _load_test_set(cfg)
    run_table2(model, dataset, cfg, args.outdir, log=print)
    print(f"wrote {os.path.join(args.outdir, 'table2.csv')}")
    return 0


def cmd_filters(args):
    if args.dump:
        banks = {}
        for name in FILTER_NAMES:
            bank = filter_bank(name)
            banks[name] = {
                "analysis_lo": bank.analysis_lo.tolist(),
                "analysis_hi": bank.analysis_hi.tolist(),
                "synthesis_lo": bank.synthesis_lo.tolist(),
                "synthesis_hi": bank.synthesis_hi.tolist(),
            }
        print(json.dumps(banks, indent=2, sort_keys=True))
        return 0
    if not args.model or not args.outdir:
        raise ConfigError("filters needs --model and --outdir (or --dump)")
    cfg = _build_config(args)
    model, _ = load_model(args.model)
    dataset = _load_test_set(cfg)
    run_filter_sweep(model, dataset, cfg, args.outdir, log=print)
    print(f"wrote {os.path.join(args.outdir, 'filters.csv')}")
    return 0


def cmd_transfer(args):
    cfg = _build_config(args)
    source, _ = load_model(args.source)
    target, _ = load_model(args.target)
    dataset = _load_test_set(cfg)
    run_transfer(source, target, dataset, cfg, args.outdir, log=print)
    print(f"wrote {os.path.join(args.outdir, 'transfer.csv')}")
    return 0


def cmd_export(args):
    written = export_images(args.bundle, args.outdir, args.count)
    print(f"wrote {len(written)} images to {args.outdir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="wavetx",
                                     description="wavelet-subband adversarial attack toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier")
    _add_common(p)
    p.add_argument("--arch", choices=("table1_cnn", "small_resnet"), default="table1_cnn")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack test images and save a bundle")
    _add_common(p)
    _add_attack_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="output bundle path")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("table2", help="subband comparison table")
    _add_common(p)
    _add_attack_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_table2)

    p = sub.add_parser("filters", help="wavelet family sweep, or --dump taps")
    _add_common(p)
    _add_attack_args(p)
    p.add_argument("--model", default=None)
    p.add_argument("--outdir", default=None)
    p.add_argument("--dump", action="store_true", help="print filter taps as JSON")
    p.set_defaults(func=cmd_filters)

    p = sub.add_parser("transfer", help="cross-model transfer evaluation")
    _add_common(p)
    _add_attack_args(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("export", help="expand an attack bundle to PGM/PPM images")
    p.add_argument("--bundle", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except WavetxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
