"""Command-line experiment runner.

Verbs: train, eval, sweep, plot-density, fetch-data. Output root comes from
the MAVENLAB_OUT environment variable unless overridden by --out.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

from . import experiment as E
from .config import ConfigError, ExperimentConfig, validate_config
from .training import TrainingConfig, load_model_state

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MAVENLAB_OUT"

DATASET_ARCHIVES = {
    "svhn": [
        ("http://ufldl.stanford.edu/housenumbers/train_32x32.mat",
         "train_32x32.mat", "e26dedcc434d2e4c54c9b2d4a06d8373"),
        ("http://ufldl.stanford.edu/housenumbers/test_32x32.mat",
         "test_32x32.mat", "eb5a983be6a315427106f1b164d9cef3"),
    ],
    "cifar10": [
        ("https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz",
         "cifar-10-python.tar.gz", "c58f30108f718f92721af3b95e74349a"),
    ],
}


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / default_name


def _load_config(args) -> ExperimentConfig:
    config = validate_config(args.config)
    if args.seed is not None:
        config.values["train.seed"] = args.seed
    if args.repeats is not None:
        config.values["repeats"] = args.repeats
    return config


def cmd_train(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, E.model_label(config))
    bundle = E.run_experiment(config, out, overwrite=args.overwrite,
                              repeats=config["repeats"],
                              base_seed=config["train.seed"])
    for r, msg in bundle.failures:
        print(f"repeat {r} FAILED: {msg}", file=sys.stderr)
    if not bundle.ok:
        print("all repeats failed", file=sys.stderr)
        return 1
    print(f"wrote {len(bundle.files)} files under {out}")
    for path in bundle.files:
        print(f"  {path}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    train_split, test_split = E.build_dataset(config)
    tcfg = TrainingConfig(m=train_split.n, batch_size=config["train.batch_size"],
                          k=config["ensemble.k"], seed=config["train.seed"])
    state = load_model_state(args.checkpoint, tcfg)
    report = E.evaluate_model(state, train_split, test_split, config,
                              seed=config["train.seed"])
    out = _out_dir(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    if path.exists() and not args.overwrite:
        print(f"{path} exists; pass --overwrite", file=sys.stderr)
        return 1
    path.write_text(report.to_json())
    print(report.to_json())
    print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, "sweep")
    bundle = E.run_sweep(config, out, overwrite=args.overwrite,
                         repeats=config["repeats"])
    for r, msg in bundle.failures:
        print(f"{r} FAILED: {msg}", file=sys.stderr)
    if not bundle.ok:
        print("all sweep runs failed", file=sys.stderr)
        return 1
    print(f"wrote {len(bundle.files)} files under {out}")
    return 0


def cmd_plot_density(args) -> int:
    real = np.load(args.real)
    fake = np.load(args.fake)
    out = _out_dir(args, "density")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "density_histogram.csv"
    png_path = out / "density_histogram.png"
    if csv_path.exists() and not args.overwrite:
        print(f"{csv_path} exists; pass --overwrite", file=sys.stderr)
        return 1
    csv_path, png_path, overlap = E.emit_density_histogram(
        real, fake, bins=args.bins, out_csv=csv_path, out_png=png_path)
    print(f"overlap coefficient: {overlap:.6f}")
    print(f"wrote {csv_path} and {png_path}")
    return 0


def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_fetch_data(args) -> int:
    if args.dataset not in DATASET_ARCHIVES:
        print(f"unknown dataset {args.dataset!r}; choices: "
              f"{sorted(DATASET_ARCHIVES)}", file=sys.stderr)
        return 1
    dest = Path(args.out or args.dataset)
    dest.mkdir(parents=True, exist_ok=True)
    for url, name, checksum in DATASET_ARCHIVES[args.dataset]:
        target = dest / name
        if not target.exists():
            print(f"downloading {url} ...")
            urllib.request.urlretrieve(url, target)
        got = _md5(target)
        if got != checksum:
            print(f"checksum mismatch for {target}: expected {checksum}, got {got}",
                  file=sys.stderr)
            return 1
        print(f"{target}: checksum ok")
        if name.endswith(".tar.gz"):
            with tarfile.open(target) as tar:
                tar.extractall(dest)
            print(f"extracted {name} into {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mavenlab",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<name>)")
        p.add_argument("--overwrite", action="store_true",
                       help="allow writing into a non-empty output directory")
        p.add_argument("--repeats", type=int, default=None, help="override repeats")

    p = sub.add_parser("train", help="train a model and emit reports")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the 8-model comparison grid")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot-density", help="overlaid density histograms of two sample sets")
    common(p, config_required=False)
    p.add_argument("--real", required=True, help=".npy file with real samples")
    p.add_argument("--fake", required=True, help=".npy file with generated samples")
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(func=cmd_plot_density)

    p = sub.add_parser("fetch-data", help="download a benchmark dataset (checksum-verified)")
    p.add_argument("dataset", choices=sorted(DATASET_ARCHIVES))
    p.add_argument("--out", default=None, help="destination directory")
    p.set_defaults(func=cmd_fetch_data)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(msg, file=sys.stderr)
        return 2
    except FileExistsError as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
