"""Experiment orchestration: model-zoo dispatch, repeated-seed runs,
metric reports, comparison tables, and density-histogram artifacts.

FID here uses a pluggable feature embedding. The default is a fixed-seed
randomly initialized convolutional embedder (identity flattening for tiny
inputs), so desk-scale FID values are internally comparable across models
but NOT comparable to published Inception-v3 FID numbers.
"""

from __future__ import annotations

import csv
import json
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from . import data as D
from . import metrics as M
from .config import ExperimentConfig
from .networks import NetworkConfig, class_probabilities, predict_class
from .training import (ModelState, TrainingConfig, sample_noise, to_torch_images,
                       train)

log = logging.getLogger(__name__)


@dataclass
class ReportBundle:
    reports: list = field(default_factory=list)     # per-repeat MetricReport
    failures: list = field(default_factory=list)    # (repeat, message)
    aggregate: dict = field(default_factory=dict)
    files: list = field(default_factory=list)       # every path written

    @property
    def ok(self) -> bool:
        return len(self.reports) > 0


def model_label(config: ExperimentConfig) -> str:
    if config.model != "maven":
        return config.model
    return f"maven-{config['ensemble.mode']}{config['ensemble.k']}D"


def build_dataset(config: ExperimentConfig):
    """Returns (train_split, test_split) for the configured dataset."""
    kind = config["dataset.kind"]
    seed = config["dataset.seed"]
    if kind == "ring":
        train_split = D.make_toy_ring(config["dataset.modes"],
                                      config["dataset.samples_per_mode"],
                                      config["dataset.radius"],
                                      config["dataset.sigma"], seed)
        test_split = D.make_toy_ring(config["dataset.modes"],
                                     max(config["dataset.samples_per_mode"] // 4, 8),
                                     config["dataset.radius"],
                                     config["dataset.sigma"], seed + 1)
    elif kind == "glyphs":
        train_split = D.make_glyphs(config["dataset.n_per_class"],
                                    config["dataset.n_classes"],
                                    config["dataset.image_size"], seed=seed)
        test_split = D.make_glyphs(max(config["dataset.n_per_class"] // 4, 8),
                                   config["dataset.n_classes"],
                                   config["dataset.image_size"], seed=seed + 1,
                                   split="test")
    elif kind == "image_folder":
        root = Path(config["dataset.path"])
        if (root / "train").is_dir():
            train_split = D.load_image_folder(root / "train", config["dataset.image_size"],
                                              config["dataset.channels"], "train")
            test_split = D.load_image_folder(root / "test", config["dataset.image_size"],
                                             config["dataset.channels"], "test")
        else:
            train_split = D.load_image_folder(root, config["dataset.image_size"],
                                              config["dataset.channels"], "train")
            test_split = train_split
    elif kind == "cifar10":
        train_split = D.load_cifar10(config["dataset.path"], "train")
        test_split = D.load_cifar10(config["dataset.path"], "test")
    elif kind == "svhn":
        train_split = D.load_svhn(config["dataset.path"], "train")
        test_split = D.load_svhn(config["dataset.path"], "test")
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    return train_split, test_split


def network_config(config: ExperimentConfig, image_shape) -> NetworkConfig:
    return NetworkConfig(latent_dim=config["network.latent_dim"],
                         image_shape=image_shape,
                         n_classes=len_classes(config, image_shape),
                         channels=config["network.channels"],
                         use_batchnorm=config["network.batchnorm"])


def len_classes(config: ExperimentConfig, image_shape) -> int:
    kind = config["dataset.kind"]
    if kind == "ring":
        return config["dataset.modes"]
    if kind == "glyphs":
        return config["dataset.n_classes"]
    return 10 if kind in ("cifar10", "svhn") else config["dataset.n_classes"]


class RandomConvEmbedder:
    """Fixed-seed random convolutional feature embedding for FID.

    Deliberately untrained: it is a stable, deterministic projection, not an
    Inception network, so absolute values are not comparable to published FID.
    """

    def __init__(self, image_shape, feature_dim: int = 128, seed: int = 7):
        import torch.nn as nn
        h, w, c = image_shape
        torch.manual_seed(seed)
        layers = []
        in_ch, size = c, h
        width = 16
        while size > 4:
            layers += [nn.Conv2d(in_ch, width, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch, size, width = width, size // 2, min(width * 2, 64)
        layers += [nn.Flatten(), nn.Linear(in_ch * size * size, feature_dim)]
        self.net = nn.Sequential(*layers).eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        feats = []
        with torch.no_grad():
            for start in range(0, images.shape[0], 256):
                x = to_torch_images(images[start:start + 256])
                feats.append(self.net(x).numpy())
        return np.concatenate(feats)


def flatten_embedder(images: np.ndarray) -> np.ndarray:
    return images.reshape(images.shape[0], -1).astype(np.float64)


def default_embedder(image_shape):
    h, w, c = image_shape
    if h * w * c <= 64:
        return flatten_embedder
    return RandomConvEmbedder(image_shape)


def generate_samples(state: ModelState, n: int, batch: int = 256) -> np.ndarray:
    """Draws n synthetic images (NHWC, in [-1,1]) from the generator."""
    state.generator.eval()
    out = []
    with torch.no_grad():
        remaining = n
        while remaining > 0:
            b = min(batch, remaining)
            z = sample_noise(state, b)
            imgs = state.generator(z)
            out.append(imgs.permute(0, 2, 3, 1).numpy())
            remaining -= b
    state.generator.train()
    return np.concatenate(out)


def classify(state: ModelState, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """1-based class predictions; ensemble averages the K discriminators' probabilities."""
    for d in state.discriminators:
        d.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch):
            x = to_torch_images(images[start:start + batch])
            probs = torch.stack([class_probabilities(d(x).logits)
                                 for d in state.discriminators]).mean(dim=0)
            preds.append(predict_class(probs).numpy())
    for d in state.discriminators:
        d.train()
    return np.concatenate(preds)


def evaluate_model(state: ModelState, train_split: D.DatasetSplit,
                   test_split: D.DatasetSplit, config: ExperimentConfig,
                   seed: int, embedder=None, label: str | None = None) -> M.MetricReport:
    """FID over repeated sample redraws, DDD, test accuracy, per-class F1."""
    if embedder is None:
        embedder = default_embedder(train_split.images.shape[1:])
    n_eval = config["eval.sample_count"] or train_split.n
    real_stats = M.compute_gaussian_stats(embedder(train_split.images))
    fids = []
    for _ in range(config["eval.fid_repeats"]):
        fake = generate_samples(state, n_eval)
        fids.append(M.compute_fid(real_stats, M.compute_gaussian_stats(embedder(fake))))
    fake_for_ddd = generate_samples(state, n_eval)
    ddd = M.compute_ddd(M.compute_moment_summary(M.mean_intensity(train_split.images)),
                        M.compute_moment_summary(M.mean_intensity(fake_for_ddd)),
                        config["eval.ddd_weights"])
    preds = classify(state, test_split.images)
    acc = M.accuracy(preds, test_split.labels)
    f1 = M.f1_per_class(M.confusion_counts(preds, test_split.labels,
                                           test_split.n_classes))
    return M.MetricReport(
        model=label or model_label(config), seed=seed,
        fid_mean=float(np.mean(fids)), fid_std=float(np.std(fids)),
        fid_values=[float(v) for v in fids],
        ddd=float(ddd), accuracy=float(acc), f1=[float(v) for v in f1],
        class_names=list(test_split.class_names),
        metadata={"n_eval": int(n_eval), "fid_repeats": config["eval.fid_repeats"],
                  "embedding": getattr(embedder, "__name__", type(embedder).__name__)},
    )


def emit_density_histogram(real_samples, fake_samples, bins: int, out_csv, out_png=None):
    """Overlaid normalized histograms of per-image mean intensity.

    Returns (csv_path, png_path, overlap_coefficient). Inputs may be image
    stacks (rank 4) or already-projected scalar arrays.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    real = np.asarray(real_samples)
    fake = np.asarray(fake_samples)
    if real.size == 0 or fake.size == 0:
        raise ValueError("empty sample set")
    r = M.mean_intensity(real) if real.ndim == 4 else real.ravel().astype(np.float64)
    f = M.mean_intensity(fake) if fake.ndim == 4 else fake.ravel().astype(np.float64)
    lo = min(r.min(), f.min())
    hi = max(r.max(), f.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    dens_r, _ = np.histogram(r, bins=edges, density=True)
    dens_f, _ = np.histogram(f, bins=edges, density=True)
    widths = np.diff(edges)
    overlap = float(np.sum(np.minimum(dens_r, dens_f) * widths))
    out_csv = Path(out_csv)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "density_real", "density_fake"])
        for i in range(bins):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                             repr(float(dens_r[i])), repr(float(dens_f[i]))])
    if out_png is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        centers = (edges[:-1] + edges[1:]) / 2
        ax.bar(centers, dens_r, width=widths, alpha=0.5, label="real")
        ax.bar(centers, dens_f, width=widths, alpha=0.5, label="generated")
        ax.set_xlabel("mean image intensity")
        ax.set_ylabel("density")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_png, dpi=120)
        plt.close(fig)
    return out_csv, out_png, overlap


def _float_cell(v) -> str:
    return repr(float(v))


def write_fid_ddd_table(path, rows):
    """Comparison-table layout: model, FID mean, FID std, DDD."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "fid_mean", "fid_std", "ddd"])
        for row in rows:
            writer.writerow([row["model"], _float_cell(row["fid_mean"]),
                             _float_cell(row["fid_std"]), _float_cell(row["ddd"])])


def write_accuracy_table(path, rows, class_names):
    """Classification-table layout: model, accuracy, per-class F1 columns."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "accuracy"] + [f"f1_{c}" for c in class_names])
        for row in rows:
            writer.writerow([row["model"], _float_cell(row["accuracy"])]
                            + [_float_cell(v) for v in row["f1"]])


def aggregate_reports(reports) -> dict:
    """Mean/std across repeats; recomputable from the per-repeat list."""
    fid_means = [r.fid_mean for r in reports]
    accs = [r.accuracy for r in reports]
    ddds = [r.ddd for r in reports]
    f1s = np.asarray([r.f1 for r in reports])
    return {
        "model": reports[0].model,
        "repeats": len(reports),
        "fid_mean": float(np.mean(fid_means)),
        "fid_std": float(np.std(fid_means)),
        "ddd": float(np.mean(ddds)),
        "accuracy": float(np.mean(accs)),
        "accuracy_std": float(np.std(accs)),
        "f1": [float(v) for v in f1s.mean(axis=0)],
    }


def _prepare_out_dir(out_dir, overwrite: bool) -> Path:
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not overwrite:
        raise FileExistsError(
            f"output directory {out_dir} is not empty; pass --overwrite to reuse it")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def run_experiment(config: ExperimentConfig, out_dir, overwrite: bool = False,
                   repeats: int | None = None, base_seed: int | None = None,
                   progress: bool = True) -> ReportBundle:
    """Trains and evaluates `repeats` seeds of the configured model.

    Writes per-repeat history CSVs, checkpoints, and metric JSONs, then the
    aggregate comparison tables and a density-histogram artifact pair.
    """
    out_dir = _prepare_out_dir(out_dir, overwrite)
    repeats = repeats if repeats is not None else config["repeats"]
    base_seed = base_seed if base_seed is not None else config["train.seed"]
    train_split, test_split = build_dataset(config)
    net_config = network_config(config, train_split.images.shape[1:])
    embedder = default_embedder(train_split.images.shape[1:])
    bundle = ReportBundle()
    last_state = None
    for r in range(repeats):
        seed = base_seed + r
        rep_dir = out_dir / f"repeat_{r:02d}"
        rep_dir.mkdir(exist_ok=True)
        try:
            view = D.mask_labels(train_split, config["train.labeled_fraction"], seed)
            tcfg = TrainingConfig(
                m=config["train.m"] or train_split.n,
                batch_size=config["train.batch_size"],
                k=config["ensemble.k"], epochs=config["train.epochs"],
                labeled_fraction=config["train.labeled_fraction"],
                lr_g=config["train.lr_g"], lr_d=config["train.lr_d"],
                lr_e=config["train.lr_e"], adam_beta1=config["train.adam_beta1"],
                seed=seed, checkpoint_interval=config["train.checkpoint_interval"])
            history_path = rep_dir / "history.csv"
            state, _, ckpts = train(view, net_config, tcfg,
                                    ensemble=config.ensemble_config(),
                                    with_encoder=config.with_encoder,
                                    history_path=history_path,
                                    checkpoint_dir=rep_dir / "checkpoints",
                                    progress=progress)
            bundle.files.append(history_path)
            bundle.files.extend(ckpts)
            report = evaluate_model(state, train_split, test_split, config, seed,
                                    embedder=embedder)
            report_path = rep_dir / "report.json"
            report_path.write_text(report.to_json())
            bundle.files.append(report_path)
            bundle.reports.append(report)
            last_state = state
        except Exception as exc:
            log.error("repeat %d failed: %s", r, exc)
            log.debug("%s", traceback.format_exc())
            bundle.failures.append((r, str(exc)))
    if not bundle.reports:
        return bundle
    bundle.aggregate = aggregate_reports(bundle.reports)
    agg = bundle.aggregate
    fid_path = out_dir / "fid_ddd.csv"
    write_fid_ddd_table(fid_path, [agg])
    acc_path = out_dir / "accuracy_f1.csv"
    write_accuracy_table(acc_path, [agg], bundle.reports[0].class_names)
    agg_json = out_dir / "aggregate.json"
    agg_json.write_text(json.dumps(agg, indent=2, sort_keys=True))
    bundle.files += [fid_path, acc_path, agg_json]
    fake = generate_samples(last_state, min(train_split.n, 2000))
    csv_path, png_path, _ = emit_density_histogram(
        train_split.images, fake, bins=40,
        out_csv=out_dir / "density_histogram.csv",
        out_png=out_dir / "density_histogram.png")
    bundle.files += [csv_path, png_path]
    return bundle


SWEEP_GRID = [
    {"model": "dcgan", "ensemble.k": 1, "ensemble.mode": "mean"},
    {"model": "vaegan", "ensemble.k": 1, "ensemble.mode": "mean"},
    {"model": "maven", "ensemble.k": 2, "ensemble.mode": "mean"},
    {"model": "maven", "ensemble.k": 3, "ensemble.mode": "mean"},
    {"model": "maven", "ensemble.k": 5, "ensemble.mode": "mean"},
    {"model": "maven", "ensemble.k": 2, "ensemble.mode": "random"},
    {"model": "maven", "ensemble.k": 3, "ensemble.mode": "random"},
    {"model": "maven", "ensemble.k": 5, "ensemble.mode": "random"},
]


def run_sweep(config: ExperimentConfig, out_dir, overwrite: bool = False,
              repeats: int | None = None, progress: bool = True) -> ReportBundle:
    """Runs the eight-variant model grid and emits combined comparison tables."""
    out_dir = _prepare_out_dir(out_dir, overwrite)
    combined = ReportBundle()
    agg_rows = []
    class_names = None
    for variant in SWEEP_GRID:
        values = dict(config.values)
        values.update(variant)
        if variant["model"] == "dcgan":
            values["train.lr_e"] = _noop_lr(values["train.lr_e"])
        vcfg = ExperimentConfig(values=values)
        label = model_label(vcfg)
        sub = run_experiment(vcfg, out_dir / label, overwrite=overwrite,
                             repeats=repeats, progress=progress)
        combined.reports.extend(sub.reports)
        combined.failures.extend((f"{label}:{r}", msg) for r, msg in sub.failures)
        combined.files.extend(sub.files)
        if sub.reports:
            agg_rows.append(sub.aggregate)
            class_names = sub.reports[0].class_names
    if agg_rows:
        fid_path = out_dir / "fid_ddd.csv"
        acc_path = out_dir / "accuracy_f1.csv"
        write_fid_ddd_table(fid_path, agg_rows)
        write_accuracy_table(acc_path, agg_rows, class_names)
        combined.files += [fid_path, acc_path]
        combined.aggregate = {"rows": agg_rows}
    return combined


def _noop_lr(lr):
    return lr  # dcgan simply never builds an encoder; lr_e is ignored
