"""Evaluation suite: FID, moment-based distribution distance (DDD),
accuracy, per-class F1, confusion counts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

DEFAULT_DDD_WEIGHTS = (0.4, 0.3, 0.2, 0.1)


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class MomentSummary:
    m1: float  # mean
    m2: float  # unbiased variance
    m3: float  # standardized skewness
    m4: float  # excess kurtosis
    count: int

    def as_tuple(self):
        return (self.m1, self.m2, self.m3, self.m4)


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    n_classes: int
    total: int


@dataclass
class MetricReport:
    model: str
    seed: int
    fid_mean: float
    fid_std: float
    fid_values: list
    ddd: float
    accuracy: float
    f1: list
    class_names: list
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def compute_gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance of a (samples, dim) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError(f"need a (n>=2, dim) feature matrix, got shape {features.shape}")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianStats(mean=mean, cov=cov)


def _psd_sqrt(mat: np.ndarray, neg_tol: float = 1e-6) -> np.ndarray:
    """Square root of a symmetric PSD matrix; small negative eigenvalues clamped."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < -neg_tol * max(1.0, abs(vals.max())):
        raise ValueError(f"matrix is not PSD (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def compute_fid(real: GaussianStats, fake: GaussianStats) -> float:
    """Frechet distance between two Gaussian fits.

    ||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^{1/2}), with the product
    square root taken through the symmetrized form S_r^{1/2} S_f S_r^{1/2}.
    """
    if real.mean.shape != fake.mean.shape:
        raise ValueError(
            f"dimension mismatch: {real.mean.shape} vs {fake.mean.shape}"
        )
    diff = real.mean - fake.mean
    s_r = _psd_sqrt(real.cov)
    inner = s_r @ fake.cov @ s_r
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if not np.isfinite(vals).all():
        raise ValueError("matrix square root did not converge")
    vals = np.clip(vals, 0.0, None)
    trace_sqrt = np.sqrt(vals).sum()
    fid = float(diff @ diff + np.trace(real.cov) + np.trace(fake.cov) - 2.0 * trace_sqrt)
    return max(fid, 0.0)


def compute_moment_summary(samples) -> MomentSummary:
    """First four standardized moments of a scalar sample set."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < 4:
        raise ValueError(f"need at least 4 samples, got {n}")
    mean = x.mean()
    var = x.var(ddof=1)
    centered = x - mean
    if var == 0.0:
        raise ValueError("degenerate distribution: zero variance")
    sigma = np.sqrt(centered.dot(centered) / n)  # population sd for standardization
    skew = float(np.mean(centered ** 3) / sigma ** 3)
    kurt = float(np.mean(centered ** 4) / sigma ** 4 - 3.0)
    return MomentSummary(m1=float(mean), m2=float(var), m3=skew, m4=kurt, count=n)


def compute_ddd(real: MomentSummary, fake: MomentSummary,
                weights=DEFAULT_DDD_WEIGHTS) -> float:
    """Weighted sum of normalized first-four-moment differences.

    DDD = sum_i (-ln w_i) * |delta_i|, with the symmetric scale-aware
    normalization delta_i = (m_i^real - m_i^fake) / (max(|m_i^real|, |m_i^fake|) + 1),
    so the distance does not depend on which summary is called "real".
    Weights must lie in (0, 1) and sum to 1, so -ln w_i is positive and larger
    for the smaller weights given to higher moments.
    """
    weights = tuple(float(w) for w in weights)
    if len(weights) != 4:
        raise ValueError(f"need 4 weights, got {len(weights)}")
    if any(not 0.0 < w < 1.0 for w in weights):
        raise ValueError(f"weights must be in (0,1), got {weights}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got sum {sum(weights)}")
    total = 0.0
    for w, mr, mf in zip(weights, real.as_tuple(), fake.as_tuple()):
        delta = (mr - mf) / (max(abs(mr), abs(mf)) + 1.0)
        total += -np.log(w) * abs(delta)
    return float(total)


def mean_intensity(images: np.ndarray) -> np.ndarray:
    """Per-image mean pixel intensity: the scalar projection used by DDD and
    the density histograms."""
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(images.shape[0], -1).mean(axis=1)


def confusion_counts(predictions, labels, n_classes: int) -> ConfusionCounts:
    """One-vs-rest TP/FP/FN per class; labels and predictions are 1-based."""
    p = np.asarray(predictions, dtype=np.int64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    for name, arr in (("prediction", p), ("label", y)):
        if arr.size and ((arr < 1).any() or (arr > n_classes).any()):
            bad = arr[(arr < 1) | (arr > n_classes)][0]
            raise ValueError(f"{name} {bad} out of range 1..{n_classes}")
    tp = np.zeros(n_classes, dtype=np.int64)
    fp = np.zeros(n_classes, dtype=np.int64)
    fn = np.zeros(n_classes, dtype=np.int64)
    for c in range(1, n_classes + 1):
        tp[c - 1] = int(((p == c) & (y == c)).sum())
        fp[c - 1] = int(((p == c) & (y != c)).sum())
        fn[c - 1] = int(((p != c) & (y == c)).sum())
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, n_classes=n_classes, total=int(p.size))


def f1_per_class(counts: ConfusionCounts) -> list[float]:
    """F1 = 2pr/(p+r) per class; degenerate cases give 0, never NaN."""
    out = []
    for tp, fp, fn in zip(counts.tp, counts.fp, counts.fn):
        if tp + fp == 0 or tp + fn == 0:
            out.append(0.0)
            continue
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        if precision + recall == 0:
            out.append(0.0)
        else:
            out.append(2.0 * precision * recall / (precision + recall))
    return out


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise ValueError("no items")
    return float((p == y).mean())
