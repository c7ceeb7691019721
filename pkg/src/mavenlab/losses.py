"""Training objectives for discriminator, generator, and encoder.

Every loss is a non-negative "lower is better" scalar: negative log
likelihoods, squared norms, or the closed-form diagonal-Gaussian KL.
Probabilities are clamped at 1e-12 before any log.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import torch

from .networks import EncoderOutput

P_CLAMP = 1e-12


@dataclass
class LossBreakdown:
    d_supervised: float = 0.0
    d_real: float = 0.0
    d_fake1: float = 0.0
    d_fake2: float = 0.0
    g_feature: float = 0.0
    g_fake1: float = 0.0
    g_fake2: float = 0.0
    e_kl: float = 0.0
    e_feature: float = 0.0

    @property
    def total_d(self) -> float:
        return self.d_supervised + self.d_real + self.d_fake1 + self.d_fake2

    @property
    def total_g(self) -> float:
        return self.g_feature + self.g_fake1 + self.g_fake2

    @property
    def total_e(self) -> float:
        return self.e_kl + self.e_feature

    def component_names(self):
        return [f.name for f in fields(self)]

    def as_row(self) -> dict:
        row = {f.name: getattr(self, f.name) for f in fields(self)}
        row["total_d"] = self.total_d
        row["total_g"] = self.total_g
        row["total_e"] = self.total_e
        return row


HISTORY_COLUMNS = ["step", "epoch",
                   "d_supervised", "d_real", "d_fake1", "d_fake2",
                   "g_feature", "g_fake1", "g_fake2",
                   "e_kl", "e_feature",
                   "total_d", "total_g", "total_e"]


def write_history_csv(path, rows):
    """One CSV row per training step; floats via repr for stable round-trips."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in HISTORY_COLUMNS])


def _check_finite(t: torch.Tensor, name: str):
    if not torch.isfinite(t).all():
        raise ValueError(f"non-finite values in {name}")


def _neg_log(p: torch.Tensor) -> torch.Tensor:
    return -torch.log(p.clamp(min=P_CLAMP))


def d_supervised_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-probability of the true (1-based) class label."""
    _check_finite(probs, "probs")
    n = probs.shape[-1] - 1
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() == 0:
        raise ValueError("empty labeled batch")
    if (labels < 1).any() or (labels > n).any():
        bad = labels[(labels < 1) | (labels > n)][0].item()
        raise ValueError(f"label {bad} out of range 1..{n} (fake class is not a valid label)")
    picked = probs.gather(1, (labels - 1).view(-1, 1)).squeeze(1)
    return _neg_log(picked).mean()


def d_real_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean -log(1 - p(fake)) over a real batch."""
    _check_finite(probs, "probs")
    return _neg_log(1.0 - probs[..., -1]).mean()


def d_fake_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean -log p(fake) over a generated batch (fake1 or fake2 path)."""
    _check_finite(probs, "probs")
    return _neg_log(probs[..., -1]).mean()


def d_unsupervised_loss(real, fake1, fake2):
    return real + fake1 + fake2


def feature_matching_loss(f_real: torch.Tensor, f_fake: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance between the batch-mean feature vectors."""
    if f_real.shape[-1] != f_fake.shape[-1]:
        raise ValueError(
            f"feature dims differ: {f_real.shape[-1]} vs {f_fake.shape[-1]}"
        )
    diff = f_real.mean(dim=0) - f_fake.mean(dim=0)
    return (diff * diff).sum()


def g_adversarial_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean -log(1 - p(fake)) over a generated batch: G wants D fooled."""
    _check_finite(probs, "probs")
    return _neg_log(1.0 - probs[..., -1]).mean()


def g_total_loss(g_feature, g_fake1, g_fake2):
    return g_feature + g_fake1 + g_fake2


def kl_loss(enc: EncoderOutput) -> torch.Tensor:
    """Closed-form KL[q(z|x) || N(0, I)], averaged over the batch."""
    _check_finite(enc.mu, "mu")
    _check_finite(enc.log_sigma_sq, "log_sigma_sq")
    var = torch.exp(enc.log_sigma_sq)
    per_item = 0.5 * (enc.mu ** 2 + var - 1.0 - enc.log_sigma_sq).sum(dim=1)
    return per_item.mean()


def e_total_loss(kl, e_feature):
    return kl + e_feature
