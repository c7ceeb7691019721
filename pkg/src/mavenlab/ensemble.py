"""Aggregation of K discriminators' feedback: weighted mean or random pick."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class EnsembleConfig:
    k: int = 1
    weights: tuple[float, ...] | None = None
    mode: str = "mean"  # mean | random

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.mode not in ("mean", "random"):
            raise ValueError(f"mode must be 'mean' or 'random', got {self.mode!r}")
        if self.weights is None:
            self.weights = tuple(1.0 for _ in range(self.k))
        else:
            self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != self.k:
            raise ValueError(f"need {self.k} weights, got {len(self.weights)}")
        if any(w < 0 for w in self.weights):
            raise ValueError(f"weights must be non-negative, got {self.weights}")
        if all(w == 0 for w in self.weights):
            raise ValueError("at least one weight must be positive")


@dataclass
class EnsembleFeedback:
    value: torch.Tensor
    source: str | int  # "mean" or the selected index (0-based)


def aggregate_mean(outputs, weights=None) -> EnsembleFeedback:
    """(1/K) * sum_i w_i * outputs_i, elementwise; gradient reaches every input."""
    outputs = list(outputs)
    if not outputs:
        raise ValueError("no outputs to aggregate")
    k = len(outputs)
    if weights is None:
        weights = [1.0] * k
    if len(weights) != k:
        raise ValueError(f"have {k} outputs but {len(weights)} weights")
    if all(w == 0 for w in weights):
        raise ValueError("at least one weight must be positive")
    shape = outputs[0].shape
    for o in outputs[1:]:
        if o.shape != shape:
            raise ValueError(f"output shapes differ: {tuple(shape)} vs {tuple(o.shape)}")
    total = outputs[0] * weights[0]
    for o, w in zip(outputs[1:], weights[1:]):
        total = total + o * w
    return EnsembleFeedback(value=total / k, source="mean")


def select_random(outputs, rng: np.random.Generator) -> EnsembleFeedback:
    """Returns one output chosen uniformly at random, recording its index."""
    outputs = list(outputs)
    if not outputs:
        raise ValueError("no outputs to select from")
    k = int(rng.integers(len(outputs)))
    return EnsembleFeedback(value=outputs[k], source=k)
