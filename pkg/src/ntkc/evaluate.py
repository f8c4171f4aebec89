"""Desk-scale downstream evaluation: ridge readout, accuracy, baselines.

The readout layer is a closed-form ridge regression onto one-hot targets over
last-layer features, which keeps every accuracy number deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import ActivationSpec
from .errors import NumericError
from .kernels_empirical import WeightDraw
from .kernels_theory import NetworkSpec

__all__ = [
    "ReadoutModel",
    "train_readout",
    "accuracy",
    "magnitude_prune",
    "binary_activation_baseline",
    "stratified_split",
]


@dataclass(frozen=True)
class ReadoutModel:
    weights: np.ndarray  # d_L x K
    ridge: float
    n_classes: int


def train_readout(features: np.ndarray, labels: np.ndarray, ridge: float = 1e-3) -> ReadoutModel:
    """W = (F F' + ridge I)^{-1} F Y' with one-hot targets Y."""
    F = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if F.shape[1] != labels.shape[0]:
        raise ValueError("one label per feature column required")
    if ridge < 0.0:
        raise ValueError("ridge must be >= 0")
    k = int(labels.max())
    if F.shape[1] < k:
        raise ValueError("need at least K samples")
    Y = np.zeros((k, F.shape[1]))
    Y[labels - 1, np.arange(F.shape[1])] = 1.0
    G = F @ F.T
    G[np.diag_indices_from(G)] += ridge
    try:
        W = np.linalg.solve(G, F @ Y.T)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"singular readout system ({exc}); use ridge > 0"
        ) from exc
    if not np.all(np.isfinite(W)):
        raise NumericError("readout weights are non-finite; use ridge > 0")
    return ReadoutModel(W, ridge, k)


def accuracy(model: ReadoutModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax-correct columns; ties go to the lowest class index."""
    scores = model.weights.T @ np.asarray(features, dtype=float)
    pred = np.argmax(scores, axis=0) + 1
    return float(np.mean(pred == np.asarray(labels, dtype=int)))


def magnitude_prune(draw: WeightDraw, fraction: float) -> WeightDraw:
    """Zero the smallest-magnitude ``fraction`` of each layer's weights.

    Exactly floor(fraction * size) entries are zeroed per layer; ties are
    broken by flat index (stable sort) for determinism.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    mats = []
    for w in draw.matrices:
        k = int(fraction * w.size)
        out = w.copy()
        if k > 0:
            flat = out.reshape(-1)
            order = np.argsort(np.abs(flat), kind="stable")
            flat[order[:k]] = 0.0
        mats.append(out)
    return WeightDraw(tuple(mats), draw.dist, draw.seed)


def binary_activation_baseline(net: NetworkSpec) -> NetworkSpec:
    """Replace every activation with the fixed indicator 1_{t<-1} + 1_{t>1}
    (no coefficient matching; the naive-quantization baseline)."""
    binary = ActivationSpec("sigma_T", (1.0, -1.0, 1.0))
    return NetworkSpec(
        net.input_dim, net.widths, (binary,) * net.depth, net.weight_dist
    )


def stratified_split(labels: np.ndarray, train_fraction: float, seed: int = 0):
    """Deterministic per-class split; returns (train indices, test indices)."""
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train, test = [], []
    for a in range(1, labels.max() + 1):
        idx = np.flatnonzero(labels == a)
        perm = rng.permutation(idx.size)
        cut = int(round(train_fraction * idx.size))
        train.append(idx[perm[:cut]])
        test.append(idx[perm[cut:]])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
