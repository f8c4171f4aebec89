"""Gaussian mixture models, dataset ingestion, and data-side statistics.

Synthetic data follows x_i ~ N(mu_a/sqrt(p), C_a/p) for class a; all the
kernel equivalents consume only a handful of scalars and vectors derived from
(mu_a, C_a): tau0, t, T, psi, chi and the spike basis V = [J/sqrt(p), psi].
"""

from __future__ import annotations

import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError, ModelError

__all__ = [
    "Covariance",
    "MixtureClass",
    "MixtureModel",
    "Dataset",
    "MixtureStats",
    "sample_gmm",
    "mixture_stats",
    "empirical_stats",
    "estimate_tau0",
    "normalize_dataset",
    "load_idx",
    "save_csv",
    "load_csv",
    "spiked_two_class_model",
]


@dataclass(frozen=True)
class Covariance:
    """Covariance descriptor: isotropic scalar, diagonal vector, or full matrix."""

    kind: str  # "isotropic" | "diagonal" | "full"
    data: object

    def __post_init__(self):
        if self.kind == "isotropic":
            if float(self.data) < 0.0:
                raise ModelError("isotropic covariance scale must be >= 0")
        elif self.kind == "diagonal":
            d = np.asarray(self.data, dtype=float)
            if d.ndim != 1:
                raise ModelError("diagonal covariance must be a vector")
            if np.any(d < 0.0):
                raise ModelError("diagonal covariance entries must be >= 0")
        elif self.kind == "full":
            m = np.asarray(self.data, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ModelError("full covariance must be a square matrix")
            if not np.allclose(m, m.T, atol=1e-10 * max(1.0, np.abs(m).max())):
                raise ModelError("full covariance must be symmetric")
            w = np.linalg.eigvalsh((m + m.T) / 2.0)
            if w.min() < -1e-10 * max(w.max(), 1.0):
                raise ModelError("full covariance is not PSD")
        else:
            raise ModelError(f"unknown covariance kind {self.kind!r}")

    @classmethod
    def isotropic(cls, c: float) -> "Covariance":
        return cls("isotropic", float(c))

    @classmethod
    def diagonal(cls, d) -> "Covariance":
        return cls("diagonal", np.asarray(d, dtype=float))

    @classmethod
    def full(cls, m) -> "Covariance":
        return cls("full", np.asarray(m, dtype=float))

    def trace(self, p: int) -> float:
        if self.kind == "isotropic":
            return float(self.data) * p
        if self.kind == "diagonal":
            return float(np.sum(self.data))
        return float(np.trace(self.data))

    def pair_trace(self, other: "Covariance", p: int) -> float:
        """tr(C_a C_b)."""
        a, b = self, other
        if a.kind == "full" and b.kind != "full":
            a, b = b, a
        if a.kind == "isotropic":
            return float(a.data) * b.trace(p)
        if a.kind == "diagonal":
            if b.kind == "isotropic":
                return float(b.data) * a.trace(p)
            if b.kind == "diagonal":
                return float(np.sum(np.asarray(a.data) * np.asarray(b.data)))
            return float(np.sum(np.asarray(a.data) * np.diag(b.data)))
        return float(np.sum(np.asarray(a.data) * np.asarray(b.data)))

    def sqrt_columns(self, z: np.ndarray) -> np.ndarray:
        """Apply C^{1/2} to columns of z; full matrices use the symmetric
        eigendecomposition square root (deterministic, no pivoting)."""
        if self.kind == "isotropic":
            return math.sqrt(float(self.data)) * z
        if self.kind == "diagonal":
            return np.sqrt(np.asarray(self.data))[:, None] * z
        m = (np.asarray(self.data) + np.asarray(self.data).T) / 2.0
        w, u = np.linalg.eigh(m)
        w = np.clip(w, 0.0, None)
        return u @ (np.sqrt(w)[:, None] * (u.T @ z))


@dataclass(frozen=True)
class MixtureClass:
    mu: np.ndarray
    cov: Covariance
    weight: float


@dataclass(frozen=True)
class MixtureModel:
    """K-class Gaussian mixture in dimension p (Eq-1 scaling applied at sampling)."""

    p: int
    classes: tuple[MixtureClass, ...]

    def __post_init__(self):
        if self.p < 1 or not self.classes:
            raise ModelError("need p >= 1 and at least one class")
        total = 0.0
        for c in self.classes:
            mu = np.asarray(c.mu, dtype=float)
            if mu.shape != (self.p,):
                raise ModelError("class mean must have length p")
            if c.cov.kind == "diagonal" and np.asarray(c.cov.data).shape != (self.p,):
                raise ModelError("diagonal covariance must have length p")
            if c.cov.kind == "full" and np.asarray(c.cov.data).shape != (self.p, self.p):
                raise ModelError("full covariance must be p x p")
            if not 0.0 <= c.weight <= 1.0:
                raise ModelError("class weight must lie in [0, 1]")
            total += c.weight
        if abs(total - 1.0) > 1e-12:
            raise ModelError(f"class weights sum to {total}, expected 1")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def to_json_dict(self) -> dict:
        out = {"p": self.p, "classes": []}
        for c in self.classes:
            cov = {"kind": c.cov.kind}
            cov["data"] = (
                float(c.cov.data)
                if c.cov.kind == "isotropic"
                else np.asarray(c.cov.data).tolist()
            )
            out["classes"].append(
                {"mu": np.asarray(c.mu).tolist(), "cov": cov, "weight": c.weight}
            )
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "MixtureModel":
        classes = []
        for c in d["classes"]:
            cov = Covariance(c["cov"]["kind"], c["cov"]["data"]
                             if c["cov"]["kind"] == "isotropic"
                             else np.asarray(c["cov"]["data"], dtype=float))
            classes.append(
                MixtureClass(np.asarray(c["mu"], dtype=float), cov, float(c["weight"]))
            )
        return cls(int(d["p"]), tuple(classes))


def spiked_two_class_model(p: int, spike: float = 8.0, cov_gap: float = 8.0) -> MixtureModel:
    """Two equal classes with shifted mean spikes and a covariance-scale gap.

    Class a has mean spike at coordinate 8*(a-1) and covariance
    (1 + cov_gap*(a-1)/sqrt(p)) * I.
    """
    classes = []
    for a in (1, 2):
        mu = np.zeros(p)
        mu[8 * (a - 1)] = spike
        cov = Covariance.isotropic(1.0 + cov_gap * (a - 1) / math.sqrt(p))
        classes.append(MixtureClass(mu, cov, 0.5))
    return MixtureModel(p, tuple(classes))


@dataclass(frozen=True)
class Dataset:
    """p x n column-sample matrix with 1-based class labels."""

    X: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("X must be p x n with n >= 1")
        if labels.shape != (X.shape[1],):
            raise ValueError("labels must have one entry per column")
        if labels.min() < 1:
            raise ValueError("labels must be 1-based class indices")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        X.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max())


def _class_counts(weights, n):
    """Largest-remainder rounding of fractional class sizes; sums to n."""
    raw = np.asarray(weights) * n
    base = np.floor(raw).astype(int)
    rem = n - base.sum()
    if rem > 0:
        frac = raw - base
        # ties broken toward lower class index for determinism
        order = np.lexsort((np.arange(len(raw)), -frac))
        base[order[:rem]] += 1
    return base


def sample_gmm(model: MixtureModel, n: int, seed: int) -> Dataset:
    """Draw n columns from the mixture; deterministic given the seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = _class_counts([c.weight for c in model.classes], n)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cols = []
    labels = []
    sp = math.sqrt(model.p)
    for a, (cls, na) in enumerate(zip(model.classes, counts), start=1):
        if na == 0:
            continue
        z = rng.standard_normal((model.p, na))
        x = (np.asarray(cls.mu, dtype=float)[:, None] + cls.cov.sqrt_columns(z)) / sp
        cols.append(x)
        labels.append(np.full(na, a))
    X = np.concatenate(cols, axis=1)
    return Dataset(
        X,
        np.concatenate(labels),
        provenance={"kind": "synthetic", "seed": seed, "n": n},
    )


@dataclass(frozen=True)
class MixtureStats:
    """Data-side statistics entering the equivalent kernels.

    tau0, t, T come from the model (or plug-in estimates when ``estimated``),
    psi/chi/J/V from the realized data.
    """

    tau0: float
    t: np.ndarray
    T: np.ndarray
    J: np.ndarray
    psi: np.ndarray
    chi: np.ndarray
    V: np.ndarray
    estimated: bool = False


def _one_hot(labels, k):
    n = labels.shape[0]
    J = np.zeros((n, k))
    J[np.arange(n), labels - 1] = 1.0
    return J


def mixture_stats(model: MixtureModel, dataset: Dataset) -> MixtureStats:
    """Exact tau0/t/T from the model; psi/chi/J/V from the realized columns.

    The recentered covariance C deg uses realized class fractions n_a/n, so the
    weighted t sums to zero exactly.
    """
    k = model.n_classes
    if dataset.labels.max() > k:
        raise ModelError("dataset labels exceed the model class count")
    p, n = dataset.p, dataset.n
    if p != model.p:
        raise ModelError("dataset dimension does not match the model")
    counts = np.bincount(dataset.labels, minlength=k + 1)[1:]
    w = counts / n
    traces = np.array([c.cov.trace(p) for c in model.classes])
    trace_c0 = float(w @ traces)
    tau0 = math.sqrt(trace_c0 / p)
    t = (traces - trace_c0) / math.sqrt(p)
    T = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            T[a, b] = T[b, a] = model.classes[a].cov.pair_trace(
                model.classes[b].cov, p
            ) / p
    sp = math.sqrt(p)
    mus = np.stack([np.asarray(c.mu, dtype=float) for c in model.classes], axis=1) / sp
    centered = dataset.X - mus[:, dataset.labels - 1]
    psi = np.einsum("ij,ij->j", centered, centered) - traces[dataset.labels - 1] / p
    chi = np.einsum("ij,ij->j", dataset.X, dataset.X) - tau0**2
    J = _one_hot(dataset.labels, k)
    V = np.concatenate([J / sp, psi[:, None]], axis=1)
    return MixtureStats(tau0, t, T, J, psi, chi, V)


def empirical_stats(dataset: Dataset) -> MixtureStats:
    """Plug-in statistics for real data: class-conditional means and sample
    covariances of sqrt(p)*x stand in for the unknown population quantities."""
    p, n, k = dataset.p, dataset.n, dataset.n_classes
    counts = np.bincount(dataset.labels, minlength=k + 1)[1:]
    if np.any(counts == 0):
        raise ModelError("every class label in 1..K must occur")
    w = counts / n
    sp = math.sqrt(p)
    tau0 = estimate_tau0(dataset)
    norms2 = np.einsum("ij,ij->j", dataset.X, dataset.X)
    psi = np.empty(n)
    traces = np.empty(k)
    centered_blocks = []
    for a in range(k):
        idx = np.flatnonzero(dataset.labels == a + 1)
        block = dataset.X[:, idx] - dataset.X[:, idx].mean(axis=1, keepdims=True)
        dev2 = np.einsum("ij,ij->j", block, block)
        psi[idx] = dev2 - dev2.mean()
        traces[a] = p * dev2.mean()  # trace of the sample covariance of sqrt(p)x
        centered_blocks.append(block)
    t = (traces - w @ traces) / sp
    T = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            g = centered_blocks[a].T @ centered_blocks[b]
            T[a, b] = T[b, a] = (
                p * p / (counts[a] * counts[b]) * float(np.sum(g * g)) / p
            )
    chi = norms2 - tau0**2
    J = _one_hot(dataset.labels, k)
    V = np.concatenate([J / sp, psi[:, None]], axis=1)
    return MixtureStats(tau0, t, T, J, psi, chi, V, estimated=True)


def estimate_tau0(dataset: Dataset) -> float:
    """sqrt of the mean squared column norm (consistent for tau0)."""
    if dataset.n < 1:
        raise ValueError("dataset is empty")
    return float(math.sqrt(np.mean(np.einsum("ij,ij->j", dataset.X, dataset.X))))


def normalize_dataset(dataset: Dataset) -> Dataset:
    """Rescale columns so the estimated tau0 becomes exactly 1."""
    scale = estimate_tau0(dataset)
    if scale <= 0.0:
        raise DegenerateInputError("all-zero dataset cannot be normalized")
    prov = dict(dataset.provenance)
    prov["normalized_by"] = scale
    return Dataset(dataset.X / scale, dataset.labels, prov)


# ---------------------------------------------------------------------------
# IDX ingestion (big-endian image/label binary format)

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path, classes=None, cap=None) -> Dataset:
    """Load an IDX image/label pair as columns of flattened [0,1] pixels.

    ``classes`` restricts to a digit subset and remaps labels to 1..K in the
    given order; ``cap`` keeps only the first ``cap`` columns after filtering.
    """
    with _open_maybe_gzip(images_path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise FormatError(f"truncated IDX image file {images_path}")
        magic, n_img, rows, cols = struct.unpack(">IIII", header)
        if magic != _IDX_IMAGES_MAGIC:
            raise FormatError(f"bad IDX image magic {magic:#010x}")
        raw = fh.read(n_img * rows * cols)
        if len(raw) < n_img * rows * cols:
            raise FormatError(f"truncated IDX image payload in {images_path}")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n_img, rows * cols)
    with _open_maybe_gzip(labels_path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise FormatError(f"truncated IDX label file {labels_path}")
        magic, n_lab = struct.unpack(">II", header)
        if magic != _IDX_LABELS_MAGIC:
            raise FormatError(f"bad IDX label magic {magic:#010x}")
        raw = fh.read(n_lab)
        if len(raw) < n_lab:
            raise FormatError(f"truncated IDX label payload in {labels_path}")
        digits = np.frombuffer(raw, dtype=np.uint8)
    if n_img != n_lab:
        raise FormatError(f"image/label count mismatch: {n_img} vs {n_lab}")
    if classes is not None:
        classes = list(classes)
        keep = np.isin(digits, classes)
        images, digits = images[keep], digits[keep]
        remap = {d: i + 1 for i, d in enumerate(classes)}
        labels = np.array([remap[d] for d in digits], dtype=int)
    else:
        labels = digits.astype(int) + 1
    if cap is not None:
        images, labels = images[:cap], labels[:cap]
    if images.shape[0] == 0:
        raise FormatError("no samples left after class filtering")
    X = images.T.astype(float) / 255.0
    return Dataset(
        X,
        labels,
        provenance={
            "kind": "idx",
            "images": str(images_path),
            "labels": str(labels_path),
            "classes": classes,
        },
    )


# ---------------------------------------------------------------------------
# CSV round trip: header row of labels, then one row per dimension


def save_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(",".join(str(int(l)) for l in dataset.labels) + "\n")
        for row in dataset.X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    sidecar = path.with_suffix(path.suffix + ".json")
    with open(sidecar, "w") as fh:
        json.dump(
            {"provenance": dataset.provenance, "p": dataset.p, "n": dataset.n},
            fh,
            indent=2,
        )


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise FormatError(f"empty dataset CSV {path}")
        try:
            labels = np.array([int(v) for v in header.split(",")], dtype=int)
        except ValueError as exc:
            raise FormatError(f"bad label header in {path}: {exc}") from None
        X = np.loadtxt(fh, delimiter=",", ndmin=2)
    if X.shape[1] != labels.shape[0]:
        raise FormatError("CSV row width does not match the label header")
    sidecar = path.with_suffix(path.suffix + ".json")
    provenance = {"kind": "file", "path": str(path)}
    if sidecar.exists():
        with open(sidecar) as fh:
            provenance = json.load(fh).get("provenance", provenance)
    return Dataset(X, labels, provenance)
