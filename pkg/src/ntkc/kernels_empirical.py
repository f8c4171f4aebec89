"""Finite-width sampling, forward propagation, Monte Carlo and exact kernels.

The Monte Carlo route averages S_l' S_l over independent weight draws; the
exact route runs the infinite-width entrywise recursion by bivariate
Gauss-Hermite quadrature and serves as its own oracle for the Monte Carlo
estimates.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ._pairwise import pairwise_expectation
from .activations import ActivationSpec
from .errors import DegenerateInputError, FormatError, NumericError
from .kernels_theory import NetworkSpec

# kinds whose pointwise derivative is a Dirac comb: no exact-NTK quadrature
_NO_POINTWISE_DERIV = frozenset({"sign", "step", "sigma_T", "sigma_Q"})

__all__ = [
    "WeightDraw",
    "KernelMatrix",
    "sample_weights",
    "forward_representations",
    "monte_carlo_ck",
    "exact_ck",
    "exact_ntk",
    "save_kernel_bin",
    "load_kernel_bin",
    "save_matrix_csv",
    "load_matrix_csv",
]

_KIND_CODES = {"ck": 0, "ntk": 1, "kprime": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class WeightDraw:
    """One realization of all layer weight matrices."""

    matrices: tuple[np.ndarray, ...]
    dist: str
    seed: object


_BLOCK = 1024


def _validate_symmetric(m, tol=1e-10):
    """Blockwise finiteness and symmetry checks (transpose-stride friendly)."""
    n = m.shape[0]
    worst = 0.0
    for i0 in range(0, n, _BLOCK):
        i1 = min(i0 + _BLOCK, n)
        if not np.all(np.isfinite(m[i0:i1])):
            return math.inf, False
        for j0 in range(i0, n, _BLOCK):
            j1 = min(j0 + _BLOCK, n)
            gap = np.abs(m[i0:i1, j0:j1] - m[j0:j1, i0:i1].T).max()
            worst = max(worst, float(gap))
    return worst, True


def _symmetrize(m):
    """(m + m') / 2 in place, blockwise."""
    n = m.shape[0]
    for i0 in range(0, n, _BLOCK):
        i1 = min(i0 + _BLOCK, n)
        for j0 in range(i0, n, _BLOCK):
            j1 = min(j0 + _BLOCK, n)
            avg = (m[i0:i1, j0:j1] + m[j0:j1, i0:i1].T) / 2.0
            m[i0:i1, j0:j1] = avg
            if j0 > i0:
                m[j0:j1, i0:i1] = avg.T
    return m


@dataclass(frozen=True)
class KernelMatrix:
    matrix: np.ndarray
    kind: str  # "ck" | "ntk" | "kprime"
    layer: int
    method: str

    def __post_init__(self):
        worst, finite = _validate_symmetric(self.matrix)
        if not finite:
            raise NumericError(f"{self.kind} kernel contains non-finite entries")
        if worst > 1e-10:
            raise NumericError(f"{self.kind} kernel is not symmetric")


def sample_weights(net: NetworkSpec, seed) -> WeightDraw:
    """Draw W_1..W_L with i.i.d. zero-mean unit-variance entries.

    gaussian -> N(0,1); bernoulli -> +-1; ternary(eps) -> 0 w.p. eps and
    +-(1-eps)^(-1/2) each w.p. (1-eps)/2.  Layer l is seeded independently
    from (seed, l), so draws are reproducible layer by layer.
    """
    dist = net.weight_dist
    mats = []
    for ell, dims in enumerate(net.layer_dims(), start=1):
        rng = np.random.default_rng(_spawn(seed, ell))
        if dist.kind == "gaussian":
            w = rng.standard_normal(dims)
        elif dist.kind == "bernoulli":
            w = rng.integers(0, 2, size=dims).astype(float) * 2.0 - 1.0
        else:
            eps = dist.epsilon
            mag = (1.0 - eps) ** -0.5
            u = rng.random(dims)
            w = np.where(u < eps, 0.0, np.where(u < eps + (1.0 - eps) / 2.0, mag, -mag))
        mats.append(w)
    return WeightDraw(tuple(mats), dist.kind, seed)


def _spawn(seed, *key):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + key
        )
    return np.random.SeedSequence(entropy=seed, spawn_key=key)


def forward_representations(
    net: NetworkSpec, draw: WeightDraw, X: np.ndarray, dtype=None
) -> list[np.ndarray]:
    """Representations S_1..S_L with S_l = sigma_l(W_l S_{l-1}) / sqrt(d_l).

    The first product W_1 X carries no extra normalization: the data columns
    already hold the 1/sqrt(p) scale.
    """
    if X.shape[0] != net.input_dim:
        raise ValueError("X row count must equal the network input dimension")
    dtype = np.dtype(dtype or X.dtype)
    cur = np.ascontiguousarray(X, dtype=dtype)
    out = []
    for sigma, w, width in zip(net.activations, draw.matrices, net.widths):
        pre = w.astype(dtype, copy=False) @ cur
        cur = np.asarray(sigma(pre), dtype=dtype)
        cur *= dtype.type(1.0 / math.sqrt(width))
        out.append(cur)
    return out


def monte_carlo_ck(
    net: NetworkSpec,
    X: np.ndarray,
    layer: int,
    replicates: int,
    seed,
    dtype=np.float64,
) -> KernelMatrix:
    """Average of S_l' S_l over independent weight draws.

    Replicate r draws from (seed, r, l) so the fan-out is reproducible; the
    accumulator is float64 regardless of the forward dtype.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    _check_layer(net, layer)
    acc = np.zeros((X.shape[1], X.shape[1]))
    for r in range(replicates):
        draw = sample_weights(net, _spawn(seed, r))
        s = forward_representations(net, draw, X, dtype=dtype)[layer - 1]
        # buffered in-place add upcasts without materializing a float64 copy
        np.add(acc, s.T @ s, out=acc)
    acc /= replicates
    return KernelMatrix(_symmetrize(acc), "ck", layer, f"monte_carlo({replicates})")


def _check_layer(net, layer):
    if not 1 <= layer <= net.depth:
        raise ValueError(f"layer must lie in 1..{net.depth}")


def _gram(X):
    G = X.T @ X
    return (G + G.T) / 2.0


def exact_ck(
    net: NetworkSpec, X: np.ndarray, layer: int, quad_order: int = 63
) -> KernelMatrix:
    """Infinite-width CK at the given layer via the entrywise recursion."""
    _check_layer(net, layer)
    K = _gram(np.asarray(X, dtype=float))
    if np.any(np.diag(K) <= 0.0):
        raise DegenerateInputError("zero-norm sample: kernel diagonal must be positive")
    for sigma in net.activations[:layer]:
        K = pairwise_expectation(K, quad_order, sigma)
        if np.any(np.diag(K) <= 0.0):
            raise DegenerateInputError("kernel diagonal collapsed during recursion")
    return KernelMatrix(_symmetrize(K), "ck", layer, f"exact_recursion({quad_order})")


def exact_ntk(
    net: NetworkSpec, X: np.ndarray, layer: int, quad_order: int = 63
) -> KernelMatrix:
    """Infinite-width NTK via N_l = K_l + N_{l-1} o K'_l (layer 0 gives X'X)."""
    if layer == 0:
        return KernelMatrix(_gram(np.asarray(X, dtype=float)), "ntk", 0, "exact_recursion")
    _check_layer(net, layer)
    for sigma in net.activations[:layer]:
        if sigma.kind in _NO_POINTWISE_DERIV:
            raise NumericError(
                f"{sigma.kind} has a distributional derivative; its K' comes "
                "from the equivalent-matrix route, not pointwise quadrature"
            )
    K = _gram(np.asarray(X, dtype=float))
    if np.any(np.diag(K) <= 0.0):
        raise DegenerateInputError("zero-norm sample: kernel diagonal must be positive")
    N = K.copy()
    for sigma in net.activations[:layer]:
        K_new = pairwise_expectation(K, quad_order, sigma)
        K_prime = pairwise_expectation(K, quad_order, sigma, deriv=True)
        N = K_new + N * K_prime
        K = K_new
        if np.any(np.diag(K) <= 0.0):
            raise DegenerateInputError("kernel diagonal collapsed during recursion")
    return KernelMatrix(_symmetrize(N), "ntk", layer, f"exact_recursion({quad_order})")


# ---------------------------------------------------------------------------
# kernel matrix I/O


def save_kernel_bin(km: KernelMatrix, path) -> None:
    """16-byte header (magic 'NTKM', n, kind, layer), then row-major float64."""
    n = km.matrix.shape[0]
    with open(path, "wb") as fh:
        fh.write(b"NTKM")
        fh.write(struct.pack("<III", n, _KIND_CODES[km.kind], km.layer))
        fh.write(np.ascontiguousarray(km.matrix, dtype="<f8").tobytes())


def load_kernel_bin(path) -> KernelMatrix:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16 or header[:4] != b"NTKM":
            raise FormatError(f"bad kernel binary header in {path}")
        n, kind_code, layer = struct.unpack("<III", header[4:])
        if kind_code not in _KIND_NAMES:
            raise FormatError(f"unknown kernel kind code {kind_code}")
        raw = fh.read(8 * n * n)
        if len(raw) < 8 * n * n:
            raise FormatError(f"truncated kernel binary {path}")
        m = np.frombuffer(raw, dtype="<f8").reshape(n, n).copy()
    return KernelMatrix(m, _KIND_NAMES[kind_code], layer, "file")


def save_matrix_csv(matrix: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", ndmin=2)
    if m.shape[0] != m.shape[1]:
        raise FormatError(f"expected a square matrix in {path}")
    return m
