"""Symmetric eigendecomposition, operator norms, and spectral comparisons.

Operator-norm closeness of two kernels transfers to eigenvalues (Weyl) and to
isolated eigenvectors (Davis-Kahan); ``compare`` packages both views plus
shared-bin histograms for plotting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

__all__ = ["SpectralReport", "sym_eig", "operator_norm_diff", "compare"]

_MAX_N = 4096


@dataclass(frozen=True)
class SpectralReport:
    eigs_a: np.ndarray
    eigs_b: np.ndarray
    norm_diff: float
    rel_norm_diff: float
    alignments: np.ndarray
    histogram: dict
    weyl_margin: float  # max_i |l_i(A) - l_i(B)| - norm_diff (<= tol by Weyl)

    def to_json_dict(self) -> dict:
        return {
            "eigs_a": self.eigs_a.tolist(),
            "eigs_b": self.eigs_b.tolist(),
            "norm_diff": self.norm_diff,
            "rel_norm_diff": self.rel_norm_diff,
            "alignments": self.alignments.tolist(),
            "histogram": self.histogram,
            "weyl_margin": self.weyl_margin,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def _check_square_symmetric(M, tol=1e-8):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix has non-finite entries")
    scale = np.abs(M).max() or 1.0
    if np.abs(M - M.T).max() > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return (M + M.T) / 2.0


def sym_eig(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of symmetric M.

    Signs are canonical: the largest-magnitude entry of each vector is
    positive.  n is capped at 4096 (dense decomposition).
    """
    M = _check_square_symmetric(M)
    if M.shape[0] > _MAX_N:
        raise ValueError(f"dense eigendecomposition capped at n = {_MAX_N}")
    w, q = np.linalg.eigh(M)
    order = np.argsort(w)[::-1]
    w = w[order]
    q = q[:, order]
    picks = np.abs(q).argmax(axis=0)
    signs = np.sign(q[picks, np.arange(q.shape[1])])
    signs[signs == 0] = 1.0
    return w, q * signs


def operator_norm_diff(A: np.ndarray, B: np.ndarray, tol: float = 1e-9,
                       max_iter: int = 10_000) -> float:
    """Spectral norm of A - B by Lanczos iteration on the symmetric difference.

    Deterministic start; raises NumericError (carrying the partial estimate)
    when the iteration cap is hit before the relative tolerance.  Plain power
    iteration stalls on the near-degenerate bulk edges these differences
    have, so ARPACK's restarted Lanczos does the work.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError("shapes differ")
    D = A - B
    D = (D + D.T) / 2.0
    n = D.shape[0]
    if np.abs(D).max() == 0.0:
        return 0.0
    if n < 8:
        return float(np.abs(np.linalg.eigvalsh(D)).max())
    from scipy.sparse.linalg import ArpackNoConvergence, eigsh

    rng = np.random.default_rng(np.random.SeedSequence(0xA11CE))
    v0 = np.ones(n) + 1e-3 * rng.standard_normal(n)
    try:
        w = eigsh(
            D, k=1, which="LM", v0=v0, tol=tol, maxiter=max_iter,
            return_eigenvectors=False,
        )
        return float(abs(w[0]))
    except ArpackNoConvergence as exc:
        partial = float(abs(exc.eigenvalues[0])) if len(exc.eigenvalues) else None
        raise NumericError(
            f"Lanczos iteration did not converge in {max_iter} iterations",
            partial=partial,
        ) from exc


def _fd_histogram(eigs_a, eigs_b, mask_below=None):
    """Freedman-Diaconis shared bins over the union range."""
    allv = np.concatenate([eigs_a, eigs_b])
    if mask_below is not None:
        allv = allv[np.abs(allv) > mask_below]
        eigs_a = eigs_a[np.abs(eigs_a) > mask_below]
        eigs_b = eigs_b[np.abs(eigs_b) > mask_below]
    if allv.size == 0:
        return {"edges": [], "counts_a": [], "counts_b": [], "masked_below": mask_below}
    q75, q25 = np.percentile(allv, [75, 25])
    iqr = q75 - q25
    width = 2.0 * iqr / allv.size ** (1.0 / 3.0)
    lo, hi = allv.min(), allv.max()
    if width <= 0.0 or hi == lo:
        nbins = 1
    else:
        nbins = max(1, min(512, int(math.ceil((hi - lo) / width))))
    edges = np.linspace(lo, hi, nbins + 1)
    counts_a, _ = np.histogram(eigs_a, bins=edges)
    counts_b, _ = np.histogram(eigs_b, bins=edges)
    return {
        "edges": edges.tolist(),
        "counts_a": counts_a.tolist(),
        "counts_b": counts_b.tolist(),
        "masked_below": mask_below,
    }


def _cluster_alignments(eigs_a, qa, qb, k, gap_tol):
    """|v_a . v_b| per index, except inside degenerate clusters where the
    cosines of principal angles between the subspaces are reported."""
    out = np.empty(k)
    i = 0
    while i < k:
        j = i + 1
        while j < len(eigs_a) and eigs_a[j - 1] - eigs_a[j] < gap_tol:
            j += 1
        block = slice(i, min(j, k))
        if j - i == 1:
            out[block] = abs(float(qa[:, i] @ qb[:, i]))
        else:
            s = np.linalg.svd(qa[:, i:j].T @ qb[:, i:j], compute_uv=False)
            out[block] = s[: block.stop - block.start]
        i = j
    return out


def compare(A: np.ndarray, B: np.ndarray, k: int = 5,
            mask_small: bool = True) -> SpectralReport:
    """Full spectral comparison of two symmetric matrices.

    Alignments pair eigenvectors in matched descending order; degenerate
    eigenvalue clusters (gap below 1e-8 * ||A||) are compared through
    principal angles.  The Weyl bound |l_i(A) - l_i(B)| <= ||A - B|| is
    checked on every call.
    """
    ea, qa = sym_eig(A)
    eb, qb = sym_eig(B)
    if not 1 <= k <= ea.size:
        raise ValueError("k must lie in 1..n")
    nd = operator_norm_diff(A, B)
    norm_b = max(abs(eb[0]), abs(eb[-1]))
    rel = nd / norm_b if norm_b > 0 else 0.0
    gap_tol = 1e-8 * max(abs(ea[0]), abs(ea[-1]), 1e-300)
    alignments = _cluster_alignments(ea, qa, qb, k, gap_tol)
    weyl_margin = float(np.abs(ea - eb).max() - nd)
    if weyl_margin > 1e-8 * max(1.0, norm_b):
        raise NumericError(
            f"Weyl bound violated by {weyl_margin}: eigensolver inconsistency"
        )
    mask = 1e-8 * max(abs(ea[0]), abs(eb[0])) if mask_small else None
    hist = _fd_histogram(ea, eb, mask)
    return SpectralReport(ea, eb, float(nd), float(rel), alignments, hist, weyl_margin)
