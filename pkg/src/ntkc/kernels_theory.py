"""Layer-coefficient recursions and assembly of the equivalent kernel matrices.

The deterministic equivalents take the form
    K_ck  ~ a1 * X'X + V A V' + a0 * I,
    K_ntk ~ b1 * X'X + V B V' + b0 * I,
with all scalars produced by per-layer recursions over Gaussian moments of the
(centered) activations.  Activations are centered automatically before each
layer's moments are taken; centering only subtracts a constant from the layer
output and never changes derivative moments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .activations import ActivationSpec, activation_moments, center
from .data import MixtureStats
from .errors import DegenerateInputError, NumericError

__all__ = [
    "WeightDist",
    "NetworkSpec",
    "LayerCoefficients",
    "NtkCoefficients",
    "ck_coefficients",
    "ntk_coefficients",
    "center_network",
    "assemble_equivalent_ck",
    "assemble_equivalent_ntk",
    "assemble_equivalent_kprime",
    "coefficients_to_csv",
    "coefficients_to_json_dict",
]

_TAU_COLLAPSE = 1e-8
_NEG_TOL = 1e-12


@dataclass(frozen=True)
class WeightDist:
    """Weight entry distribution: gaussian, symmetric bernoulli, or ternary."""

    kind: str = "gaussian"
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "bernoulli", "ternary"):
            raise ValueError(f"unknown weight distribution {self.kind!r}")
        if self.kind == "ternary" and not 0.0 <= self.epsilon <= 0.99:
            raise ValueError("ternary sparsity epsilon must lie in [0, 0.99]")

    def to_json_dict(self):
        return {"kind": self.kind, "epsilon": self.epsilon}

    @classmethod
    def from_json_dict(cls, d):
        return cls(d["kind"], float(d.get("epsilon", 0.0)))


@dataclass(frozen=True)
class NetworkSpec:
    """Depth-L fully-connected net: input_dim -> widths[0] -> ... -> widths[-1]."""

    input_dim: int
    widths: tuple[int, ...]
    activations: tuple[ActivationSpec, ...]
    weight_dist: WeightDist = WeightDist()

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError("need depth >= 1 with positive widths")
        if len(self.activations) != len(self.widths):
            raise ValueError("one activation per layer required")

    @property
    def depth(self) -> int:
        return len(self.widths)

    def layer_dims(self) -> list[tuple[int, int]]:
        """(rows, cols) of each weight matrix."""
        dims = []
        prev = self.input_dim
        for w in self.widths:
            dims.append((w, prev))
            prev = w
        return dims

    def to_json_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "widths": list(self.widths),
            "activations": [a.to_json_dict() for a in self.activations],
            "weight_dist": self.weight_dist.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            int(d["input_dim"]),
            tuple(int(w) for w in d["widths"]),
            tuple(ActivationSpec.from_json_dict(a) for a in d["activations"]),
            WeightDist.from_json_dict(d.get("weight_dist", {"kind": "gaussian"})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json(cls, s: str) -> "NetworkSpec":
        return cls.from_json_dict(json.loads(s))


@dataclass(frozen=True)
class LayerCoefficients:
    """tau and the five off/on-diagonal scalars of one layer's CK equivalent."""

    tau: float
    a0: float
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float


@dataclass(frozen=True)
class NtkCoefficients:
    """NTK-side scalars; tau_dot/kappa are +inf for piecewise-constant layers."""

    tau_dot: float
    kappa: float
    b0: float
    b1: float
    b2: float
    b3: float
    adot0: float
    adot1: float
    adot2: float


def _clamp_nonneg(value, name, layer):
    if value < -_NEG_TOL:
        raise NumericError(f"coefficient {name} at layer {layer} is negative: {value}")
    return max(value, 0.0)


def _layer_chain(net: NetworkSpec, tau0: float, order: int):
    """Run the CK recursion; returns (coefficients, centered activations)."""
    if tau0 <= 0.0:
        raise ValueError("tau0 must be positive")
    coeffs = [LayerCoefficients(tau=tau0, a0=0.0, a1=1.0, a2=0.0, a3=0.0, a4=1.0, a5=0.0)]
    centered = []
    for ell, sigma in enumerate(net.activations, start=1):
        prev = coeffs[-1]
        sig_c = center(sigma, prev.tau, order)
        m = activation_moments(sig_c, prev.tau, order)
        tau = math.sqrt(max(m.sq, 0.0))
        if tau < _TAU_COLLAPSE:
            raise DegenerateInputError(
                f"activation at layer {ell} collapses the signal (tau = {tau:.3g})"
            )
        d1sq, d2sq = m.d1**2, m.d2**2
        a1 = _clamp_nonneg(d1sq * prev.a1, "a1", ell)
        a2 = _clamp_nonneg(d1sq * prev.a2 + 0.25 * d2sq * prev.a4**2, "a2", ell)
        a3 = _clamp_nonneg(d1sq * prev.a3 + 0.5 * d2sq * prev.a1**2, "a3", ell)
        a4 = prev.a4 * m.g2
        a5 = prev.a5 * m.g2 + 0.25 * prev.a4**2 * m.g4
        a0 = tau**2 - tau0**2 * a1
        if a0 < -1e-10:
            raise NumericError(f"a0 at layer {ell} is negative: {a0}")
        coeffs.append(LayerCoefficients(tau, max(a0, 0.0), a1, a2, a3, a4, a5))
        centered.append(sig_c)
    return coeffs, centered


def ck_coefficients(net: NetworkSpec, tau0: float, order: int = 127) -> list[LayerCoefficients]:
    """Per-layer CK coefficients for layers 0..L (layer 0 is the raw Gram)."""
    return _layer_chain(net, tau0, order)[0]


def center_network(net: NetworkSpec, tau0: float, order: int = 127) -> NetworkSpec:
    """The same net with every activation centered at its layer's input scale."""
    _, centered = _layer_chain(net, tau0, order)
    return NetworkSpec(net.input_dim, net.widths, tuple(centered), net.weight_dist)


def ntk_coefficients(
    net: NetworkSpec,
    tau0: float,
    ck: list[LayerCoefficients],
    order: int = 127,
) -> list[NtkCoefficients]:
    """NTK-side recursions on top of a computed CK chain.

    tau_dot needs E[(sigma')^2], which diverges for piecewise-constant
    activations; those layers carry tau_dot = kappa = inf while the beta and
    adot scalars (weak moments only) stay finite.
    """
    if len(ck) != net.depth + 1:
        raise ValueError("ck must hold layers 0..L of the same net")
    out = [
        NtkCoefficients(
            tau_dot=0.0, kappa=tau0, b0=0.0, b1=1.0, b2=0.0, b3=0.0,
            adot0=0.0, adot1=1.0, adot2=0.0,
        )
    ]
    for ell, sigma in enumerate(net.activations, start=1):
        prev_ck = ck[ell - 1]
        prev = out[-1]
        sig_c = center(sigma, prev_ck.tau, order)
        m = activation_moments(sig_c, prev_ck.tau, order)
        tau_dot = math.sqrt(m.dsq) if math.isfinite(m.dsq) else math.inf
        kappa_sq = ck[ell].tau ** 2 + prev.kappa**2 * tau_dot**2
        d1sq, d2sq = m.d1**2, m.d2**2
        b1 = _clamp_nonneg(ck[ell].a1 + d1sq * prev.b1, "b1", ell)
        b2 = _clamp_nonneg(ck[ell].a2 + d1sq * prev.b2, "b2", ell)
        b3 = _clamp_nonneg(
            ck[ell].a3 + d1sq * prev.b3 + d2sq * prev_ck.a1 * prev.b1, "b3", ell
        )
        b0 = kappa_sq - tau0**2 * b1
        out.append(
            NtkCoefficients(
                tau_dot=tau_dot,
                kappa=math.sqrt(kappa_sq) if math.isfinite(kappa_sq) else math.inf,
                b0=b0,
                b1=b1,
                b2=b2,
                b3=b3,
                adot0=d1sq,
                adot1=d2sq * prev_ck.a1,
                adot2=m.d1 * m.d3 * prev_ck.a4 / 2.0,
            )
        )
    return out


def _spike_matrix(c_tt, c_T, t, T):
    """[[c_tt t t' + c_T T, c_tt t], [c_tt t', c_tt]] of size (K+1)^2."""
    k = t.shape[0]
    A = np.empty((k + 1, k + 1))
    A[:k, :k] = c_tt * np.outer(t, t) + c_T * T
    A[:k, k] = c_tt * t
    A[k, :k] = c_tt * t
    A[k, k] = c_tt
    return A


def _check_shapes(stats: MixtureStats, X):
    if X.shape[1] != stats.V.shape[0]:
        raise ValueError("stats were computed for a different number of samples")


def assemble_equivalent_ck(
    coeffs: LayerCoefficients, stats: MixtureStats, X: np.ndarray
) -> np.ndarray:
    """a1 * X'X + V A V' + a0 * I, exactly symmetric."""
    _check_shapes(stats, X)
    G = X.T @ X
    A = _spike_matrix(coeffs.a2, coeffs.a3, stats.t, stats.T)
    K = coeffs.a1 * G + (stats.V @ A) @ stats.V.T
    K += coeffs.a0 * np.eye(X.shape[1])
    return (K + K.T) / 2.0


def assemble_equivalent_ntk(
    ntk: NtkCoefficients, stats: MixtureStats, X: np.ndarray
) -> np.ndarray:
    """b1 * X'X + V B V' + b0 * I, exactly symmetric."""
    _check_shapes(stats, X)
    if not math.isfinite(ntk.b0):
        raise NumericError(
            "NTK equivalent undefined: tau_dot is infinite (piecewise-constant layer)"
        )
    G = X.T @ X
    B = _spike_matrix(ntk.b2, ntk.b3, stats.t, stats.T)
    K = ntk.b1 * G + (stats.V @ B) @ stats.V.T
    K += ntk.b0 * np.eye(X.shape[1])
    return (K + K.T) / 2.0


def assemble_equivalent_kprime(
    ntk: NtkCoefficients, stats: MixtureStats, X: np.ndarray
) -> np.ndarray:
    """Entrywise adot0 + adot1 x_i'x_j + adot2 (chi_i + chi_j); diagonal tau_dot^2."""
    _check_shapes(stats, X)
    if not math.isfinite(ntk.tau_dot):
        raise NumericError(
            "K' equivalent undefined: tau_dot is infinite (piecewise-constant layer)"
        )
    G = X.T @ X
    K = ntk.adot0 + ntk.adot1 * G + ntk.adot2 * (stats.chi[:, None] + stats.chi[None, :])
    np.fill_diagonal(K, ntk.tau_dot**2)
    return (K + K.T) / 2.0


# ---------------------------------------------------------------------------
# exports


def _rows(ck, ntk=None):
    rows = []
    for ell, c in enumerate(ck):
        row = {
            "layer": ell,
            "tau": c.tau,
            "a0": c.a0,
            "a1": c.a1,
            "a2": c.a2,
            "a3": c.a3,
            "a4": c.a4,
            "a5": c.a5,
        }
        if ntk is not None:
            b = ntk[ell]
            # the theorem-statement diagonal variant, alongside the proof-form kappa
            kappa_stmt = (
                math.sqrt(c.tau**2 + b.tau_dot**2)
                if math.isfinite(b.tau_dot)
                else math.inf
            )
            row.update(
                tau_dot=b.tau_dot,
                kappa=b.kappa,
                kappa_stmt=kappa_stmt,
                b0=b.b0,
                b1=b.b1,
                b2=b.b2,
                b3=b.b3,
                adot0=b.adot0,
                adot1=b.adot1,
                adot2=b.adot2,
            )
        rows.append(row)
    return rows


def coefficients_to_csv(ck, ntk=None) -> str:
    rows = _rows(ck, ntk)
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(
            ",".join(str(row[c]) if c == "layer" else repr(float(row[c])) for c in cols)
        )
    return "\n".join(lines) + "\n"


def coefficients_to_json_dict(ck, ntk=None) -> dict:
    return {"layers": _rows(ck, ntk)}
