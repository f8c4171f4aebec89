"""Activation catalog and the Gaussian-moment engine.

Every per-layer scalar used by the kernel recursions is an expectation of the
form E[f(tau*xi)] or E[f(tau*xi) * He_k(xi)] with xi ~ N(0,1) and He_k the
probabilist Hermite polynomials.  Two evaluation routes exist:

* piecewise-polynomial activations (everything except sigmoid/sin/cos/erf)
  are integrated exactly against the Gaussian via truncated-moment
  recursions, so jumps and kinks cost no accuracy;
* smooth transcendental activations use Gauss-Hermite quadrature.

Weak derivatives are always taken through the Hermite route
E[sigma^(k)(tau*xi)] = tau^(-k) E[sigma(tau*xi) He_k(xi)], never by pointwise
differentiation, so sign/step/two-level/three-level activations are handled
uniformly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import NumericError

__all__ = [
    "ActivationSpec",
    "ActivationMoments",
    "gauss_expect",
    "weak_moment",
    "activation_moments",
    "closed_form_moments_T",
    "closed_form_moments_Q",
    "center",
    "KINDS",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)

# Probabilist Hermite polynomials He_0..He_4, low-to-high coefficients.
_HERMITE = (
    (1.0,),
    (0.0, 1.0),
    (-1.0, 0.0, 1.0),
    (0.0, -3.0, 0.0, 1.0),
    (3.0, 0.0, -6.0, 0.0, 1.0),
)

# kind -> required parameter names (in serialization order)
KINDS = {
    "relu": (),
    "leaky_relu": ("slope",),
    "linear": (),
    "abs": (),
    "sign": (),
    "step": (),
    "sigmoid": (),
    "sin": (),
    "cos": (),
    "erf": (),
    "poly": ("c2", "c1"),
    "sigma_T": ("a", "s1", "s2"),
    "sigma_Q": ("b1", "b2", "r1", "r2", "r3", "r4"),
}

_SMOOTH = frozenset({"sigmoid", "sin", "cos", "erf"})
# jump discontinuities: the pointwise derivative is a Dirac comb
_PIECEWISE_CONSTANT = frozenset({"sign", "step", "sigma_T", "sigma_Q"})


@dataclass(frozen=True)
class ActivationSpec:
    """An activation function plus the constant subtracted for centering."""

    kind: str
    params: tuple[float, ...] = ()
    center_shift: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        names = KINDS[self.kind]
        if len(self.params) != len(names):
            raise ValueError(
                f"{self.kind} expects parameters {names}, got {len(self.params)} values"
            )
        p = dict(zip(names, self.params))
        if self.kind == "leaky_relu" and not 0.0 < p["slope"] < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")
        if self.kind == "sigma_T" and not p["s1"] < p["s2"]:
            raise ValueError("sigma_T requires s1 < s2")
        if self.kind == "sigma_Q" and not (
            p["r1"] < p["r2"] <= p["r3"] < p["r4"]
        ):
            raise ValueError("sigma_Q requires r1 < r2 <= r3 < r4")

    @property
    def named_params(self) -> dict[str, float]:
        return dict(zip(KINDS[self.kind], self.params))

    def __call__(self, t):
        """Evaluate the (shifted) activation elementwise.

        The input dtype is preserved (float32 forward passes stay float32).
        """
        t = np.asarray(t)
        if t.dtype.kind != "f":
            t = t.astype(float)
        return _evaluate(self.kind, self.params, t) - t.dtype.type(self.center_shift)

    def derivative(self, t):
        """Pointwise derivative, defined only where sigma' is an ordinary function."""
        if self.kind in _PIECEWISE_CONSTANT:
            raise ValueError(
                f"{self.kind} has a distributional derivative; use weak moments instead"
            )
        return _evaluate_derivative(self.kind, self.params, np.asarray(t, dtype=float))

    def to_json_dict(self) -> dict:
        d = {"kind": self.kind}
        d.update(self.named_params)
        d["center_shift"] = self.center_shift
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ActivationSpec":
        kind = d["kind"]
        if kind not in KINDS:
            raise ValueError(f"unknown activation kind {kind!r}")
        params = tuple(float(d[name]) for name in KINDS[kind])
        return cls(kind, params, float(d.get("center_shift", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, s: str) -> "ActivationSpec":
        return cls.from_json_dict(json.loads(s))


def _evaluate(kind, params, t):
    dt = t.dtype
    if kind == "relu":
        return np.maximum(t, dt.type(0.0))
    if kind == "leaky_relu":
        (s,) = params
        return np.where(t < 0.0, dt.type(s) * t, t)
    if kind == "linear":
        return t
    if kind == "abs":
        return np.abs(t)
    if kind == "sign":
        return np.sign(t)
    if kind == "step":
        return (t >= 0.0).astype(dt)
    if kind == "sigmoid":
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
        e = np.exp(t[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if kind == "sin":
        return np.sin(t)
    if kind == "cos":
        return np.cos(t)
    if kind == "erf":
        import scipy.special as sp

        return sp.erf(t)
    if kind == "poly":
        c2, c1 = params
        return dt.type(c2) * t * t + dt.type(c1) * t
    if kind == "sigma_T":
        a, s1, s2 = params
        return dt.type(a) * ((t < s1) | (t > s2)).astype(dt)
    if kind == "sigma_Q":
        b1, b2, r1, r2, r3, r4 = params
        return dt.type(b1) * ((t < r1) | (t > r4)).astype(dt) + dt.type(b2) * (
            (t >= r2) & (t <= r3)
        ).astype(dt)
    raise AssertionError(kind)


def _evaluate_derivative(kind, params, t):
    if kind == "relu":
        return (t > 0.0).astype(float)
    if kind == "leaky_relu":
        (s,) = params
        return np.where(t < 0.0, s, 1.0)
    if kind == "linear":
        return np.ones_like(t)
    if kind == "abs":
        return np.sign(t)
    if kind == "sigmoid":
        s = _evaluate("sigmoid", (), t)
        return s * (1.0 - s)
    if kind == "sin":
        return np.cos(t)
    if kind == "cos":
        return -np.sin(t)
    if kind == "erf":
        return 2.0 / math.sqrt(math.pi) * np.exp(-t * t)
    if kind == "poly":
        c2, c1 = params
        return 2.0 * c2 * t + c1
    raise AssertionError(kind)


# ---------------------------------------------------------------------------
# exact Gaussian integration of piecewise polynomials


def _pieces(kind, params):
    """(breakpoints, piece coefficient lists) of the base activation in t.

    Pieces are polynomials low-to-high on the open intervals between
    consecutive breakpoints (with -inf/+inf at the ends).  Returns None for
    the smooth transcendental kinds.
    """
    if kind == "linear":
        return (), ([0.0, 1.0],)
    if kind == "poly":
        c2, c1 = params
        return (), ([0.0, c1, c2],)
    if kind == "relu":
        return (0.0,), ([0.0], [0.0, 1.0])
    if kind == "leaky_relu":
        (s,) = params
        return (0.0,), ([0.0, s], [0.0, 1.0])
    if kind == "abs":
        return (0.0,), ([0.0, -1.0], [0.0, 1.0])
    if kind == "sign":
        return (0.0,), ([-1.0], [1.0])
    if kind == "step":
        return (0.0,), ([0.0], [1.0])
    if kind == "sigma_T":
        a, s1, s2 = params
        return (s1, s2), ([a], [0.0], [a])
    if kind == "sigma_Q":
        b1, b2, r1, r2, r3, r4 = params
        return (r1, r2, r3, r4), ([b1], [0.0], [b2], [0.0], [b1])
    return None


def _derivative_pieces(kind, params):
    """Pieces of sigma' where it is an ordinary (piecewise-poly) function."""
    if kind == "linear":
        return (), ([1.0],)
    if kind == "poly":
        c2, c1 = params
        return (), ([c1, 2.0 * c2],)
    if kind == "relu":
        return (0.0,), ([0.0], [1.0])
    if kind == "leaky_relu":
        (s,) = params
        return (0.0,), ([s], [1.0])
    if kind == "abs":
        return (0.0,), ([-1.0], [1.0])
    return None


def _phi(x):
    return math.exp(-0.5 * x * x) / _SQRT2PI if math.isfinite(x) else 0.0


def _Phi(x):
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _pow_phi(x, m):
    # x^m * phi(x), with the convention that it vanishes at +-inf
    if not math.isfinite(x):
        return 0.0
    return x**m * _phi(x) if m else _phi(x)


def _truncated_moments(a, b, mmax):
    """M_m = int_a^b x^m phi(x) dx for m = 0..mmax."""
    out = [0.0] * (mmax + 1)
    out[0] = _Phi(b) - _Phi(a)
    for m in range(1, mmax + 1):
        prev = (m - 1) * out[m - 2] if m >= 2 else 0.0
        out[m] = prev + _pow_phi(a, m - 1) - _pow_phi(b, m - 1)
    return out


def _poly_square(c):
    out = [0.0] * (2 * len(c) - 1)
    for i, ci in enumerate(c):
        for j, cj in enumerate(c):
            out[i + j] += ci * cj
    return out


def _scale_shift_pieces(breaks, coeffs, tau, shift):
    """Pieces of g(x) = sigma(tau*x) - shift from pieces of sigma(t)."""
    bx = tuple(b / tau for b in breaks)
    cx = []
    for c in coeffs:
        cc = [ck * tau**k for k, ck in enumerate(c)]
        cc[0] -= shift
        cx.append(cc)
    return bx, cx


def _hermite_piece_expect(breaks, coeffs, k):
    """E[g(xi) He_k(xi)] for a piecewise polynomial g given in xi."""
    edges = (-math.inf,) + tuple(breaks) + (math.inf,)
    he = _HERMITE[k]
    total = 0.0
    for (lo, hi), c in zip(zip(edges[:-1], edges[1:]), coeffs):
        mom = _truncated_moments(lo, hi, len(c) - 1 + len(he) - 1)
        for i, ci in enumerate(c):
            if ci == 0.0:
                continue
            for j, hj in enumerate(he):
                if hj:
                    total += ci * hj * mom[i + j]
    return total


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=32)
def _hermgauss(order):
    import scipy.special as sp  # stable for large orders, unlike numpy's

    x, w = sp.roots_hermite(order)
    return x, w / math.sqrt(math.pi)


def gauss_expect(f: Callable, tau: float, order: int = 127) -> float:
    """E[f(tau*xi)], xi ~ N(0,1), by Gauss-Hermite quadrature.

    Exact for polynomials f of degree <= 2*order - 1.
    """
    if order < 2:
        raise ValueError("order must be >= 2")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    x, w = _hermgauss(order)
    vals = np.asarray(f(math.sqrt(2.0) * tau * x), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericError("non-finite value at a quadrature node")
    return float(w @ vals)


def _quad_hermite_expect(g: Callable, k: int, order: int) -> float:
    """E[g(xi) He_k(xi)] by Gauss-Hermite quadrature (g already in xi)."""
    x, w = _hermgauss(order)
    xi = math.sqrt(2.0) * x
    he = np.polynomial.polynomial.polyval(xi, _HERMITE[k])
    vals = np.asarray(g(xi), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericError("non-finite value at a quadrature node")
    return float(w @ (vals * he))


def weak_moment(sigma: ActivationSpec, tau: float, k: int, order: int = 127) -> float:
    """k-th weak derivative expectation E[sigma^(k)(tau*xi)].

    Computed as tau^(-k) E[sigma(tau*xi) He_k(xi)], which agrees with the
    pointwise derivative for smooth sigma and extends to jumps.
    """
    if not 0 <= k <= 4:
        raise ValueError("k must be in 0..4")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    # the subtracted constant integrates to zero against He_k for k >= 1;
    # dropping it keeps derivative moments bitwise independent of centering
    shift = sigma.center_shift if k == 0 else 0.0
    pieces = _pieces(sigma.kind, sigma.params)
    if pieces is not None:
        bx, cx = _scale_shift_pieces(*pieces, tau, shift)
        raw = _hermite_piece_expect(bx, cx, k)
    else:
        base = lambda xi: _evaluate(sigma.kind, sigma.params, tau * xi) - shift
        raw = _quad_hermite_expect(base, k, order)
    return raw / tau**k


@dataclass(frozen=True)
class ActivationMoments:
    """Scalar Gaussian expectations of one activation at input scale tau.

    m0 = E[sigma], d1..d3 = weak derivative means, sq = E[sigma^2],
    dsq = E[(sigma')^2] (inf when sigma' is a Dirac comb),
    g2 = E[(sigma')^2 + sigma*sigma''] and
    g4 = E[sigma*sigma'''' + 4 sigma'*sigma''' + 3 (sigma'')^2],
    both taken through weak moments of sigma^2.
    """

    tau_in: float
    m0: float
    d1: float
    d2: float
    d3: float
    sq: float
    dsq: float
    g2: float
    g4: float

    def __post_init__(self):
        if self.tau_in <= 0.0:
            raise ValueError("tau_in must be positive")
        for name in ("m0", "d1", "d2", "d3", "sq", "g2", "g4"):
            if not math.isfinite(getattr(self, name)):
                raise NumericError(f"non-finite activation moment {name}")

    def check_consistency(self):
        """Jensen checks; valid when all fields describe the same function."""
        if self.sq < self.m0**2 - 1e-10:
            raise NumericError("moment invariant violated: sq < m0^2")
        if self.dsq < self.d1**2 - 1e-10:
            raise NumericError("moment invariant violated: dsq < d1^2")
        return self


def _piecewise_moments(sigma, tau):
    breaks, coeffs = _pieces(sigma.kind, sigma.params)
    bx, cx = _scale_shift_pieces(breaks, coeffs, tau, sigma.center_shift)
    m0 = _hermite_piece_expect(bx, cx, 0)
    bx0, cx0 = _scale_shift_pieces(breaks, coeffs, tau, 0.0)
    d1 = _hermite_piece_expect(bx0, cx0, 1) / tau
    d2 = _hermite_piece_expect(bx0, cx0, 2) / tau**2
    d3 = _hermite_piece_expect(bx0, cx0, 3) / tau**3
    sq_cx = [_poly_square(c) for c in cx]
    sq = _hermite_piece_expect(bx, sq_cx, 0)
    g2 = _hermite_piece_expect(bx, sq_cx, 2) / tau**2 / 2.0
    g4 = _hermite_piece_expect(bx, sq_cx, 4) / tau**4 / 2.0
    if sigma.kind in _PIECEWISE_CONSTANT:
        dsq = math.inf
    else:
        dbx, dcx = _scale_shift_pieces(
            *_derivative_pieces(sigma.kind, sigma.params), tau, 0.0
        )
        dsq = _hermite_piece_expect(dbx, [_poly_square(c) for c in dcx], 0)
    return ActivationMoments(tau, m0, d1, d2, d3, sq, dsq, g2, g4)


def _quadrature_moments(sigma, tau, order):
    def g(xi):
        return sigma(tau * xi)

    def g0(xi):  # shift-free: derivative moments ignore the centering constant
        return _evaluate(sigma.kind, sigma.params, tau * xi)

    m0 = _quad_hermite_expect(g, 0, order)
    d1 = _quad_hermite_expect(g0, 1, order) / tau
    d2 = _quad_hermite_expect(g0, 2, order) / tau**2
    d3 = _quad_hermite_expect(g0, 3, order) / tau**3
    g2f = lambda xi: g(xi) ** 2
    sq = _quad_hermite_expect(g2f, 0, order)
    g2 = _quad_hermite_expect(g2f, 2, order) / tau**2 / 2.0
    g4 = _quad_hermite_expect(g2f, 4, order) / tau**4 / 2.0
    dsq = gauss_expect(lambda t: sigma.derivative(t) ** 2, tau, order)
    return ActivationMoments(tau, m0, d1, d2, d3, sq, dsq, g2, g4)


def activation_moments(
    sigma: ActivationSpec, tau: float, order: int = 127
) -> ActivationMoments:
    """All scalar expectations of sigma at input scale tau.

    Closed forms are used for sigma_T / sigma_Q and every other piecewise
    polynomial kind; quadrature only for sigmoid/sin/cos/erf.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if sigma.kind in _SMOOTH:
        return _quadrature_moments(sigma, tau, order).check_consistency()
    return _piecewise_moments(sigma, tau).check_consistency()


def center(sigma: ActivationSpec, tau: float, order: int = 127) -> ActivationSpec:
    """Shift sigma so that E[sigma(tau*xi)] = 0; derivatives are unchanged."""
    m0 = activation_moments(sigma, tau, order).m0
    return replace(sigma, center_shift=sigma.center_shift + m0)


# ---------------------------------------------------------------------------
# printed closed forms for the two-level and three-level activations


def _moments_T_fast(a, s1, s2, tau):
    """(m0_raw, d1, d2, g2, centered sq) of the two-level activation; the
    cheap path used inside solver objectives."""
    rt2t = math.sqrt(2.0) * tau
    e1 = math.exp(-s1 * s1 / (2.0 * tau * tau))
    e2 = math.exp(-s2 * s2 / (2.0 * tau * tau))
    m0 = 0.5 * a * (math.erf(s1 / rt2t) - math.erf(s2 / rt2t)) + a
    d1 = a / (_SQRT2PI * tau) * (e2 - e1)
    d2 = a / (_SQRT2PI * tau**3) * (s2 * e2 - s1 * e1)
    sq = max(0.5 * a * a * (math.erf(s1 / rt2t) - math.erf(s2 / rt2t) + 2.0) - m0 * m0, 0.0)
    g2 = (a * a - 2.0 * a * m0) / (_SQRT2PI * tau**3) * (s2 * e2 - s1 * e1) / 2.0
    return m0, d1, d2, g2, sq


def _moments_Q_fast(b1, b2, r1, r2, r3, r4, tau):
    """(m0_raw, d1, d2, g2, centered sq) of the three-level activation."""
    rt2t = math.sqrt(2.0) * tau
    e1, e2, e3, e4 = (math.exp(-r * r / (2.0 * tau * tau)) for r in (r1, r2, r3, r4))
    f1, f2, f3, f4 = (math.erf(r / rt2t) for r in (r1, r2, r3, r4))
    m0 = 0.5 * b1 * (f1 - f4) + b1 + 0.5 * b2 * (f3 - f2)
    d1 = (b1 * (e4 - e1) + b2 * (e2 - e3)) / (_SQRT2PI * tau)
    d2 = (b1 * (r4 * e4 - r1 * e1) + b2 * (r2 * e2 - r3 * e3)) / (_SQRT2PI * tau**3)
    sq = max(
        0.5 * b1 * b1 * (f1 - f4) + b1 * b1 + 0.5 * b2 * b2 * (f3 - f2) - m0 * m0, 0.0
    )
    g2 = (
        (b1 * b1 * (r4 * e4 - r1 * e1) + b2 * b2 * (r2 * e2 - r3 * e3))
        / (_SQRT2PI * tau**3)
        - 2.0 * m0 * d2
    ) / 2.0
    return m0, d1, d2, g2, sq


def closed_form_moments_T(a: float, s1: float, s2: float, tau: float) -> ActivationMoments:
    """Moments of the centered two-level activation a*(1_{t<s1} + 1_{t>s2}).

    m0 reports the uncentered mean; sq/g2 are the centered second-moment
    quantities entering the recursions.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if not s1 < s2:
        raise ValueError("sigma_T requires s1 < s2")
    m0, d1, d2, g2, sq = _moments_T_fast(a, s1, s2, tau)
    # third weak derivative and g4 from the exact piecewise engine
    spec = ActivationSpec("sigma_T", (a, s1, s2), center_shift=m0)
    ref = _piecewise_moments(spec, tau)
    return ActivationMoments(tau, m0, d1, d2, ref.d3, sq, math.inf, g2, ref.g4)


def closed_form_moments_Q(
    b1: float,
    b2: float,
    r1: float,
    r2: float,
    r3: float,
    r4: float,
    tau: float,
) -> ActivationMoments:
    """Moments of the centered three-level activation.

    sigma_Q(t) = b1*(1_{t<r1} + 1_{t>r4}) + b2*1_{r2<=t<=r3}.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if not (r1 < r2 <= r3 < r4):
        raise ValueError("sigma_Q requires r1 < r2 <= r3 < r4")
    m0, d1, d2, g2, sq = _moments_Q_fast(b1, b2, r1, r2, r3, r4, tau)
    spec = ActivationSpec("sigma_Q", (b1, b2, r1, r2, r3, r4), center_shift=m0)
    ref = _piecewise_moments(spec, tau)
    return ActivationMoments(tau, m0, d1, d2, ref.d3, sq, math.inf, g2, ref.g4)
