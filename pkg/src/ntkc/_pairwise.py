"""Entrywise bivariate-Gaussian kernel recursions (the hot loops).

Each new kernel entry is E[f(u) f(v)] with (u, v) bivariate Gaussian matched
to the previous layer's entries.  Two integration routes:

* smooth or polynomial f: tensorized Gauss-Hermite (exact for polynomials,
  spectrally accurate for analytic f);
* piecewise-affine f (relu/leaky/abs/sign/step and the two/three-level
  activations, plus their derivatives): the inner conditional integral is
  done in closed form (erf/exp of the breakpoints) and the outer integral by
  Gauss-Legendre panels split at every kink, so jumps cost no accuracy.

A numba-compiled path and a numpy path compute the same quantities;
selection happens in :mod:`ntkc._backend`.
"""

from __future__ import annotations

import math

import numpy as np

from ._backend import USE_NUMBA

_SQRT2PI = math.sqrt(2.0 * math.pi)
_TAIL = 10.0  # integration cutoff in standard deviations
_GL_ORDER = 16
_MAX_PANEL = 1.0

# activation codes for the Gauss-Hermite route
ACT_CODES = {"linear": 2, "sigmoid": 6, "sin": 7, "cos": 8, "erf": 9, "poly": 10}
DERIV_CODES = {"linear": 102, "sigmoid": 106, "sin": 107, "cos": 108, "erf": 109,
               "poly": 110}


def _act_scalar(code, params, shift, t):
    if code == 2:
        v = t
    elif code == 6:
        v = 1.0 / (1.0 + math.exp(-t)) if t >= 0.0 else math.exp(t) / (1.0 + math.exp(t))
    elif code == 7:
        v = math.sin(t)
    elif code == 8:
        v = math.cos(t)
    elif code == 9:
        v = math.erf(t)
    elif code == 10:
        v = params[0] * t * t + params[1] * t
    elif code == 102:
        v = 1.0
    elif code == 106:
        s = 1.0 / (1.0 + math.exp(-t)) if t >= 0.0 else math.exp(t) / (1.0 + math.exp(t))
        v = s * (1.0 - s)
    elif code == 107:
        v = math.cos(t)
    elif code == 108:
        v = -math.sin(t)
    elif code == 109:
        v = 2.0 / math.sqrt(math.pi) * math.exp(-t * t)
    elif code == 110:
        v = 2.0 * params[0] * t + params[1]
    else:
        v = math.nan
    return v - shift


def _pairwise_gauss_hermite(K, nodes, weights, code, params, shift):
    n = K.shape[0]
    q = nodes.size
    out = np.empty_like(K)
    su = np.empty(q)
    for i in range(n):
        si = math.sqrt(K[i, i])
        for a in range(q):
            su[a] = _act_scalar(code, params, shift, si * nodes[a])
        diag = 0.0
        for a in range(q):
            diag += weights[a] * su[a] * su[a]
        out[i, i] = diag
        for j in range(i + 1, n):
            sj = math.sqrt(K[j, j])
            rho = K[i, j] / (si * sj)
            if rho > 1.0:
                rho = 1.0
            elif rho < -1.0:
                rho = -1.0
            c1 = rho * sj
            c2 = math.sqrt(1.0 - rho * rho) * sj
            acc = 0.0
            for a in range(q):
                inner = 0.0
                ca = c1 * nodes[a]
                for b in range(q):
                    inner += weights[b] * _act_scalar(code, params, shift, ca + c2 * nodes[b])
                acc += weights[a] * su[a] * inner
            out[i, j] = acc
            out[j, i] = acc
    return out


# ---------------------------------------------------------------------------
# piecewise-affine route


def _phi(x):
    return math.exp(-0.5 * x * x) / _SQRT2PI


def _Phi(x):
    return 0.5 * (1.0 + math.erf(x * 0.7071067811865476))


def _piece_eval(edges, a, b, t):
    k = 0
    for m in range(edges.shape[0]):
        if t >= edges[m]:
            k = m + 1
        else:
            break
    return a[k] + b[k] * t


def _cond_mean(edges, a, b, mu, s):
    """E[f(mu + s*xi)] for the piecewise-affine f, xi ~ N(0,1), exactly."""
    if s <= 1e-300:
        return _piece_eval(edges, a, b, mu)
    total = 0.0
    m = edges.shape[0]
    for k in range(m + 1):
        lo = (edges[k - 1] - mu) / s if k > 0 else -math.inf
        hi = (edges[k] - mu) / s if k < m else math.inf
        plo = _Phi(lo) if lo > -38.0 else 0.0
        phi_lo = _phi(lo) if abs(lo) < 38.0 else 0.0
        phi_hi = _phi(hi) if abs(hi) < 38.0 else 0.0
        phi_cap = _Phi(hi) if hi < 38.0 else 1.0
        p = phi_cap - plo
        if p <= 0.0 and phi_lo == 0.0 and phi_hi == 0.0:
            continue
        total += (a[k] + b[k] * mu) * p + b[k] * s * (phi_lo - phi_hi)
    return total


def _trunc_m012(lo, hi):
    plo = _Phi(lo) if lo > -38.0 else 0.0
    phi_lo = _phi(lo) if abs(lo) < 38.0 else 0.0
    phi_hi = _phi(hi) if abs(hi) < 38.0 else 0.0
    phi_cap = _Phi(hi) if hi < 38.0 else 1.0
    m0 = phi_cap - plo
    m1 = phi_lo - phi_hi
    lo_t = lo * phi_lo if abs(lo) < 38.0 else 0.0
    hi_t = hi * phi_hi if abs(hi) < 38.0 else 0.0
    m2 = m0 + lo_t - hi_t
    return m0, m1, m2


def _pair_exact_colinear(s1, s2, edges, a, b):
    """E[f(s1*xi) f(s2*xi)] exactly (s2 may be negative); f piecewise affine."""
    m = edges.shape[0]
    cuts = np.empty(2 * m + 2)
    cuts[0] = -math.inf
    nc = 1
    for k in range(m):
        if s1 > 1e-300:
            cuts[nc] = edges[k] / s1
            nc += 1
        if abs(s2) > 1e-300:
            cuts[nc] = edges[k] / s2
            nc += 1
    cuts[nc] = math.inf
    nc += 1
    sub = np.sort(cuts[:nc])
    total = 0.0
    for k in range(nc - 1):
        lo, hi = sub[k], sub[k + 1]
        if not hi > lo:
            continue
        mid = 0.5 * (lo + hi)
        if not math.isfinite(mid):
            mid = lo + 1.0 if math.isfinite(lo) else hi - 1.0
            if not math.isfinite(mid):
                mid = 0.0
        k1 = _piece_index(edges, s1 * mid)
        k2 = _piece_index(edges, s2 * mid)
        # (a1 + b1 s1 x)(a2 + b2 s2 x): quadratic in x
        c0 = a[k1] * a[k2]
        c1 = a[k1] * b[k2] * s2 + a[k2] * b[k1] * s1
        c2 = b[k1] * b[k2] * s1 * s2
        m0, m1, m2 = _trunc_m012(lo, hi)
        total += c0 * m0 + c1 * m1 + c2 * m2
    return total


def _piece_index(edges, t):
    k = 0
    for m in range(edges.shape[0]):
        if t >= edges[m]:
            k = m + 1
        else:
            break
    return k


def _build_panels(edges, si, c1, c2, splits):
    """Panel boundaries in the outer variable: kinks of f(si*x), pullbacks of
    the inner breakpoints (with refinement around steep ramps), tail cutoffs."""
    ns = 0
    splits[ns] = -_TAIL
    ns += 1
    splits[ns] = _TAIL
    ns += 1
    m = edges.shape[0]
    for k in range(m):
        x = edges[k] / si
        if -_TAIL < x < _TAIL:
            splits[ns] = x
            ns += 1
    if abs(c1) > 1e-12:
        w = 3.0 * c2 / abs(c1)
        for k in range(m):
            xc = edges[k] / c1
            for off in (-3.0, -1.0, 0.0, 1.0, 3.0):
                x = xc + off * w
                if -_TAIL < x < _TAIL:
                    splits[ns] = x
                    ns += 1
    sub = np.sort(splits[:ns])
    return sub


def _hybrid_entry(si, c1, c2, edges, a, b, glx, glw, splits):
    sub = _build_panels(edges, si, c1, c2, splits)
    total = 0.0
    for k in range(sub.shape[0] - 1):
        lo, hi = sub[k], sub[k + 1]
        width = hi - lo
        if width <= 1e-14:
            continue
        nsub = int(width / _MAX_PANEL) + 1
        h = width / nsub
        for s in range(nsub):
            p_lo = lo + s * h
            half = 0.5 * h
            mid = p_lo + half
            for q in range(glx.shape[0]):
                x = mid + half * glx[q]
                fu = _piece_eval(edges, a, b, si * x)
                hv = _cond_mean(edges, a, b, c1 * x, c2)
                total += glw[q] * half * _phi(x) * fu * hv
    return total


def _pairwise_piecewise(K, edges, a, b, glx, glw):
    n = K.shape[0]
    out = np.empty_like(K)
    splits = np.empty(64)
    for i in range(n):
        si = math.sqrt(K[i, i])
        out[i, i] = _pair_exact_colinear(si, si, edges, a, b)
        for j in range(i + 1, n):
            sj = math.sqrt(K[j, j])
            rho = K[i, j] / (si * sj)
            if rho > 1.0:
                rho = 1.0
            elif rho < -1.0:
                rho = -1.0
            if abs(rho) >= 1.0 - 1e-12:
                v = _pair_exact_colinear(si, sj if rho > 0.0 else -sj, edges, a, b)
            else:
                c1 = rho * sj
                c2 = math.sqrt(1.0 - rho * rho) * sj
                v = _hybrid_entry(si, c1, c2, edges, a, b, glx, glw, splits)
            out[i, j] = v
            out[j, i] = v
    return out


if USE_NUMBA:
    import numba

    _act_scalar = numba.njit(cache=True, inline="always")(_act_scalar)
    _phi = numba.njit(cache=True, inline="always")(_phi)
    _Phi = numba.njit(cache=True, inline="always")(_Phi)
    _piece_eval = numba.njit(cache=True, inline="always")(_piece_eval)
    _piece_index = numba.njit(cache=True, inline="always")(_piece_index)
    _cond_mean = numba.njit(cache=True)(_cond_mean)
    _trunc_m012 = numba.njit(cache=True, inline="always")(_trunc_m012)
    _pair_exact_colinear = numba.njit(cache=True)(_pair_exact_colinear)
    _build_panels = numba.njit(cache=True)(_build_panels)
    _hybrid_entry = numba.njit(cache=True)(_hybrid_entry)
    _pairwise_gauss_hermite = numba.njit(cache=True)(_pairwise_gauss_hermite)
    _pairwise_piecewise = numba.njit(cache=True)(_pairwise_piecewise)


def _affine_pieces(kind, params, shift):
    """(inner edges, intercepts, slopes) of the shifted activation, for the
    piecewise-affine route."""
    from .activations import _pieces  # local import to avoid a cycle at load

    breaks, coeffs = _pieces(kind, params)
    edges = np.asarray(breaks, dtype=float)
    a = np.empty(len(coeffs))
    b = np.empty(len(coeffs))
    for k, c in enumerate(coeffs):
        if len(c) > 2:
            raise ValueError("piecewise route requires affine pieces")
        a[k] = c[0] - shift
        b[k] = c[1] if len(c) > 1 else 0.0
    return edges, a, b


_PIECEWISE_KINDS = {"relu", "leaky_relu", "abs", "sign", "step", "sigma_T", "sigma_Q"}
# derivatives that are themselves piecewise affine (constant) functions
_PIECEWISE_DERIVS = {
    "relu": ((0.0,), (0.0, 1.0), (0.0, 0.0)),
    "abs": ((0.0,), (-1.0, 1.0), (0.0, 0.0)),
}


@np.errstate(all="ignore")
def pairwise_expectation(K, order, sigma, deriv=False):
    """New kernel with entries E[f(u) f(v)], f = sigma or sigma', under the
    bivariate Gaussian defined by K (positive diagonal required).

    Correlations are clamped to [-1, 1] against floating-point drift.
    """
    K = np.ascontiguousarray(K, dtype=float)
    kind = sigma.kind
    if deriv:
        if kind in _PIECEWISE_DERIVS:
            edges, a, b = _PIECEWISE_DERIVS[kind]
            return _run_piecewise(K, np.asarray(edges), np.asarray(a), np.asarray(b))
        if kind == "leaky_relu":
            slope = sigma.params[0]
            return _run_piecewise(
                K, np.zeros(1), np.array([slope, 1.0]), np.zeros(2)
            )
        if kind in DERIV_CODES:
            return _run_gh(K, order, DERIV_CODES[kind], sigma.params, 0.0)
        raise ValueError(f"{kind} has no pointwise derivative")
    if kind in _PIECEWISE_KINDS:
        edges, a, b = _affine_pieces(kind, sigma.params, sigma.center_shift)
        return _run_piecewise(K, edges, a, b)
    return _run_gh(K, order, ACT_CODES[kind], sigma.params, sigma.center_shift)


def _run_gh(K, order, code, params, shift):
    x, w = np.polynomial.hermite.hermgauss(order)
    nodes = np.ascontiguousarray(math.sqrt(2.0) * x)
    weights = np.ascontiguousarray(w / math.sqrt(math.pi))
    params = np.ascontiguousarray(np.asarray(params, dtype=float))
    if params.size == 0:
        params = np.zeros(1)
    return _pairwise_gauss_hermite(K, nodes, weights, int(code), params, float(shift))


def _run_piecewise(K, edges, a, b):
    glx, glw = np.polynomial.legendre.leggauss(_GL_ORDER)
    return _pairwise_piecewise(
        K,
        np.ascontiguousarray(edges, dtype=float),
        np.ascontiguousarray(a, dtype=float),
        np.ascontiguousarray(b, dtype=float),
        np.ascontiguousarray(glx),
        np.ascontiguousarray(glw),
    )
