"""Ternary-weight, quantized-activation compression with matched kernels.

Layer by layer, the source net's (a1, a2, a3) are inverted into required
scalar moments (|E[sigma']|, |E[sigma'']|, g2) for the compressed net, and a
two-level activation is fitted to them by multi-start Nelder-Mead least
squares on the closed-form moment expressions; the last layer uses the
three-level activation and additionally matches tau_L.  Weights become
ternary {0, +-(1-eps)^(-1/2)}, which keeps zero mean and unit variance for
any sparsity eps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .activations import (
    ActivationSpec,
    _moments_Q_fast,
    _moments_T_fast,
    activation_moments,
)
from .data import Dataset, estimate_tau0
from .errors import CompressionError, InfeasibleTargetsError, NoSolutionError
from .kernels_theory import (
    LayerCoefficients,
    NetworkSpec,
    WeightDist,
    ck_coefficients,
    ntk_coefficients,
)

__all__ = [
    "MatchTargets",
    "SolveResult",
    "MemoryFootprint",
    "invert_targets",
    "solve_sigma_T",
    "solve_sigma_Q",
    "compress_network",
    "memory_footprint",
]

_RESIDUAL_TOL = 1e-6
_SOLVED_TOL = 1e-14


@dataclass(frozen=True)
class MatchTargets:
    """Per-layer quantities the replacement activation must reproduce."""

    layer: int
    tau_in: float
    target_a1: float
    target_a2: float
    target_a3: float
    d1_req: float  # required |E[sigma'(tau_in xi)]|
    d2_req: float  # required |E[sigma''(tau_in xi)]|
    g2_req: float  # required E[(sigma')^2 + sigma sigma'']
    target_tau: float | None = None  # matched by the final layer only
    # source net's own tau_l: used only to break ties between exact solution
    # branches (keeps the compressed chain's scale from drifting)
    tau_out_hint: float | None = None


@dataclass(frozen=True)
class SolveResult:
    params: tuple[float, ...]
    residual: float
    restarts_used: int
    best_seed: int  # restart index that produced the winning candidate

    def to_json_dict(self):
        return {
            "params": list(self.params),
            "residual": self.residual,
            "restarts_used": self.restarts_used,
            "best_seed": self.best_seed,
        }


def invert_targets(
    dnn1_layer: LayerCoefficients,
    dnn2_prev: LayerCoefficients,
    layer: int,
    target_tau: float | None = None,
) -> MatchTargets:
    """Invert the coefficient recursions for the required scalar moments.

    Solves a1 = D1^2 a1_prev and a2 = D1^2 a2_prev + D2^2 a4_prev^2 / 4 for
    (D1, D2), demands g2 reproduce the source a4, and checks that the a3
    recursion is consistent (it must be when the previous layers match).
    """
    prev = dnn2_prev
    if prev.a1 <= 0.0:
        if dnn1_layer.a1 > 1e-12:
            raise InfeasibleTargetsError(
                f"layer {layer}: target a1 > 0 but previous a1 is 0", layer=layer
            )
        d1_sq = 0.0
    else:
        d1_sq = dnn1_layer.a1 / prev.a1
    if d1_sq < -1e-12:
        raise InfeasibleTargetsError(f"layer {layer}: negative required D1^2", layer=layer)
    if abs(prev.a4) <= 1e-12:
        raise InfeasibleTargetsError(
            f"layer {layer}: previous a4 vanished, a2/g2 cannot be inverted", layer=layer
        )
    d2_sq = 4.0 * (dnn1_layer.a2 - d1_sq * prev.a2) / prev.a4**2
    if d2_sq < -1e-12:
        raise InfeasibleTargetsError(f"layer {layer}: negative required D2^2", layer=layer)
    d2_sq = max(d2_sq, 0.0)
    g2_req = dnn1_layer.a4 / prev.a4
    predicted_a3 = d1_sq * prev.a3 + 0.5 * d2_sq * prev.a1**2
    if abs(predicted_a3 - dnn1_layer.a3) > 1e-12 + 1e-6 * abs(dnn1_layer.a3):
        raise InfeasibleTargetsError(
            f"layer {layer}: a3 recursion inconsistent with inverted (D1, D2): "
            f"{predicted_a3} vs {dnn1_layer.a3}",
            layer=layer,
        )
    return MatchTargets(
        layer=layer,
        tau_in=prev.tau,
        target_a1=dnn1_layer.a1,
        target_a2=dnn1_layer.a2,
        target_a3=dnn1_layer.a3,
        d1_req=math.sqrt(max(d1_sq, 0.0)),
        d2_req=math.sqrt(d2_sq),
        g2_req=g2_req,
        target_tau=target_tau,
        tau_out_hint=dnn1_layer.tau,
    )


def _multistart(objective, draw_x0, restarts, seed, tie_key):
    """Deterministic multi-start Nelder-Mead.

    All restarts run; candidates with residual <= 1e-14 count as exactly
    solved and are ranked by tie_key (then restart index), otherwise the
    lowest residual wins.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None  # (solved?, residual-or-0, tie, index); params alongside
    best_x = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
        x0 = draw_x0(rng)
        res = optimize.minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"maxiter": 2000, "xatol": 1e-12, "fatol": 1e-15},
        )
        f = float(res.fun)
        solved = f <= _SOLVED_TOL
        cand = (0 if solved else 1, 0.0 if solved else f, tie_key(res.x), r)
        if best is None or cand < best:
            best = cand
            best_x = tuple(float(v) for v in res.x)
    residual = float(objective(np.asarray(best_x)))
    return residual, best_x, best[3], restarts


def _sigma_t_residual(targets):
    tau = targets.tau_in
    g2_abs = abs(targets.g2_req)

    def objective(x):
        a, s1, s2 = x
        if not s1 < s2 - 1e-12 * max(1.0, abs(s1), abs(s2)):
            return 1e6 + (s1 - s2) ** 2
        _, d1, d2, g2, _ = _moments_T_fast(a, s1, s2, tau)
        # d1/d2 enter the recursions squared and a4 enters squared as well,
        # so every sign is free: match magnitudes
        return (
            (abs(d1) - targets.d1_req) ** 2
            + (abs(d2) - targets.d2_req) ** 2
            + (abs(g2) - g2_abs) ** 2
        )

    return objective


def solve_sigma_T(targets: MatchTargets, restarts: int = 1000, seed: int = 0) -> SolveResult:
    """Fit (a, s1, s2) of the two-level activation to the target moments.

    Exact solutions come in discrete branches; ties prefer the branch whose
    output variance is closest to the source layer's tau^2, then smaller |a|.
    """
    tau = targets.tau_in
    hint = targets.tau_out_hint

    def draw_x0(rng):
        a = 5.0 * (1.0 - rng.random())
        s1 = -(0.01 + 3.99 * rng.random()) * tau
        s2 = (0.01 + 3.99 * rng.random()) * tau
        return np.array([a, s1, s2])

    def tie_key(x):
        a, s1, s2 = x
        if hint is None or not s1 < s2:
            return (math.inf, abs(a))
        sq = _moments_T_fast(a, s1, s2, tau)[4]
        return (abs(sq - hint**2), abs(a))

    residual, params, best_idx, used = _multistart(
        _sigma_t_residual(targets), draw_x0, restarts, seed, tie_key
    )
    result = SolveResult(params, residual, used, best_idx)
    if result.residual > _RESIDUAL_TOL:
        raise NoSolutionError(
            f"two-level solve at layer {targets.layer} stalled at residual "
            f"{result.residual:.3g}",
            best=result,
        )
    return result


def _sigma_q_residual(targets):
    tau = targets.tau_in
    tau_out_sq = targets.target_tau**2
    g2_abs = abs(targets.g2_req)

    def objective(x):
        b1, b2, m1, m2, w = x
        r1, r2 = m1 - w / 2.0, m1 + w / 2.0
        r3, r4 = m2 - w / 2.0, m2 + w / 2.0
        if w <= 1e-12 or not (r1 < r2 <= r3 < r4):
            return 1e6 + w * w + (m1 - m2) ** 2
        _, d1, d2, g2, sq = _moments_Q_fast(b1, b2, r1, r2, r3, r4, tau)
        return (
            (abs(d1) - targets.d1_req) ** 2
            + (abs(d2) - targets.d2_req) ** 2
            + (abs(g2) - g2_abs) ** 2
            + (sq - tau_out_sq) ** 2
        )

    return objective


def solve_sigma_Q(targets: MatchTargets, restarts: int = 1000, seed: int = 0) -> SolveResult:
    """Fit the three-level activation (symmetric windows r2-r1 = r4-r3) to the
    target moments plus the output variance tau_L^2."""
    if targets.target_tau is None:
        raise ValueError("sigma_Q solve requires a target_tau")
    tau = targets.tau_in

    def draw_x0(rng):
        b1 = 5.0 * (1.0 - rng.random())
        b2 = 5.0 * (1.0 - rng.random())
        m1 = -(0.05 + 1.95 * rng.random()) * tau
        m2 = (0.05 + 1.95 * rng.random()) * tau
        w = (0.05 + 1.45 * rng.random()) * tau
        w = min(w, 0.9 * (m2 - m1))
        return np.array([b1, b2, m1, m2, w])

    residual, x, best_idx, used = _multistart(
        _sigma_q_residual(targets), draw_x0, restarts, seed,
        lambda x: (abs(x[0]) + abs(x[1]),),
    )
    b1, b2, m1, m2, w = x
    params = (b1, b2, m1 - w / 2.0, m1 + w / 2.0, m2 - w / 2.0, m2 + w / 2.0)
    result = SolveResult(params, residual, used, best_idx)
    if result.residual > _RESIDUAL_TOL:
        raise NoSolutionError(
            f"three-level solve at layer {targets.layer} stalled at residual "
            f"{result.residual:.3g}",
            best=result,
        )
    return result


def _rel_close(x, y, rtol=1e-5, atol=1e-10):
    return abs(x - y) <= atol + rtol * abs(y)


def compress_network(
    dnn1: NetworkSpec,
    dataset: Dataset,
    epsilon: float,
    seed: int = 0,
    restarts: int = 1000,
    order: int = 127,
    check_ntk: bool = False,
    best_effort: bool = False,
):
    """Full compression pipeline: ternary weights plus fitted two/three-level
    activations whose CK coefficients match the source net layer by layer.

    Returns (dnn2, report); the report carries tau0, the per-layer solve
    results and coefficient gaps, and optionally the NTK beta gaps.

    ``best_effort`` accepts a layer's least-squares-best activation when no
    exact solve exists (deep relu-like chains are provably unmatchable at the
    final layer) and downgrades postcondition violations from errors to
    report entries.
    """
    if not 0.0 <= epsilon <= 0.99:
        raise ValueError("epsilon must lie in [0, 0.99]")
    tau0 = estimate_tau0(dataset)
    ck1 = ck_coefficients(dnn1, tau0, order)
    depth = dnn1.depth
    coeffs2 = [ck1[0]]
    acts2: list[ActivationSpec] = []
    solves: list[SolveResult] = []
    best_effort_layers: list[int] = []
    for ell in range(1, depth + 1):
        final = ell == depth
        try:
            targets = invert_targets(
                ck1[ell],
                coeffs2[ell - 1],
                layer=ell,
                target_tau=ck1[depth].tau if final else None,
            )
            state = np.random.SeedSequence(entropy=seed, spawn_key=(ell,)).generate_state(2)
            layer_seed = int(state[0]) << 32 | int(state[1])
            try:
                if final:
                    res = solve_sigma_Q(targets, restarts, seed=layer_seed)
                else:
                    res = solve_sigma_T(targets, restarts, seed=layer_seed)
            except NoSolutionError as exc:
                if not best_effort or exc.best is None:
                    raise
                res = exc.best
                best_effort_layers.append(ell)
            raw = ActivationSpec("sigma_Q" if final else "sigma_T", res.params)
        except (InfeasibleTargetsError, NoSolutionError) as exc:
            raise CompressionError(
                f"compression failed at layer {ell}: {exc}", layer=ell
            ) from exc
        prev = coeffs2[ell - 1]
        m = activation_moments(raw, prev.tau, order)
        sig = ActivationSpec(raw.kind, raw.params, center_shift=m.m0)
        mc = activation_moments(sig, prev.tau, order)
        tau = math.sqrt(max(mc.sq, 0.0))
        a1 = mc.d1**2 * prev.a1
        a2 = mc.d1**2 * prev.a2 + 0.25 * mc.d2**2 * prev.a4**2
        a3 = mc.d1**2 * prev.a3 + 0.5 * mc.d2**2 * prev.a1**2
        a4 = prev.a4 * mc.g2
        a5 = prev.a5 * mc.g2 + 0.25 * prev.a4**2 * mc.g4
        coeffs2.append(
            LayerCoefficients(tau, tau**2 - tau0**2 * a1, a1, a2, a3, a4, a5)
        )
        acts2.append(sig)
        solves.append(res)
    dnn2 = NetworkSpec(
        dnn1.input_dim, dnn1.widths, tuple(acts2), WeightDist("ternary", epsilon)
    )
    ck2 = ck_coefficients(dnn2, tau0, order)
    gaps = []
    postcondition_ok = True
    for ell in range(1, depth + 1):
        for name in ("a1", "a2", "a3"):
            x, y = getattr(ck2[ell], name), getattr(ck1[ell], name)
            ok = _rel_close(x, y)
            gaps.append(
                {"layer": ell, "coefficient": name, "got": x, "target": y, "ok": ok}
            )
            if not ok:
                postcondition_ok = False
                if not best_effort:
                    raise CompressionError(
                        f"coefficient {name} mismatch at layer {ell}: {x} vs {y}",
                        layer=ell,
                    )
    if not _rel_close(ck2[depth].tau, ck1[depth].tau):
        postcondition_ok = False
        if not best_effort:
            raise CompressionError(
                f"final tau mismatch: {ck2[depth].tau} vs {ck1[depth].tau}",
                layer=depth,
            )
    report = {
        "tau0": tau0,
        "epsilon": epsilon,
        "seed": seed,
        "solves": [s.to_json_dict() for s in solves],
        "coefficient_gaps": gaps,
        "final_tau": {"got": ck2[depth].tau, "target": ck1[depth].tau},
        "postcondition_ok": postcondition_ok,
        "best_effort_layers": best_effort_layers,
    }
    if check_ntk:
        # beta matching is reported, never enforced: the compression contract
        # covers CK coefficients only
        ntk1 = ntk_coefficients(dnn1, tau0, ck1, order)
        ntk2 = ntk_coefficients(dnn2, tau0, ck2, order)
        report["ntk_beta_gaps"] = [
            {
                "layer": ell,
                "b1": (ntk2[ell].b1, ntk1[ell].b1),
                "b2": (ntk2[ell].b2, ntk1[ell].b2),
                "b3": (ntk2[ell].b3, ntk1[ell].b3),
            }
            for ell in range(1, depth + 1)
        ]
    return dnn2, report


@dataclass(frozen=True)
class MemoryFootprint:
    bits: int
    formula: str
    breakdown: list

    def to_json_dict(self):
        return {"bits": self.bits, "formula": self.formula, "breakdown": self.breakdown}


def memory_footprint(net: NetworkSpec) -> MemoryFootprint:
    """Weight and activation-parameter storage of a network, in bits.

    Dense (gaussian/bernoulli) weights cost 32 bits each; ternary weights a
    1-bit occupancy map plus one sign bit per expected nonzero; activation
    parameters 64 bits per scalar.
    """
    breakdown = []
    total = 0
    ternary = net.weight_dist.kind == "ternary"
    eps = net.weight_dist.epsilon
    for ell, (rows, cols) in enumerate(net.layer_dims(), start=1):
        size = rows * cols
        if ternary:
            wbits = size + round((1.0 - eps) * size)
        else:
            wbits = 32 * size
        sigma = net.activations[ell - 1]
        nparams = len(sigma.params) + (1 if sigma.center_shift != 0.0 else 0)
        abits = 64 * nparams
        breakdown.append(
            {"layer": ell, "weight_bits": wbits, "activation_param_bits": abits}
        )
        total += wbits + abits
    formula = (
        "ternary: d_l*d_{l-1}*(1 + (1-eps)) bits per layer"
        if ternary
        else "dense: 32 bits per weight entry"
    ) + "; plus 64 bits per activation scalar parameter"
    return MemoryFootprint(int(total), formula, breakdown)
