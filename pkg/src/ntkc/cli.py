"""Command-line interface.

Subcommands: coeffs, kernels, compare, compress, eval, gen-gmm, selftest.
Configuration is JSON; matrices travel as CSV (or the compact binary format);
every run writes a manifest echoing the resolved configuration.  Exit codes:
0 success, 2 usage/configuration error, 3 numeric or infeasibility error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dat
from . import evaluate as ev
from .activations import ActivationSpec, activation_moments, center, weak_moment
from .compressor import compress_network, memory_footprint
from .errors import (
    CompressionError,
    DegenerateInputError,
    FormatError,
    InfeasibleTargetsError,
    ModelError,
    NoSolutionError,
    NtkcError,
    NumericError,
)
from .kernels_empirical import (
    exact_ck,
    exact_ntk,
    forward_representations,
    load_matrix_csv,
    monte_carlo_ck,
    sample_weights,
    save_kernel_bin,
    save_matrix_csv,
)
from .kernels_theory import (
    NetworkSpec,
    assemble_equivalent_ck,
    assemble_equivalent_kprime,
    assemble_equivalent_ntk,
    center_network,
    ck_coefficients,
    coefficients_to_csv,
    coefficients_to_json_dict,
    ntk_coefficients,
)
from .spectral import compare as spectral_compare

_USAGE_ERRORS = (ModelError, FormatError, ValueError, FileNotFoundError, KeyError)
_NUMERIC_ERRORS = (
    NumericError,
    DegenerateInputError,
    InfeasibleTargetsError,
    NoSolutionError,
    CompressionError,
)


def _timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: Path, command: str, resolved: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(
        out_dir / f"{command}.manifest.json",
        {"command": command, "config": resolved, "timestamp": _timestamp()},
    )


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None):
        n = int(args.threads)
    elif os.environ.get("NTKC_THREADS", "").strip():
        n = int(os.environ["NTKC_THREADS"])
    else:
        n = os.cpu_count() or 1
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except Exception:
        pass
    return n


# ---------------------------------------------------------------------------
# experiment configuration


def load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if "dataset" not in cfg or "network" not in cfg:
        raise ValueError("config needs 'dataset' and 'network' blocks")
    sources = [k for k in ("gmm", "idx", "csv") if k in cfg["dataset"]]
    if len(sources) != 1:
        raise ValueError("config must name exactly one dataset source (gmm|idx|csv)")
    cfg.setdefault("run", {})
    return cfg


def build_dataset(cfg: dict) -> dat.Dataset:
    block = cfg["dataset"]
    if "gmm" in block:
        g = block["gmm"]
        if "preset" in g:
            if g["preset"] != "spiked_two_class":
                raise ValueError(f"unknown GMM preset {g['preset']!r}")
            model = dat.spiked_two_class_model(int(g["p"]))
        else:
            model = dat.MixtureModel.from_json_dict(g["model"])
        ds = dat.sample_gmm(model, int(g["n"]), int(g.get("seed", 0)))
    elif "idx" in block:
        i = block["idx"]
        ds = dat.load_idx(
            i["images"], i["labels"], classes=i.get("classes"), cap=i.get("cap")
        )
        if i.get("normalize", False):
            ds = dat.normalize_dataset(ds)
    else:
        c = block["csv"]
        ds = dat.load_csv(c["path"] if isinstance(c, dict) else c)
        if isinstance(c, dict) and c.get("normalize", False):
            ds = dat.normalize_dataset(ds)
    return ds


def build_stats(cfg: dict, ds: dat.Dataset) -> dat.MixtureStats:
    block = cfg["dataset"]
    if "gmm" in block:
        g = block["gmm"]
        model = (
            dat.spiked_two_class_model(int(g["p"]))
            if "preset" in g
            else dat.MixtureModel.from_json_dict(g["model"])
        )
        return dat.mixture_stats(model, ds)
    return dat.empirical_stats(ds)


def _load_net(path_or_dict) -> NetworkSpec:
    if isinstance(path_or_dict, dict):
        return NetworkSpec.from_json_dict(path_or_dict)
    with open(path_or_dict) as fh:
        return NetworkSpec.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_coeffs(args) -> int:
    net = _load_net(args.net)
    if args.layers and args.layers != net.depth:
        if len(set(net.activations)) != 1:
            raise ValueError("--layers requires a single-activation network")
        net = NetworkSpec(
            net.input_dim,
            (net.widths[0],) * args.layers,
            (net.activations[0],) * args.layers,
            net.weight_dist,
        )
    ck = ck_coefficients(net, args.tau0)
    ntk = ntk_coefficients(net, args.tau0, ck)
    csv = coefficients_to_csv(ck, ntk)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "coeffs.csv").write_text(csv)
    _write_json(out_dir / "coeffs.json", coefficients_to_json_dict(ck, ntk))
    _write_manifest(
        out_dir, "coeffs",
        {"net": net.to_json_dict(), "tau0": args.tau0, "layers": net.depth},
    )
    sys.stdout.write(csv)
    return 0


def _cmd_kernels(args) -> int:
    cfg = load_config(args.config)
    run = cfg["run"]
    ds = build_dataset(cfg)
    net = _load_net(cfg["network"])
    layer = int(args.layer if args.layer is not None else run.get("layer", net.depth))
    method = args.method
    out_dir = Path(args.out_dir or run.get("output_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    if run.get("center", False) and method in ("mc", "exact", "exact-ntk"):
        # the equivalents assume centered activations; center the forward too
        net = center_network(net, dat.estimate_tau0(ds))
    if method == "mc":
        km = monte_carlo_ck(
            net, ds.X, layer,
            int(run.get("replicates", 100)), int(run.get("seed", 0)),
        )
        matrix = km.matrix
    elif method == "exact":
        km = exact_ck(net, ds.X, layer, int(run.get("quad_order", 63)))
        matrix = km.matrix
    elif method == "exact-ntk":
        km = exact_ntk(net, ds.X, layer, int(run.get("quad_order", 63)))
        matrix = km.matrix
    else:
        stats = build_stats(cfg, ds)
        tau0 = stats.tau0 if not stats.estimated else dat.estimate_tau0(ds)
        ck = ck_coefficients(net, tau0)
        if method == "equivalent":
            matrix = assemble_equivalent_ck(ck[layer], stats, ds.X)
        elif method == "equivalent-ntk":
            ntk = ntk_coefficients(net, tau0, ck)
            matrix = assemble_equivalent_ntk(ntk[layer], stats, ds.X)
        elif method == "equivalent-kprime":
            ntk = ntk_coefficients(net, tau0, ck)
            matrix = assemble_equivalent_kprime(ntk[layer], stats, ds.X)
        else:
            raise ValueError(f"unknown method {method!r}")
        from .kernels_empirical import KernelMatrix

        kind = "ck" if method == "equivalent" else (
            "ntk" if method == "equivalent-ntk" else "kprime"
        )
        km = KernelMatrix(matrix, kind, layer, "equivalent")
    stem = f"kernel_{method}_layer{layer}"
    if args.binary:
        save_kernel_bin(km, out_dir / f"{stem}.bin")
    else:
        save_matrix_csv(matrix, out_dir / f"{stem}.csv")
    _write_manifest(out_dir, "kernels", {"config": cfg, "method": method, "layer": layer})
    print(f"wrote {stem} ({matrix.shape[0]}x{matrix.shape[0]})")
    return 0


def _cmd_compare(args) -> int:
    A = load_matrix_csv(args.a)
    B = load_matrix_csv(args.b)
    report = spectral_compare(A, B, k=args.topk)
    payload = report.to_json_dict()
    payload["timestamp"] = _timestamp()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    print(
        f"norm_diff={report.norm_diff:.6g} rel={report.rel_norm_diff:.6g} "
        f"top-{args.topk} alignments={np.round(report.alignments, 6).tolist()}"
    )
    return 0


def _cmd_compress(args) -> int:
    cfg = load_config(args.config)
    run = cfg["run"]
    ds = build_dataset(cfg)
    if run.get("normalize", False):
        ds = dat.normalize_dataset(ds)
    net = _load_net(cfg["network"])
    dnn2, report = compress_network(
        net,
        ds,
        float(run.get("epsilon", 0.9)),
        seed=int(run.get("seed", 0)),
        restarts=int(run.get("restarts", 1000)),
        check_ntk=bool(run.get("check_ntk", False)),
        best_effort=bool(run.get("best_effort", False)),
    )
    out_dir = Path(args.out_dir or run.get("output_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "dnn2.json", dnn2.to_json_dict())
    report["timestamp"] = _timestamp()
    _write_json(out_dir / "compress_report.json", report)
    _write_manifest(out_dir, "compress", cfg)
    print(
        f"compressed {net.depth}-layer net -> {out_dir / 'dnn2.json'}; "
        f"postcondition_ok={report['postcondition_ok']}"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    run = cfg["run"]
    ds = build_dataset(cfg)
    net = _load_net(cfg["network"])
    seed = int(run.get("seed", 0))
    ridge = float(run.get("ridge", 1e-3))
    train_idx, test_idx = ev.stratified_split(
        ds.labels, float(run.get("train_fraction", 0.8)), seed
    )
    draw = sample_weights(net, seed)
    feats = forward_representations(net, draw, ds.X)[-1]
    model = ev.train_readout(feats[:, train_idx], ds.labels[train_idx], ridge)
    acc_train = ev.accuracy(model, feats[:, train_idx], ds.labels[train_idx])
    acc_test = ev.accuracy(model, feats[:, test_idx], ds.labels[test_idx])
    mem = memory_footprint(net)
    dense_bits = sum(32 * r * c for r, c in net.layer_dims())
    quantized = all(a.kind in ("sigma_T", "sigma_Q") for a in net.activations)
    payload = {
        "accuracy": {"train": acc_train, "test": acc_test},
        "memory_bits": mem.bits,
        "memory_formula": mem.formula,
        "dense_weight_bits": dense_bits,
        "weight_compression_ratio": dense_bits / mem.bits,
        "inference_activation_bits_per_unit": 2 if quantized else 32,
        # tracked, never asserted: weight ratio x activation width ratio
        "tracked_total_compression_ratio": (dense_bits / mem.bits)
        * (32 / (2 if quantized else 32)),
        "epsilon": net.weight_dist.epsilon,
        "widths": list(net.widths),
        "seed": seed,
        "timestamp": _timestamp(),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    _write_manifest(out.parent, "eval", cfg)
    print(f"train acc {acc_train:.4f}  test acc {acc_test:.4f}  memory {mem.bits} bits")
    return 0


def _cmd_gen_gmm(args) -> int:
    if args.model:
        with open(args.model) as fh:
            model = dat.MixtureModel.from_json_dict(json.load(fh))
    else:
        model = dat.spiked_two_class_model(args.p)
    ds = dat.sample_gmm(model, args.n, args.seed)
    if args.normalize:
        ds = dat.normalize_dataset(ds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dat.save_csv(ds, out)
    _write_manifest(
        out.parent, "gen-gmm",
        {"p": model.p, "n": args.n, "seed": args.seed, "normalize": args.normalize},
    )
    print(f"wrote {out} ({ds.p}x{ds.n})")
    return 0


def _cmd_selftest(args) -> int:
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except Exception as exc:  # noqa: BLE001 - report, do not crash
            checks.append((name, False, f"{type(exc).__name__}: {exc}"))

    def linear_forms():
        lin = ActivationSpec("linear")
        net = NetworkSpec(8, (4,) * 5, (lin,) * 5)
        ck = ck_coefficients(net, 1.0)
        ntk = ntk_coefficients(net, 1.0, ck)
        assert all(c.tau == 1.0 and c.a1 == 1.0 for c in ck)
        assert all(ntk[i].b1 == i + 1 for i in range(6))

    def zero_patterns():
        for kind, pattern in (("cos", "a1"), ("sign", "a23"), ("erf", "a23")):
            net = NetworkSpec(8, (4, 4, 4), (ActivationSpec(kind),) * 3)
            c = ck_coefficients(net, 1.0)[3]
            if pattern == "a1":
                assert abs(c.a1) <= 1e-10
            else:
                assert abs(c.a2) <= 1e-10 and abs(c.a3) <= 1e-10

    def ibp_identity():
        sig = ActivationSpec("sigmoid")
        for tau in (0.5, 1.0, 2.0):
            lhs = weak_moment(sig, tau, 1)
            from .activations import gauss_expect

            rhs = gauss_expect(lambda t: sig.derivative(t), tau)
            assert abs(lhs - rhs) <= 1e-8

    def closed_vs_engine():
        from .activations import closed_form_moments_T

        spec = ActivationSpec("sigma_T", (1.3, -0.7, 1.1))
        m = activation_moments(center(spec, 0.9), 0.9)
        cf = closed_form_moments_T(1.3, -0.7, 1.1, 0.9)
        assert abs(m.sq - cf.sq) <= 1e-12 and abs(m.d2 - cf.d2) <= 1e-12

    def mc_determinism():
        net = NetworkSpec(8, (16,), (ActivationSpec("relu"),))
        X = np.random.default_rng(0).standard_normal((8, 6)) / 3.0
        k1 = monte_carlo_ck(net, X, 1, 3, 42).matrix
        k2 = monte_carlo_ck(net, X, 1, 3, 42).matrix
        assert np.array_equal(k1, k2)

    def weyl_bound():
        rng = np.random.default_rng(1)
        A = rng.standard_normal((30, 30))
        A = (A + A.T) / 2.0
        B = A + 1e-3 * np.eye(30)
        spectral_compare(A, B, k=3)  # raises internally if Weyl fails

    check("linear closed forms", linear_forms)
    check("coefficient zero patterns", zero_patterns)
    check("integration-by-parts identity", ibp_identity)
    check("closed-form vs engine moments", closed_vs_engine)
    check("monte carlo determinism", mc_determinism)
    check("weyl bound on compare", weyl_bound)
    ok = True
    for name, passed, msg in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({msg})" if msg else ""))
        ok &= passed
    return 0 if ok else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntkc",
        description="Asymptotic CK/NTK spectral equivalents and ternary network compression",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: NTKC_THREADS or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="coefficient tables for a network")
    p.add_argument("--net", required=True, help="NetworkSpec JSON path")
    p.add_argument("--tau0", type=float, required=True)
    p.add_argument("--layers", type=int, default=None,
                   help="replicate a single-activation net to this depth "
                   "(activations are centered per layer; table values assume that)")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=_cmd_coeffs)

    p = sub.add_parser("kernels", help="compute kernel matrices")
    p.add_argument("--config", required=True)
    p.add_argument(
        "--method", required=True,
        choices=["mc", "exact", "exact-ntk", "equivalent", "equivalent-ntk",
                 "equivalent-kprime"],
    )
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--binary", action="store_true", help="write the compact binary format")
    p.set_defaults(fn=_cmd_kernels)

    p = sub.add_parser("compare", help="spectral comparison of two kernel CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--out", default="compare_report.json")
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("compress", help="run the compression pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=_cmd_compress)

    p = sub.add_parser("eval", help="readout accuracy and memory accounting")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gen-gmm", help="sample a Gaussian mixture dataset to CSV")
    p.add_argument("--model", default=None, help="MixtureModel JSON path")
    p.add_argument("--preset", default="spiked_two_class",
                   choices=["spiked_two_class"])
    p.add_argument("--p", type=int, default=512)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_gmm)

    p = sub.add_parser("selftest", help="run the quick invariant suite")
    p.set_defaults(fn=_cmd_selftest)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _resolve_threads(args)
    try:
        return args.fn(args)
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NtkcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
