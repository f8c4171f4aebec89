import json

import numpy as np
import pytest

from ntkc import compare, load_matrix_csv
from ntkc.cli import dispatch


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture()
def linear_net_file(tmp_path):
    return write_json(
        tmp_path / "net.json",
        {
            "input_dim": 64,
            "widths": [32],
            "activations": [{"kind": "linear", "center_shift": 0.0}],
            "weight_dist": {"kind": "gaussian", "epsilon": 0.0},
        },
    )


@pytest.fixture()
def experiment_config(tmp_path):
    return write_json(
        tmp_path / "exp.json",
        {
            "dataset": {"gmm": {"preset": "spiked_two_class", "p": 64, "n": 96, "seed": 7}},
            "network": {
                "input_dim": 64,
                "widths": [128, 64],
                "activations": [{"kind": "relu"}, {"kind": "relu"}],
                "weight_dist": {"kind": "gaussian"},
            },
            "run": {"seed": 1, "replicates": 10, "quad_order": 63,
                    "output_dir": str(tmp_path / "out")},
        },
    )


class TestCoeffs:
    def test_linear_table(self, tmp_path, linear_net_file, capsys):
        rc = dispatch(
            ["coeffs", "--net", linear_net_file, "--tau0", "1.0", "--layers", "3",
             "--out-dir", str(tmp_path / "c")]
        )
        assert rc == 0
        lines = (tmp_path / "c" / "coeffs.csv").read_text().splitlines()
        header = lines[0].split(",")
        row3 = dict(zip(header, lines[4].split(",")))
        assert float(row3["a1"]) == 1.0
        assert float(row3["a2"]) == 0.0
        assert float(row3["a3"]) == 0.0
        assert float(row3["tau"]) == 1.0
        assert (tmp_path / "c" / "coeffs.manifest.json").exists()

    def test_layers_needs_uniform_activation(self, tmp_path):
        net = write_json(
            tmp_path / "mixed.json",
            {
                "input_dim": 4,
                "widths": [4, 4],
                "activations": [{"kind": "relu"}, {"kind": "abs"}],
            },
        )
        rc = dispatch(["coeffs", "--net", net, "--tau0", "1.0", "--layers", "3",
                       "--out-dir", str(tmp_path)])
        assert rc == 2


class TestKernelsAndCompare:
    def test_pipeline_matches_library(self, tmp_path, experiment_config):
        out = str(tmp_path / "out")
        assert dispatch(["kernels", "--config", experiment_config, "--method", "mc",
                         "--out-dir", out]) == 0
        assert dispatch(["kernels", "--config", experiment_config,
                         "--method", "equivalent", "--out-dir", out]) == 0
        a = tmp_path / "out" / "kernel_mc_layer2.csv"
        b = tmp_path / "out" / "kernel_equivalent_layer2.csv"
        report_path = tmp_path / "out" / "rep.json"
        assert dispatch(["compare", "--a", str(a), "--b", str(b), "--topk", "2",
                         "--out", str(report_path)]) == 0
        payload = json.loads(report_path.read_text())
        lib = compare(load_matrix_csv(a), load_matrix_csv(b), k=2)
        assert payload["norm_diff"] == pytest.approx(lib.norm_diff, rel=1e-9)
        assert payload["alignments"] == pytest.approx(lib.alignments.tolist())

    def test_binary_output(self, tmp_path, experiment_config):
        out = str(tmp_path / "outb")
        assert dispatch(["kernels", "--config", experiment_config, "--method", "mc",
                         "--binary", "--out-dir", out]) == 0
        from ntkc import load_kernel_bin

        km = load_kernel_bin(tmp_path / "outb" / "kernel_mc_layer2.bin")
        assert km.matrix.shape == (96, 96)


class TestCompressCommand:
    def test_feasible_compression(self, tmp_path):
        cfg = write_json(
            tmp_path / "c.json",
            {
                "dataset": {"gmm": {"preset": "spiked_two_class", "p": 64, "n": 96,
                                     "seed": 3}},
                "network": {
                    "input_dim": 64,
                    "widths": [32],
                    "activations": [{"kind": "sigma_T", "a": 1.6, "s1": -0.5,
                                     "s2": 1.0}],
                },
                "run": {"seed": 0, "epsilon": 0.9, "restarts": 120, "normalize": True,
                        "output_dir": str(tmp_path / "cout")},
            },
        )
        assert dispatch(["compress", "--config", cfg]) == 0
        dnn2 = json.loads((tmp_path / "cout" / "dnn2.json").read_text())
        assert dnn2["weight_dist"] == {"kind": "ternary", "epsilon": 0.9}
        report = json.loads((tmp_path / "cout" / "compress_report.json").read_text())
        assert report["postcondition_ok"] is True

    def test_infeasible_exits_3(self, tmp_path):
        cfg = write_json(
            tmp_path / "c.json",
            {
                "dataset": {"gmm": {"preset": "spiked_two_class", "p": 64, "n": 96,
                                     "seed": 3}},
                "network": {
                    "input_dim": 64,
                    "widths": [32],
                    "activations": [{"kind": "linear"}],
                },
                "run": {"seed": 0, "epsilon": 0.5, "restarts": 10, "normalize": True,
                        "output_dir": str(tmp_path / "cout2")},
            },
        )
        assert dispatch(["compress", "--config", cfg]) == 3


class TestEvalCommand:
    def test_metrics_and_determinism_modulo_timestamp(self, tmp_path, experiment_config):
        out1 = tmp_path / "m1.json"
        out2 = tmp_path / "m2.json"
        assert dispatch(["eval", "--config", experiment_config, "--out", str(out1)]) == 0
        assert dispatch(["eval", "--config", experiment_config, "--out", str(out2)]) == 0
        a = json.loads(out1.read_text())
        b = json.loads(out2.read_text())
        a.pop("timestamp")
        b.pop("timestamp")
        assert a == b
        assert 0.0 <= a["accuracy"]["test"] <= 1.0
        assert a["memory_bits"] > 0
        assert "tracked_total_compression_ratio" in a


class TestGenGmm:
    def test_writes_csv_and_sidecar(self, tmp_path):
        out = tmp_path / "data" / "g.csv"
        rc = dispatch(["gen-gmm", "--p", "32", "--n", "64", "--seed", "5",
                       "--out", str(out)])
        assert rc == 0
        from ntkc import load_csv

        ds = load_csv(out)
        assert ds.p == 32 and ds.n == 64


class TestUsageErrors:
    def test_two_dataset_sources(self, tmp_path):
        cfg = write_json(
            tmp_path / "bad.json",
            {
                "dataset": {"gmm": {"preset": "spiked_two_class", "p": 8, "n": 8,
                                     "seed": 0},
                            "csv": {"path": "x.csv"}},
                "network": {"input_dim": 8, "widths": [4],
                            "activations": [{"kind": "relu"}]},
            },
        )
        assert dispatch(["kernels", "--config", cfg, "--method", "mc"]) == 2

    def test_unknown_flag(self, capsys):
        assert dispatch(["coeffs", "--flagged"]) == 2

    def test_missing_file(self):
        assert dispatch(["compare", "--a", "nope.csv", "--b", "nada.csv"]) == 2


class TestSelftest:
    def test_passes(self, capsys):
        assert dispatch(["selftest"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") >= 6 and "FAIL" not in out
