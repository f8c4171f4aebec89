import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntkc import NumericError, compare, operator_norm_diff, sym_eig


def random_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    return (a + a.T) / 2.0


class TestSymEig:
    def test_identity(self):
        w, q = sym_eig(np.eye(3))
        np.testing.assert_allclose(w, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(q @ q.T, np.eye(3), atol=1e-12)

    def test_two_by_two_characteristic_polynomial(self):
        w, q = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(w, [3.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(np.abs(q[:, 0]), [1.0, 1.0] / np.sqrt(2), atol=1e-12)
        np.testing.assert_allclose(np.abs(q[:, 1]), [1.0, 1.0] / np.sqrt(2), atol=1e-12)

    def test_reconstruction_residual(self):
        m = random_symmetric(50, 0)
        w, q = sym_eig(m)
        resid = np.abs(m @ q - q * w).max()
        assert resid <= 1e-9 * np.abs(w).max()
        assert np.abs(q.T @ q - np.eye(50)).max() <= 1e-9

    def test_descending_and_sign_canonical(self):
        m = random_symmetric(20, 1)
        w, q = sym_eig(m)
        assert np.all(np.diff(w) <= 1e-12)
        picks = np.abs(q).argmax(axis=0)
        assert np.all(q[picks, np.arange(20)] > 0)

    def test_trace_preservation(self):
        m = random_symmetric(40, 2)
        w, _ = sym_eig(m)
        assert abs(w.sum() - np.trace(m)) <= 1e-8 * 40 * np.abs(m).max()

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            sym_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_nonfinite_rejected(self):
        m = np.eye(3)
        m[0, 0] = np.inf
        with pytest.raises(NumericError):
            sym_eig(m)

    def test_size_cap(self):
        with pytest.raises(ValueError):
            sym_eig(np.eye(4097))


class TestOperatorNormDiff:
    def test_identical_matrices(self):
        m = random_symmetric(10, 3)
        assert operator_norm_diff(m, m) == 0.0

    def test_rank_one_difference(self):
        rng = np.random.default_rng(4)
        u = rng.standard_normal(30)
        u *= 2.0 / np.linalg.norm(u)  # ||u|| = 2 -> norm of uu' is 4
        base = random_symmetric(30, 5)
        assert operator_norm_diff(base + np.outer(u, u), base) == pytest.approx(
            4.0, rel=1e-8
        )

    def test_matches_dense_norm(self):
        a = random_symmetric(60, 6)
        b = random_symmetric(60, 7)
        dense = np.abs(np.linalg.eigvalsh(a - b)).max()
        assert operator_norm_diff(a, b) == pytest.approx(dense, rel=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            operator_norm_diff(np.eye(3), np.eye(4))


class TestCompare:
    def test_equal_matrices(self):
        m = random_symmetric(25, 8)
        rep = compare(m, m, k=4)
        assert rep.rel_norm_diff == 0.0
        np.testing.assert_allclose(rep.alignments, 1.0, atol=1e-10)

    def test_identity_shift(self):
        # Weyl is exact for identity shifts: eigenvalues move by eps,
        # eigenvectors do not move at all
        m = random_symmetric(25, 9)
        rep = compare(m + 1e-6 * np.eye(25), m, k=5)
        np.testing.assert_allclose(rep.eigs_a - rep.eigs_b, 1e-6, atol=1e-12)
        np.testing.assert_allclose(rep.alignments, 1.0, atol=1e-9)

    def test_weyl_bound_holds(self):
        a = random_symmetric(40, 10)
        b = a + 0.05 * random_symmetric(40, 11)
        rep = compare(a, b, k=3)
        assert np.abs(rep.eigs_a - rep.eigs_b).max() <= rep.norm_diff + 1e-8
        assert rep.weyl_margin <= 1e-8

    @settings(max_examples=15, deadline=None)
    @given(st.integers(5, 40), st.integers(0, 10_000))
    def test_weyl_property(self, n, seed):
        a = random_symmetric(n, seed)
        b = a + 0.1 * random_symmetric(n, seed + 1)
        rep = compare(a, b, k=min(3, n))
        assert rep.weyl_margin <= 1e-8

    def test_degenerate_cluster_principal_angles(self):
        # two-fold degenerate top eigenvalue: per-vector alignment is
        # ill-defined, principal angles are reported instead
        q = np.linalg.qr(np.random.default_rng(12).standard_normal((10, 10)))[0]
        w = np.array([2.0, 2.0, 1.0, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01])
        a = q @ np.diag(w) @ q.T
        # rotate inside the top 2-subspace: subspace unchanged
        theta = 0.7
        rot = np.eye(10)
        rot[:2, :2] = [[math.cos(theta), -math.sin(theta)],
                       [math.sin(theta), math.cos(theta)]]
        b = q @ rot @ np.diag(w) @ rot.T @ q.T
        rep = compare(a, b, k=2)
        np.testing.assert_allclose(rep.alignments, 1.0, atol=1e-8)

    def test_histogram_shared_bins(self):
        a = random_symmetric(30, 13)
        rep = compare(a, a + 0.01 * np.eye(30), k=2)
        h = rep.histogram
        assert len(h["counts_a"]) == len(h["counts_b"]) == len(h["edges"]) - 1
        assert sum(h["counts_a"]) >= 1

    def test_k_validation(self):
        m = random_symmetric(5, 14)
        with pytest.raises(ValueError):
            compare(m, m, k=6)

    def test_report_json(self):
        m = random_symmetric(6, 15)
        payload = compare(m, m, k=2).to_json_dict()
        assert set(payload) >= {"eigs_a", "eigs_b", "norm_diff", "rel_norm_diff",
                                "alignments", "histogram", "weyl_margin"}
