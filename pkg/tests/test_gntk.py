import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_edges
from resprop.gntk import (
    GntkError,
    _arccos_weights,
    deep_decoupled_gntk,
    fit_decoupled_c,
    gntk_compute,
    gntk_stack,
    linear_gnn_gntk,
    read_theta,
    relu_expectations,
    spectral_features,
    two_layer_gntk,
    write_theta,
)
from resprop.graph_core import build_graph, densify_power, normalize_adjacency

FIRST_LAYER = dict(c_sigma=1.0, trainable=(True, False))


def norm_adj(rng, n, p=0.2):
    return normalize_adjacency(build_graph(random_edges(rng, n, p), n))


class TestReluExpectations:
    def test_parallel(self):
        T, Td, deg = relu_expectations(1.0, 1.0, 1.0)
        assert T == pytest.approx(0.5) and Td == pytest.approx(0.5) and not deg

    def test_orthogonal(self):
        T, Td, _ = relu_expectations(1.0, 0.0, 1.0)
        assert T == pytest.approx(1 / (2 * np.pi)) and Td == pytest.approx(0.25)

    def test_opposite(self):
        T, Td, _ = relu_expectations(4.0, -2.0, 1.0)
        assert Td == pytest.approx(0.0, abs=1e-12) and T == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_flagged(self):
        T, Td, deg = relu_expectations(np.array([0.0, 1.0]), np.array([0.0, 0.5]), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(deg, [True, False])
        assert T[0] == 0.0 and Td[0] == 0.5

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(0)
        C = np.array([[2.0, 0.7], [0.7, 0.5]])
        z = rng.multivariate_normal([0, 0], C, size=400_000)
        T, Td, _ = relu_expectations(C[0, 0], C[0, 1], C[1, 1])
        assert T == pytest.approx(np.mean(np.maximum(z[:, 0], 0) * np.maximum(z[:, 1], 0)), abs=5e-3)
        assert Td == pytest.approx(np.mean((z[:, 0] > 0) & (z[:, 1] > 0)), abs=3e-3)


class TestRecurrence:
    def test_one_layer_onehot_is_square(self, rng):
        g = norm_adj(rng, 20)
        np.testing.assert_allclose(gntk_compute(np.eye(20), g.to_dense(), 1), densify_power(g, 2), atol=1e-12)

    def test_two_layer_matches_closed_form(self, rng):
        for n in (5, 17, 40):
            A = norm_adj(rng, n).to_dense()
            np.testing.assert_allclose(gntk_compute(np.eye(n), A, 2, **FIRST_LAYER), two_layer_gntk(A), atol=1e-8)

    def test_spectral_inputs_match_closed_form(self, rng):
        A = densify_power(norm_adj(rng, 15), 2)
        B = spectral_features(A)
        np.testing.assert_allclose(B @ B.T, A, atol=1e-12)
        np.testing.assert_allclose(gntk_compute(B, A, 2, **FIRST_LAYER), two_layer_gntk(A, "spectral"), atol=1e-8)

    def test_identity_graph_first_layer_only_is_diagonal(self):
        theta = gntk_compute(np.eye(5), np.eye(5), 2, **FIRST_LAYER)
        np.testing.assert_allclose(theta, 0.5 * np.eye(5), atol=1e-15)
        theta2 = gntk_compute(np.eye(5), np.eye(5), 2, c_sigma=2.0, trainable=(True, False))
        np.testing.assert_allclose(theta2, np.eye(5), atol=1e-15)

    def test_identity_graph_all_layers_adds_constant(self):
        # with the readout trainable, orthogonal inputs still share E[relu(a) relu(b)] = 1/(2 pi)
        theta = gntk_compute(np.eye(3), np.eye(3), 2, c_sigma=1.0)
        off = theta[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, 1 / (2 * np.pi))
        np.testing.assert_allclose(np.diag(theta), 1.0)

    def test_stack_shapes(self, rng):
        A = norm_adj(rng, 10).to_dense()
        st_ = gntk_stack(rng.standard_normal((10, 3)), A, 3)
        assert len(st_.Theta) == 3 and len(st_.SigmaDot) == 2
        assert np.all(np.diag(st_.Sigma[-1]) >= 0)

    def test_homogeneity(self, rng):
        A = norm_adj(rng, 12).to_dense()
        X = rng.standard_normal((12, 4))
        np.testing.assert_allclose(gntk_compute(3.0 * X, A, 1), 9.0 * gntk_compute(X, A, 1), rtol=1e-12)

    def test_degenerate_rows_warn(self):
        A = np.diag([1.0, 1.0, 0.0])
        with pytest.warns(RuntimeWarning):
            st_ = gntk_stack(np.eye(3), A, 2)
        assert st_.degenerate[2].all() and not st_.degenerate[0, 1]

    def test_errors(self, rng):
        with pytest.raises(GntkError):
            gntk_compute(np.eye(2), np.array([[1.0, 0.2], [0.0, 1.0]]), 2)
        with pytest.raises(GntkError):
            gntk_compute(np.eye(3), np.eye(2), 1)
        with pytest.raises(GntkError):
            gntk_compute(np.eye(2), np.eye(2), 0)
        with pytest.raises(GntkError):
            gntk_compute(np.eye(2), np.eye(2), 2, trainable=(True,))

    @given(st.integers(0, 2**31), st.integers(2, 100), st.integers(1, 3))
    @settings(max_examples=20, deadline=None)
    def test_symmetric_psd(self, seed, n, L):
        rng = np.random.default_rng(seed)
        A = densify_power(norm_adj(rng, n, 3.0 / n), 2)
        for theta in (gntk_compute(np.eye(n), A, L), two_layer_gntk(A), linear_gnn_gntk(A, L),
                      deep_decoupled_gntk(A, L, 0.5)):
            assert np.abs(theta - theta.T).max() <= 1e-8
            assert np.linalg.eigvalsh(theta).min() >= -1e-6 * max(1.0, np.abs(theta).max())


class TestClosedForms:
    def test_two_layer_identity(self):
        np.testing.assert_allclose(two_layer_gntk(np.eye(4)), 0.5 * np.eye(4))

    def test_orthogonal_rows_weight(self):
        S = _arccos_weights(np.eye(3))
        np.testing.assert_allclose(S[~np.eye(3, dtype=bool)], 0.25)
        np.testing.assert_allclose(np.diag(S), 0.5)

    def test_two_layer_hand_formula(self, rng):
        A = norm_adj(rng, 8, 0.4).to_dense()
        nrm = np.linalg.norm(A, axis=1)
        S = (np.pi - np.arccos(np.clip(A @ A.T / np.outer(nrm, nrm), -1, 1))) / (2 * np.pi)
        np.testing.assert_allclose(two_layer_gntk(A), A @ ((A @ A) * S) @ A, atol=1e-8)

    def test_spectral_requires_psd(self, rng):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(GntkError):
            two_layer_gntk(A, "spectral")
        with pytest.raises(GntkError):
            linear_gnn_gntk(A, 1, "spectral")

    def test_unknown_mode(self):
        with pytest.raises(GntkError):
            two_layer_gntk(np.eye(2), "raw")

    def test_decoupled(self, rng):
        g = norm_adj(rng, 10)
        A = g.to_dense()
        np.testing.assert_allclose(deep_decoupled_gntk(A, 1, 0.0), A @ A, atol=1e-14)
        np.testing.assert_array_equal(deep_decoupled_gntk(np.eye(2), 1, 1.0), [[2, 1], [1, 2]])
        np.testing.assert_allclose(deep_decoupled_gntk(A, 2, 0.0), densify_power(g, 4), atol=1e-14)
        with pytest.raises(GntkError):
            deep_decoupled_gntk(A, 1, -1.0)

    def test_linear(self, rng):
        g = norm_adj(rng, 10)
        A = g.to_dense()
        np.testing.assert_allclose(linear_gnn_gntk(A, 1), A @ A, atol=1e-14)
        P = densify_power(g, 2)
        np.testing.assert_allclose(linear_gnn_gntk(P, 1, "spectral"), P @ P @ P, atol=1e-14)
        np.testing.assert_array_equal(linear_gnn_gntk(A, 0), np.eye(10))

    def test_fit_decoupled_c(self, rng):
        A = norm_adj(rng, 15).to_dense()
        scale, c = fit_decoupled_c(A, 2, 3.0 * deep_decoupled_gntk(A, 2, 0.4))
        assert scale == pytest.approx(3.0) and c == pytest.approx(0.4)


class TestThetaDump:
    def test_round_trip(self, tmp_path, rng):
        theta = rng.standard_normal((7, 7))
        write_theta(tmp_path / "t.bin", theta)
        raw = (tmp_path / "t.bin").read_bytes()
        assert len(raw) == 8 + 8 * 49
        assert int.from_bytes(raw[:8], "little") == 7
        np.testing.assert_array_equal(read_theta(tmp_path / "t.bin"), theta)

    def test_bad_files(self, tmp_path):
        (tmp_path / "short").write_bytes(b"\x01")
        with pytest.raises(GntkError):
            read_theta(tmp_path / "short")
        (tmp_path / "wrong").write_bytes((3).to_bytes(8, "little") + b"\0" * 16)
        with pytest.raises(GntkError):
            read_theta(tmp_path / "wrong")
        with pytest.raises(GntkError):
            write_theta(tmp_path / "x", np.zeros((2, 3)))
