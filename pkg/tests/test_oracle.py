import numpy as np
import pytest

from conftest import random_edges
from resprop.alignment import alignment
from resprop.gntk import gntk_compute, two_layer_gntk
from resprop.graph_core import build_graph, normalize_adjacency
from resprop.oracle import (
    DivergenceError,
    FiniteGnnConfig,
    OracleMemoryError,
    empirical_ntk,
    empirical_ntk_single,
    finite_difference_jacobian,
    finite_gnn_forward,
    init_weights,
    jacobian,
    loss_gradient,
    train_linear_gnn_gd,
)


def path4():
    return normalize_adjacency(build_graph([(0, 1), (1, 2), (2, 3)], 4)).to_dense()


class TestForward:
    def test_zero_weights(self, rng):
        cfg = FiniteGnnConfig(layers=3, width=5)
        W = [np.zeros(s) for s in cfg.shapes(2)]
        np.testing.assert_array_equal(finite_gnn_forward(cfg, W, rng.standard_normal((4, 2)), path4()), 0)

    def test_single_linear_layer_identity_graph(self, rng):
        cfg = FiniteGnnConfig(layers=1, width=64)
        X = rng.standard_normal((5, 3))
        W = init_weights(cfg, 3)
        np.testing.assert_allclose(finite_gnn_forward(cfg, W, X, np.eye(5)), X @ W[0])

    def test_golden_values(self):
        cfg = FiniteGnnConfig(layers=2, width=8, seed=42)
        X = np.arange(8.0).reshape(4, 2) / 4
        out = finite_gnn_forward(cfg, init_weights(cfg, 2), X, path4())
        golden = [0.4112944464875856, 0.7858624682046755, 1.233630875802995, 1.247081573200808]
        np.testing.assert_allclose(out.ravel(), golden, rtol=1e-12)

    def test_shape_errors(self):
        cfg = FiniteGnnConfig(layers=2, width=4)
        with pytest.raises(ValueError):
            finite_gnn_forward(cfg, [np.zeros((3, 4)), np.zeros((4, 1))], np.zeros((4, 2)), path4())
        with pytest.raises(ValueError):
            finite_gnn_forward(cfg, init_weights(cfg, 2), np.zeros((4, 2)), np.eye(3))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FiniteGnnConfig(layers=0)
        with pytest.raises(ValueError):
            FiniteGnnConfig(width=0)
        with pytest.raises(ValueError):
            FiniteGnnConfig(layers=2, trainable=(True,))


class TestGradients:
    @pytest.mark.parametrize("layers,width,d,n", [(1, 1, 3, 4), (2, 5, 3, 4), (3, 4, 2, 6), (2, 8, 1, 5)])
    def test_jacobian_matches_finite_differences(self, layers, width, d, n):
        rng = np.random.default_rng(layers * 10 + width)
        A = normalize_adjacency(build_graph(random_edges(rng, n, 0.5), n)).to_dense()
        X = rng.standard_normal((n, d))
        cfg = FiniteGnnConfig(layers=layers, width=width, seed=7)
        W = init_weights(cfg, d)
        for exact, approx in zip(jacobian(cfg, W, X, A), finite_difference_jacobian(cfg, W, X, A)):
            err = np.linalg.norm(exact - approx) / max(np.linalg.norm(exact), 1e-12)
            assert err < 1e-3

    def test_loss_gradient_matches_jacobian(self, rng):
        A = path4()
        X = rng.standard_normal((4, 2))
        cfg = FiniteGnnConfig(layers=2, width=6)
        W = init_weights(cfg, 2)
        train = np.array([0, 2])
        Y = np.array([1.0, -1.0])
        f = finite_gnn_forward(cfg, W, X, A)[:, 0]
        J = jacobian(cfg, W, X, A)
        resid = f[train] - Y
        for g, Jl in zip(loss_gradient(cfg, W, X, A, train, Y), J):
            np.testing.assert_allclose(g, np.tensordot(resid, Jl[train], axes=1), atol=1e-12)

    def test_memory_limit(self, monkeypatch):
        import resprop.oracle as oracle

        monkeypatch.setattr(oracle, "MEMORY_LIMIT_BYTES", 1000)
        cfg = FiniteGnnConfig(layers=2, width=64)
        with pytest.raises(OracleMemoryError):
            jacobian(cfg, init_weights(cfg, 4), np.ones((10, 4)), np.eye(10))


class TestEmpiricalNtk:
    def test_linear_model_exact(self, rng):
        A = path4()
        X = rng.standard_normal((4, 3))
        for width in (1, 100):
            cfg = FiniteGnnConfig(layers=1, width=width)
            np.testing.assert_allclose(empirical_ntk(cfg, X, A, 2), A @ X @ X.T @ A, atol=1e-12)

    def test_symmetric_psd(self, rng):
        A = path4()
        cfg = FiniteGnnConfig(layers=3, width=16)
        theta = empirical_ntk_single(cfg, init_weights(cfg, 4), np.eye(4), A)
        assert np.abs(theta - theta.T).max() <= 1e-8
        assert np.linalg.eigvalsh(theta).min() >= -1e-8

    def test_frozen_layers_excluded(self, rng):
        cfg_all = FiniteGnnConfig(layers=2, width=8)
        cfg_first = FiniteGnnConfig(layers=2, width=8, trainable=(True, False))
        W = init_weights(cfg_all, 4)
        A = path4()
        J = jacobian(cfg_all, W, np.eye(4), A)
        flat = J[0].reshape(4, -1)
        np.testing.assert_allclose(empirical_ntk_single(cfg_first, W, np.eye(4), A), flat @ flat.T, atol=1e-12)

    def test_width_sweep_approaches_analytic_kernel(self):
        rng = np.random.default_rng(3)
        n = 10
        A = normalize_adjacency(build_graph(random_edges(rng, n, 0.3), n)).to_dense()
        target = two_layer_gntk(A)
        vals = []
        for width in (16, 1024):
            cfg = FiniteGnnConfig(layers=2, width=width, trainable=(True, False), c_sigma=1.0)
            vals.append(alignment(empirical_ntk(cfg, np.eye(n), A, 5), target))
        assert vals[0] < vals[1]
        assert vals[1] > 0.99

    def test_all_layers_matches_recurrence(self):
        rng = np.random.default_rng(5)
        n = 8
        A = normalize_adjacency(build_graph(random_edges(rng, n, 0.4), n)).to_dense()
        X = rng.standard_normal((n, 3))
        cfg = FiniteGnnConfig(layers=3, width=2048, c_sigma=2.0)
        assert alignment(empirical_ntk(cfg, X, A, 3), gntk_compute(X, A, 3, c_sigma=2.0)) > 0.99


class TestLinearGd:
    def test_zero_init_and_zero_step(self, rng):
        A = path4()
        Y = np.array([[1.0], [0.0]])
        traj = train_linear_gnn_gd(A, 1, Y, [0, 3], 0.0, 5)
        np.testing.assert_array_equal(traj.R_prime[0], 0)
        for R, Rp in zip(traj.R, traj.R_prime):
            np.testing.assert_array_equal(R, Y)
            np.testing.assert_array_equal(Rp, 0)

    def test_ell_zero_rank_deficient_projection(self):
        # two training rows with identical features: only their mean can be fitted
        X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        Y = np.array([[1.0], [3.0]])
        traj = train_linear_gnn_gd(np.eye(3), 0, Y, [0, 1], 0.2, 300, Xbar=X)
        np.testing.assert_allclose(traj.R[-1], [[-1.0], [1.0]], atol=1e-10)
        np.testing.assert_allclose(traj.R_prime[-1], [[0.0]], atol=1e-12)

    def test_divergence_reported(self):
        with pytest.raises(DivergenceError) as exc:
            train_linear_gnn_gd(np.eye(3), 1, np.ones((3, 1)), [0, 1, 2], 1e155, 10)
        assert exc.value.step >= 1
