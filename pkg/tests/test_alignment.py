import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resprop.alignment import (
    AlignmentError,
    AlignmentReport,
    BoundConfig,
    alignment,
    alignment_report,
    bound_from_terms,
    center,
    generalization_bound,
    optimal_kernel,
)
from resprop.datasets import one_hot
from resprop.graph_core import normalize_adjacency
from resprop.synth import SbmConfig, sbm_generate

mats = arrays(np.float64, (5, 5), elements=st.floats(-10, 10, allow_nan=False))


class TestAlignment:
    def test_self(self, rng):
        K = rng.standard_normal((4, 4))
        assert alignment(K, K) == pytest.approx(1.0)

    def test_identity_vs_ones(self):
        assert alignment(np.eye(2), np.ones((2, 2))) == pytest.approx(1 / math.sqrt(2))
        assert alignment(np.eye(2), np.ones((2, 2))) == pytest.approx(0.70711, abs=1e-5)

    def test_negation(self, rng):
        K = rng.standard_normal((3, 3))
        assert alignment(K, -K) == pytest.approx(-1.0)

    def test_errors(self):
        with pytest.raises(AlignmentError):
            alignment(np.zeros((2, 2)), np.eye(2))
        with pytest.raises(AlignmentError):
            alignment(np.eye(2), np.eye(3))

    @given(mats, mats)
    def test_symmetric(self, K1, K2):
        assume(np.linalg.norm(K1) > 1e-3 and np.linalg.norm(K2) > 1e-3)
        assert alignment(K1, K2) == alignment(K2, K1)

    @given(mats, mats, st.floats(1e-3, 1e3))
    def test_scale_invariant(self, K1, K2, s):
        assume(np.linalg.norm(K1) > 1e-3 and np.linalg.norm(K2) > 1e-3)
        assert alignment(s * K1, K2) == pytest.approx(alignment(K1, K2), abs=1e-12)

    @given(mats, mats)
    def test_range(self, K1, K2):
        assume(np.linalg.norm(K1) > 1e-3 and np.linalg.norm(K2) > 1e-3)
        assert -1 - 1e-12 <= alignment(K1, K2) <= 1 + 1e-12
        assert alignment(np.abs(K1), np.abs(K2)) >= 0

    def test_centering(self, rng):
        K = rng.standard_normal((6, 6))
        C = center(K)
        H = np.eye(6) - np.ones((6, 6)) / 6
        np.testing.assert_allclose(C, H @ K @ H, atol=1e-12)
        # adding a constant does not change the centered alignment
        assert alignment(K + 5.0, K, centered=True) == pytest.approx(1.0)


class TestOptimalKernel:
    def test_examples(self):
        np.testing.assert_array_equal(optimal_kernel([0, 0]), np.ones((2, 2)))
        np.testing.assert_array_equal(optimal_kernel([0, 1]), np.eye(2))
        np.testing.assert_array_equal(optimal_kernel([0, 1, 0]), [[1, 0, 1], [0, 1, 0], [1, 0, 1]])

    def test_unknown_labels(self):
        with pytest.raises(AlignmentError):
            optimal_kernel([0, -1])

    def test_class_count_checked(self):
        with pytest.raises(AlignmentError):
            optimal_kernel([0, 3], c=2)

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
    def test_gram_of_one_hot(self, labels):
        Y = one_hot(labels, 5)
        T = optimal_kernel(labels)
        np.testing.assert_array_equal(T, Y @ Y.T)
        assert np.linalg.eigvalsh(T).min() >= -1e-10


class TestReport:
    def test_self_alignment_on_block_graph(self):
        ds = sbm_generate(SbmConfig(num_blocks=3, block_size=20, intra_p=0.3, feature_dim=2,
                                    train_total=3, val_total=3, test_total=3))
        A = normalize_adjacency(ds.graph).to_dense()
        rep = alignment_report(A, A, ds.labels)
        assert rep.kernel_graph == pytest.approx(1.0)
        rep2 = alignment_report(optimal_kernel(ds.labels), A, ds.labels)
        assert rep2.kernel_target == pytest.approx(1.0)
        assert rep.satisfies_triangle() and rep2.satisfies_triangle()
        assert set(rep.to_dict()) == {"kernel_graph", "kernel_target", "homophily", "centered"}

    @given(st.integers(0, 2**31), st.booleans())
    @settings(max_examples=30, deadline=None)
    def test_triangle_inequality(self, seed, centered):
        rng = np.random.default_rng(seed)
        n = 12
        B = rng.random((n, n))
        Theta = B @ B.T
        A = rng.random((n, n))
        A = A + A.T
        labels = rng.integers(0, 3, n)
        assume(len(set(labels)) > 1)
        rep = alignment_report(Theta, A, labels, centered=centered)
        assert rep.satisfies_triangle()

    def test_triangle_detects_violation(self):
        assert not AlignmentReport(1.0, 1.0, -1.0).satisfies_triangle()


class TestBound:
    def test_delta_one_removes_confidence_term(self):
        rep = generalization_bound(np.zeros((4, 4)), one_hot([0, 1, 0, 1], 2), BoundConfig(0.9, 1.0))
        assert rep.confidence_term == 0.0

    def test_edgeless_training_graph(self):
        Y = np.ones((5, 1))
        rep = generalization_bound(np.zeros((5, 5)), Y, BoundConfig(0.9, 0.05))
        assert rep.trace == pytest.approx(5.0)
        assert rep.quadratic_form == pytest.approx(5.0)
        assert rep.complexity_term == pytest.approx(1.0)
        assert rep.value == pytest.approx(1.0 + math.sqrt(math.log(20) / 5))

    def test_decomposition_matches_direct_formula(self, rng):
        n = 10
        A = rng.random((n, n)) * 0.1
        A = A + A.T
        Y = one_hot(rng.integers(0, 3, n), 3)
        cfg = BoundConfig(0.5, 0.1)
        rep = generalization_bound(A, Y, cfg)
        Theta = np.linalg.inv(np.eye(n) - cfg.alpha * A)
        # Theta^{-1} = I - alpha A, so Y^T Theta^{-1} Y = n_l - alpha <A, Y Y^T>
        quad = float(np.sum(Y * ((np.eye(n) - cfg.alpha * A) @ Y)))
        assert rep.quadratic_form == pytest.approx(quad)
        assert rep.trace == pytest.approx(np.trace(Theta))
        direct = math.sqrt(quad * np.trace(Theta)) / n + math.sqrt(math.log(10) / n)
        assert rep.value == pytest.approx(direct)

    def test_spectral_radius_checked(self):
        with pytest.raises(AlignmentError):
            generalization_bound(np.ones((3, 3)), np.ones((3, 1)), BoundConfig(0.9, 0.05))

    @pytest.mark.parametrize("kw", [{"alpha": 1.0}, {"alpha": 0.0}, {"delta": 0.0}, {"delta": 1.5}])
    def test_config_ranges(self, kw):
        with pytest.raises(ValueError):
            BoundConfig(**kw)

    @given(st.floats(0.0, 0.9), st.floats(0.0, 0.9))
    def test_strictly_decreasing_in_homophily(self, h1, h2):
        assume(abs(h1 - h2) > 1e-6)
        lo, hi = sorted((h1, h2))
        b_lo = bound_from_terms(50, 50.0, 40.0, lo, 120.0, 0.05)
        b_hi = bound_from_terms(50, 50.0, 40.0, hi, 120.0, 0.05)
        assert b_hi < b_lo

    def test_invalid_terms(self):
        with pytest.raises(AlignmentError):
            bound_from_terms(10, 10.0, 100.0, 0.5, 5.0, 0.05)

    def test_homophilic_sbm_has_smaller_bound(self):
        vals = []
        for lam in (0.0, 1.0):
            ds = sbm_generate(SbmConfig(lam=lam, seed=0, intra_p=0.2, inter_p=0.05, block_size=60,
                                        train_total=100, val_total=50, test_total=50))
            tr = ds.split.train_idx
            A = normalize_adjacency(ds.graph).to_dense()[np.ix_(tr, tr)]
            vals.append(generalization_bound(A, ds.target_matrix(tr), BoundConfig()).value)
        assert vals[0] < vals[1]
