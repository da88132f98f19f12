"""Feature kernels and exact kernel regression."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import pdist

BANDWIDTH_SUBSAMPLE = 1000
BANDWIDTH_SEED = 0


class SingularKernelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    sigma: Optional[float] = None  # None: median pairwise distance
    scale: Optional[float] = None  # sigmoid slope, None: 1/d
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian", "sigmoid"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma is not None and self.sigma <= 0:
            raise ValueError("gaussian bandwidth must be positive")


def median_bandwidth(X: np.ndarray, subsample: int = BANDWIDTH_SUBSAMPLE, seed: int = BANDWIDTH_SEED) -> float:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] > subsample:
        idx = np.random.default_rng(seed).choice(X.shape[0], subsample, replace=False)
        X = X[np.sort(idx)]
    d = pdist(X)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def _sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return 0.5 * (D + D.T)


def kernel_matrix(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("kernel needs a non-empty feature dimension")
    if spec.kind == "linear":
        K = X @ X.T
    elif spec.kind == "gaussian":
        sigma = spec.sigma if spec.sigma is not None else median_bandwidth(X)
        K = np.exp(-_sq_dists(X) / (2.0 * sigma**2))
    else:
        scale = spec.scale if spec.scale is not None else 1.0 / X.shape[1]
        K = np.tanh(scale * (X @ X.T) + spec.offset)
    return 0.5 * (K + K.T)


@dataclass
class KernelRegressionResult:
    predictions: np.ndarray  # rows for ``rest_idx`` (all non-train nodes)
    rest_idx: np.ndarray
    ridge: float
    min_eigenvalue: float


def solve_spd(Kxx: np.ndarray, rhs: np.ndarray, ridge: float = 0.0, min_eig: float = 1e-10):
    """Solve ``(Kxx + ridge I) a = rhs`` with a Cholesky factorization.

    Raises :class:`SingularKernelError` when the smallest eigenvalue of the
    (ridged) matrix is not above ``min_eig``.
    """
    M = Kxx + ridge * np.eye(Kxx.shape[0]) if ridge else Kxx
    lam_min = float(np.linalg.eigvalsh(M)[0])
    if lam_min <= min_eig:
        raise SingularKernelError(
            f"training kernel is singular or indefinite (min eigenvalue {lam_min:.3e}); supply a ridge"
        )
    c, low = sla.cho_factor(M, lower=True)
    return sla.cho_solve((c, low), rhs), lam_min


def kernel_regression(Kmat: np.ndarray, split, Y: np.ndarray, ridge: float = 0.0) -> KernelRegressionResult:
    """Interpolating kernel regression ``K_{X'X} K_XX^{-1} Y``.

    ``split`` may be a :class:`DataSplit` or an array of training indices.
    """
    Kmat = np.asarray(Kmat, dtype=np.float64)
    n = Kmat.shape[0]
    train = np.asarray(getattr(split, "train_idx", split), dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[train] = False
    rest = np.flatnonzero(mask)
    Y = np.asarray(Y, dtype=np.float64)
    alpha, lam_min = solve_spd(Kmat[np.ix_(train, train)], Y, ridge=ridge)
    return KernelRegressionResult(Kmat[np.ix_(rest, train)] @ alpha, rest, ridge, lam_min)
