"""Finite-width GNNs used to check the analytic kernels by brute force.

Gradients are derived by hand, layer by layer; finite differences exist only
as a cross-check for them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

MEMORY_LIMIT_BYTES = 2 * 1024**3


class OracleMemoryError(MemoryError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"gradient descent diverged at step {step}")
        self.step = step


@dataclass(frozen=True)
class FiniteGnnConfig:
    layers: int = 2
    width: int = 512
    trainable: Optional[Sequence[bool]] = None
    seed: int = 0
    c_sigma: float = 2.0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.width < 1:
            raise ValueError("width must be positive")
        if self.trainable is not None and len(self.trainable) != self.layers:
            raise ValueError(f"trainable mask has {len(self.trainable)} entries for {self.layers} layers")

    @property
    def mask(self) -> List[bool]:
        return [True] * self.layers if self.trainable is None else list(self.trainable)

    def shapes(self, d: int):
        dims = [d] + [self.width] * (self.layers - 1) + [1]
        return [(dims[i], dims[i + 1]) for i in range(self.layers)]


def init_weights(cfg: FiniteGnnConfig, d: int, seed: Optional[int] = None):
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return [rng.standard_normal(shape) for shape in cfg.shapes(d)]


def _check(cfg, weights, Xbar, A):
    shapes = cfg.shapes(Xbar.shape[1])
    if len(weights) != len(shapes) or any(w.shape != s for w, s in zip(weights, shapes)):
        raise ValueError(f"weight shapes {[w.shape for w in weights]} do not match {shapes}")
    if A.shape != (Xbar.shape[0], Xbar.shape[0]):
        raise ValueError("adjacency does not match feature rows")


def _forward_cache(cfg, weights, Xbar, A):
    scale = np.sqrt(cfg.c_sigma / cfg.width)
    G = Xbar
    aggregated, pre = [], []
    for ell, W in enumerate(weights):
        AG = A @ G
        H = AG @ W
        aggregated.append(AG)
        pre.append(H)
        if ell < len(weights) - 1:
            G = scale * np.maximum(H, 0.0)
    return aggregated, pre, scale


def finite_gnn_forward(cfg: FiniteGnnConfig, weights, Xbar, A) -> np.ndarray:
    Xbar = np.asarray(Xbar, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    _check(cfg, weights, Xbar, A)
    _, pre, _ = _forward_cache(cfg, weights, Xbar, A)
    return pre[-1]


def _backward(cfg, weights, A, aggregated, pre, scale, cot):
    """Pull a batch of output cotangents ``cot`` (B, n, 1) back to every weight.

    Returns per-layer gradients of shape (B, *W.shape).
    """
    grads = [None] * len(weights)
    D = cot
    for ell in range(len(weights) - 1, -1, -1):
        grads[ell] = np.einsum("na,bnm->bam", aggregated[ell], D, optimize=True)
        if ell == 0:
            break
        dG = np.einsum("an,bam->bnm", A, D @ weights[ell].T, optimize=True)
        D = dG * (scale * (pre[ell - 1] > 0.0))
    return grads


def jacobian(cfg: FiniteGnnConfig, weights, Xbar, A) -> List[np.ndarray]:
    """Per-layer Jacobians of the n outputs, each of shape (n, *W.shape)."""
    Xbar = np.asarray(Xbar, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    _check(cfg, weights, Xbar, A)
    n = Xbar.shape[0]
    biggest = max(n * n * max(w.shape[1] for w in weights), n * sum(w.size for w in weights))
    if 8 * biggest > MEMORY_LIMIT_BYTES:
        raise OracleMemoryError(f"Jacobian for n={n}, width={cfg.width} exceeds the memory limit")
    aggregated, pre, scale = _forward_cache(cfg, weights, Xbar, A)
    cot = np.eye(n)[:, :, None]
    return _backward(cfg, weights, A, aggregated, pre, scale, cot)


def loss_gradient(cfg: FiniteGnnConfig, weights, Xbar, A, train_idx, Y):
    """Gradient of 0.5 * ||f[train] - Y||^2 with respect to every weight."""
    aggregated, pre, scale = _forward_cache(cfg, weights, Xbar, A)
    out = pre[-1]
    cot = np.zeros_like(out)
    cot[train_idx] = out[train_idx] - np.asarray(Y).reshape(-1, 1)
    grads = _backward(cfg, weights, A, aggregated, pre, scale, cot[None])
    return [g[0] for g in grads]


def empirical_ntk_single(cfg: FiniteGnnConfig, weights, Xbar, A) -> np.ndarray:
    J = jacobian(cfg, weights, Xbar, A)
    n = Xbar.shape[0]
    theta = np.zeros((n, n))
    for trainable, Jl in zip(cfg.mask, J):
        if trainable:
            flat = Jl.reshape(n, -1)
            theta += flat @ flat.T
    return 0.5 * (theta + theta.T)


def empirical_ntk(cfg: FiniteGnnConfig, Xbar, A, num_seeds: int = 1) -> np.ndarray:
    """Mean over ``num_seeds`` weight draws of the Jacobian Gram matrix at initialization."""
    Xbar = np.asarray(Xbar, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    total = np.zeros((Xbar.shape[0], Xbar.shape[0]))
    for k in range(num_seeds):
        weights = init_weights(cfg, Xbar.shape[1], seed=cfg.seed + k)
        total += empirical_ntk_single(cfg, weights, Xbar, A)
    return total / num_seeds


def finite_difference_jacobian(cfg: FiniteGnnConfig, weights, Xbar, A, step: float = 1e-4):
    """Central-difference Jacobians, same layout as :func:`jacobian`. Test use only."""
    out = []
    for ell, W in enumerate(weights):
        J = np.zeros((Xbar.shape[0],) + W.shape)
        for idx in np.ndindex(W.shape):
            plus = [w.copy() for w in weights]
            minus = [w.copy() for w in weights]
            plus[ell][idx] += step
            minus[ell][idx] -= step
            diff = finite_gnn_forward(cfg, plus, Xbar, A) - finite_gnn_forward(cfg, minus, Xbar, A)
            J[(slice(None),) + idx] = diff[:, 0] / (2.0 * step)
        out.append(J)
    return out


@dataclass
class LinearGdTrajectory:
    R: list  # training residuals per step, t = 0..steps
    R_prime: list  # residuals on the remaining nodes
    weights: list
    train_idx: np.ndarray
    rest_idx: np.ndarray


def train_linear_gnn_gd(A, ell: int, Y, train_idx, eta: float, steps: int, Xbar=None) -> LinearGdTrajectory:
    """Full-batch gradient descent on F = A^ell X W with squared loss, W_0 = 0.

    ``Xbar`` defaults to the identity. The residuals are read off the actual
    predictions after each weight update.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    Xbar = np.eye(n) if Xbar is None else np.asarray(Xbar, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    train = np.asarray(train_idx, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[train] = False
    rest = np.flatnonzero(mask)
    Z = np.linalg.matrix_power(A, ell) @ Xbar
    W = np.zeros((Xbar.shape[1], Y.shape[1]))
    traj = LinearGdTrajectory([], [], [], train, rest)

    def record(W):
        F = Z @ W
        traj.R.append(Y - F[train])
        traj.R_prime.append(-F[rest])
        traj.weights.append(W.copy())
        return F

    F = record(W)
    for t in range(1, steps + 1):
        dF = np.zeros_like(F)
        dF[train] = F[train] - Y
        with np.errstate(over="ignore", invalid="ignore"):
            W = W - eta * (Z.T @ dF)
        if not np.all(np.isfinite(W)):
            raise DivergenceError(t)
        F = record(W)
    return traj
