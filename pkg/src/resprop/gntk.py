"""Exact node-level graph neural tangent kernels for infinitely wide ReLU GNNs.

The finite network these kernels describe (see :mod:`resprop.oracle`) is::

    G_0 = X
    G_l = sqrt(c_sigma / m) * relu(A G_{l-1} W_l)      l = 1 .. L-1
    f   = A G_{L-1} W_L

with unit Gaussian weights. ``trainable`` selects which ``W_l`` enter the
tangent kernel.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PSD_TOL = 1e-8


class GntkError(ValueError):
    pass


def relu_expectations(lam11, lam12, lam22):
    """Arc-cosine expectations for (a, b) ~ N(0, [[lam11, lam12], [lam12, lam22]]).

    Returns ``(T, Tdot, degenerate)`` with T = E[relu(a) relu(b)] and
    Tdot = E[1{a>0} 1{b>0}]. Where a variance is zero T is 0, Tdot is set to
    1/2 by convention and ``degenerate`` flags the entry so callers can drop it.
    """
    lam11 = np.asarray(lam11, dtype=np.float64)
    lam12 = np.asarray(lam12, dtype=np.float64)
    lam22 = np.asarray(lam22, dtype=np.float64)
    prod = lam11 * lam22
    degenerate = prod <= 0.0
    norm = np.sqrt(np.where(degenerate, 1.0, prod))
    cos = np.clip(lam12 / norm, -1.0, 1.0)
    theta = np.arccos(cos)
    T = norm * (np.sin(theta) + (np.pi - theta) * cos) / (2.0 * np.pi)
    Tdot = (np.pi - theta) / (2.0 * np.pi)
    T = np.where(degenerate, 0.0, T)
    Tdot = np.where(degenerate, 0.5, Tdot)
    return T, Tdot, degenerate


@dataclass
class GntkStack:
    Sigma: list = field(default_factory=list)
    SigmaBar: list = field(default_factory=list)
    SigmaDot: list = field(default_factory=list)
    Theta: list = field(default_factory=list)
    ThetaBar: list = field(default_factory=list)
    degenerate: Optional[np.ndarray] = None

    @property
    def kernel(self) -> np.ndarray:
        return self.Theta[-1]


def _check_symmetric(A: np.ndarray, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GntkError(f"{name} must be square")
    if not np.allclose(A, A.T, atol=1e-10, rtol=0):
        raise GntkError(f"{name} must be symmetric")
    return A


def _sym(M):
    return 0.5 * (M + M.T)


def gntk_stack(
    Xbar: np.ndarray,
    A: np.ndarray,
    L: int,
    c_sigma: float = 2.0,
    trainable: Optional[Sequence[bool]] = None,
) -> GntkStack:
    """Run the propagation/transformation recurrence for an L-layer GNN."""
    if L < 1:
        raise GntkError("need at least one layer")
    A = _check_symmetric(A)
    Xbar = np.asarray(Xbar, dtype=np.float64)
    if Xbar.shape[0] != A.shape[0]:
        raise GntkError("feature rows do not match adjacency size")
    mask = [True] * L if trainable is None else list(trainable)
    if len(mask) != L:
        raise GntkError(f"trainable mask has {len(mask)} entries for {L} layers")

    st = GntkStack()
    sigma_bar = _sym(Xbar @ Xbar.T)
    theta_bar = sigma_bar.copy() if mask[0] else np.zeros_like(sigma_bar)
    degenerate = np.zeros(sigma_bar.shape, dtype=bool)
    for layer in range(1, L + 1):
        st.SigmaBar.append(sigma_bar)
        st.ThetaBar.append(theta_bar)
        sigma = _sym(A @ sigma_bar @ A)
        theta = _sym(A @ theta_bar @ A)
        st.Sigma.append(sigma)
        st.Theta.append(theta)
        if layer == L:
            break
        diag = np.diag(sigma)
        T, Tdot, deg = relu_expectations(diag[:, None], sigma, diag[None, :])
        degenerate |= deg
        sigma_bar = c_sigma * T
        sigma_dot = c_sigma * Tdot
        st.SigmaDot.append(sigma_dot)
        theta_bar = theta * sigma_dot + (sigma_bar if mask[layer] else 0.0)
    st.degenerate = degenerate
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} kernel entries involve zero-variance nodes", RuntimeWarning)
    return st


def gntk_compute(Xbar, A, L, c_sigma: float = 2.0, trainable=None) -> np.ndarray:
    return gntk_stack(Xbar, A, L, c_sigma=c_sigma, trainable=trainable).kernel


def spectral_features(A: np.ndarray) -> np.ndarray:
    """Embedding B with B B^T = A for a PSD adjacency."""
    A = _check_symmetric(A)
    w, V = np.linalg.eigh(A)
    if w.min() < -PSD_TOL:
        raise GntkError(f"spectral inputs need a PSD adjacency (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def _arccos_weights(rows: np.ndarray) -> np.ndarray:
    """(pi - angle between rows i and j) / (2 pi); zero rows get weight 0."""
    norms = np.linalg.norm(rows, axis=1)
    zero = norms == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} nodes have zero aggregated features", RuntimeWarning)
    unit = rows / np.where(zero, 1.0, norms)[:, None]
    S = (np.pi - np.arccos(np.clip(unit @ unit.T, -1.0, 1.0))) / (2.0 * np.pi)
    S[zero, :] = 0.0
    S[:, zero] = 0.0
    return S


def two_layer_gntk(A: np.ndarray, input_mode: str = "onehot", Xbar: Optional[np.ndarray] = None) -> np.ndarray:
    """Closed form A (M * S) A for a two-layer GNN trained in its first layer only.

    ``M`` is the Gram matrix of the aggregated inputs A X: A^2 for one-hot
    inputs, A^3 for spectral embeddings of a PSD ``A``. ``S`` weights each pair
    by the probability that a random ReLU unit fires on both, i.e. by the
    angle between the aggregated rows.
    """
    A = _check_symmetric(A)
    if Xbar is not None:
        rows = A @ np.asarray(Xbar, dtype=np.float64)
        M = rows @ rows.T
    elif input_mode == "onehot":
        rows = A
        M = A @ A
    elif input_mode == "spectral":
        rows = A @ spectral_features(A)
        M = A @ A @ A
    else:
        raise GntkError(f"unknown input mode {input_mode!r}")
    return _sym(A @ (_sym(M) * _arccos_weights(rows)) @ A)


def deep_decoupled_gntk(A: np.ndarray, ell: int, c: float) -> np.ndarray:
    if c < 0:
        raise GntkError("c must be non-negative")
    if ell < 1:
        raise GntkError("ell must be at least 1")
    A = _check_symmetric(A)
    P = np.linalg.matrix_power(A, ell)
    s = P.sum(axis=1)
    return _sym(P @ P + c * np.outer(s, s))


def linear_gnn_gntk(A: np.ndarray, ell: int, input_mode: str = "onehot") -> np.ndarray:
    A = _check_symmetric(A)
    if ell < 0:
        raise GntkError("ell must be non-negative")
    if input_mode == "onehot":
        return _sym(np.linalg.matrix_power(A, 2 * ell))
    if input_mode == "spectral":
        spectral_features(A)
        return _sym(np.linalg.matrix_power(A, 2 * ell + 1))
    raise GntkError(f"unknown input mode {input_mode!r}")


def fit_decoupled_c(A: np.ndarray, ell: int, theta: np.ndarray):
    """Least-squares fit of theta ~ scale * A^l (I + c 11^T) A^l; returns (scale, c)."""
    A = _check_symmetric(A)
    P = np.linalg.matrix_power(A, ell)
    s = P.sum(axis=1)
    basis = np.stack([(P @ P).ravel(), np.outer(s, s).ravel()], axis=1)
    (a, b), *_ = np.linalg.lstsq(basis, np.asarray(theta).ravel(), rcond=None)
    if a <= 0:
        raise GntkError("fitted scale is not positive")
    return float(a), float(max(b / a, 0.0))


def write_theta(path, theta: np.ndarray) -> None:
    """Binary dump: little-endian uint64 n, then n*n row-major float64."""
    theta = np.ascontiguousarray(theta, dtype="<f8")
    n = theta.shape[0]
    if theta.shape != (n, n):
        raise GntkError("theta must be square")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", n))
        fh.write(theta.tobytes(order="C"))


def read_theta(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise GntkError("theta file is truncated")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * n * n:
        raise GntkError(f"theta file size does not match header n={n}")
    return np.frombuffer(raw, dtype="<f8", offset=8).reshape(n, n).copy()
