"""Sparse symmetric graphs, GCN normalization and repeated propagation."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 5000
DEFAULT_SEED = 0


class GraphError(ValueError):
    pass


class DenseLimitError(GraphError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Symmetric adjacency stored in CSR form.

    Instances are treated as immutable; ``normalize_adjacency`` returns a new
    graph rather than editing one in place.
    """

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    normalized: bool = False

    @cached_property
    def csr(self) -> sp.csr_matrix:
        m = sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=(self.n, self.n))
        m.has_sorted_indices = True
        return m

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def degrees(self) -> np.ndarray:
        return np.asarray(self.csr.sum(axis=1)).ravel()

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def edges(self):
        """Yield the stored upper-triangle entries ``(i, j, w)`` with ``i <= j``."""
        coo = self.csr.tocoo()
        keep = coo.row <= coo.col
        for i, j, w in zip(coo.row[keep], coo.col[keep], coo.data[keep]):
            yield int(i), int(j), float(w)


@dataclass(frozen=True)
class DataSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("train_idx", "val_idx", "test_idx"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).ravel())

    def validate(self, n: int) -> None:
        if self.train_idx.size == 0:
            raise GraphError("training split is empty")
        parts = [self.train_idx, self.val_idx, self.test_idx]
        allidx = np.concatenate(parts)
        if allidx.size and (allidx.min() < 0 or allidx.max() >= n):
            raise GraphError(f"split index out of range for n={n}")
        if np.unique(allidx).size != allidx.size:
            raise GraphError("train/val/test splits overlap or contain duplicates")

    def rest_idx(self, n: int) -> np.ndarray:
        """Every node outside the training set, in increasing order."""
        mask = np.ones(n, dtype=bool)
        mask[self.train_idx] = False
        return np.flatnonzero(mask)


def _from_coo(n, rows, cols, vals, normalized=False) -> SparseGraph:
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return SparseGraph(
        n=n,
        row_offsets=m.indptr.astype(np.int64),
        col_indices=m.indices.astype(np.int64),
        values=m.data.astype(np.float64),
        normalized=normalized,
    )


def build_graph(edges: Sequence, n: int, symmetrize: bool = True) -> SparseGraph:
    """Build a CSR graph from ``(i, j)`` or ``(i, j, w)`` tuples.

    Repeated entries are summed. With ``symmetrize`` every edge is stored in
    both directions; without it, the caller is responsible for passing both
    directions and the result is checked for symmetry.
    """
    if n <= 0:
        raise GraphError("graph must have at least one node")
    arr = np.asarray(edges, dtype=np.float64)
    if arr.size == 0:
        arr = np.zeros((0, 3))
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise GraphError("edges must be (i, j) or (i, j, w) tuples")
    rows = arr[:, 0].astype(np.int64)
    cols = arr[:, 1].astype(np.int64)
    if np.any(rows != arr[:, 0]) or np.any(cols != arr[:, 1]):
        raise GraphError("edge endpoints must be integers")
    w = arr[:, 2] if arr.shape[1] == 3 else np.ones(len(arr))
    bad = (rows < 0) | (rows >= n) | (cols < 0) | (cols >= n)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise GraphError(f"edge {k} ({rows[k]}, {cols[k]}) out of range for n={n}")
    if symmetrize:
        off = rows != cols
        rows, cols, w = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([w, w[off]]),
        )
    g = _from_coo(n, rows, cols, w)
    if not symmetrize and (abs(g.csr - g.csr.T) > 0).nnz:
        raise GraphError("edge list is not symmetric; pass symmetrize=True")
    return g


def normalize_adjacency(g: SparseGraph) -> SparseGraph:
    """Return D^{-1/2}(A + I)D^{-1/2} with degrees taken after adding self-loops."""
    if g.normalized:
        raise GraphError("graph is already normalized")
    a = g.csr + sp.identity(g.n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(d)
    scaled = sp.diags(inv_sqrt) @ a @ sp.diags(inv_sqrt)
    coo = scaled.tocoo()
    return _from_coo(g.n, coo.row, coo.col, coo.data, normalized=True)


def propagate(g: SparseGraph, M: np.ndarray, K: int) -> np.ndarray:
    """Apply A^K to ``M`` as K sparse products."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] != g.n:
        raise GraphError(f"matrix has {M.shape[0]} rows, graph has {g.n} nodes")
    if K < 0:
        raise GraphError("K must be non-negative")
    out = M.copy()
    a = g.csr
    for _ in range(K):
        out = a @ out
    return out


def densify_power(g: SparseGraph, K: int, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    if g.n > dense_limit:
        raise DenseLimitError(f"n={g.n} exceeds the dense limit {dense_limit}")
    if K == 0:
        return np.eye(g.n)
    a = g.to_dense()
    out = np.linalg.matrix_power(a, K)
    return 0.5 * (out + out.T)


def power_iteration(
    matvec: Callable[[np.ndarray], np.ndarray],
    n: int,
    tol: float = 1e-6,
    max_iter: int = 1000,
    seed: int = DEFAULT_SEED,
) -> float:
    """Dominant eigenvalue of a symmetric operator given only its matvec.

    The magnitude is tracked through ``||Av||`` for unit ``v`` (monotone for
    symmetric operators); the sign comes from the Rayleigh quotient.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        if abs(norm - est) <= tol * norm:
            sign = 1.0 if float(v @ w) >= 0 else -1.0
            return sign * norm
        est = norm
        v = w / norm
    raise ConvergenceError(f"power iteration did not reach rtol={tol} in {max_iter} iterations")


def max_eigenvalue(M: np.ndarray, tol: float = 1e-6, max_iter: int = 1000, seed: int = DEFAULT_SEED) -> float:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise GraphError("matrix must be square")
    if not np.allclose(M, M.T, atol=1e-8, rtol=0):
        raise GraphError("matrix is not symmetric")
    return power_iteration(lambda x: M @ x, M.shape[0], tol=tol, max_iter=max_iter, seed=seed)
