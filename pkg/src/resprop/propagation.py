"""Residual propagation, its kernel variant, label propagation and fixed points."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla

from .graph_core import (
    DENSE_LIMIT,
    DataSplit,
    GraphError,
    SparseGraph,
    densify_power,
    max_eigenvalue,
    normalize_adjacency,
    power_iteration,
    propagate,
)

ETA_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
AUTO_ETA_FRACTION = 0.9
PD_TOL = 1e-10


@dataclass
class ResidualState:
    R: np.ndarray
    R_prime: np.ndarray
    train_idx: np.ndarray
    rest_idx: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, Y: np.ndarray, split: DataSplit, n: int) -> "ResidualState":
        Y = np.asarray(Y, dtype=np.float64)
        train = split.train_idx
        if Y.shape[0] != train.shape[0]:
            raise ValueError(f"Y has {Y.shape[0]} rows for {train.shape[0]} training nodes")
        rest = split.rest_idx(n)
        return cls(Y.copy(), np.zeros((rest.shape[0], Y.shape[1])), train, rest, 0)

    @property
    def n(self) -> int:
        return self.train_idx.shape[0] + self.rest_idx.shape[0]

    def padded(self) -> np.ndarray:
        """[R_t, 0] laid out over all n nodes."""
        out = np.zeros((self.n, self.R.shape[1]))
        out[self.train_idx] = self.R
        return out

    def scores(self) -> np.ndarray:
        """Predictions for every node: Y - R on train rows, -R' elsewhere."""
        out = np.empty((self.n, self.R.shape[1]))
        out[self.rest_idx] = -self.R_prime
        return out

    def predictions(self, Y: np.ndarray) -> np.ndarray:
        out = self.scores()
        out[self.train_idx] = Y - self.R
        return out


@dataclass
class RpConfig:
    eta: Union[float, str, None] = "auto"
    K: int = 2
    max_steps: int = 100
    patience: Optional[int] = 20
    kernel: Optional[np.ndarray] = None
    metric: str = "auto"

    def __post_init__(self):
        if isinstance(self.eta, (int, float)) and self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.K < 0:
            raise ValueError("K must be non-negative")


@dataclass
class RunReport:
    eta: float
    K: int
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    test_metric: list = field(default_factory=list)
    step_time: list = field(default_factory=list)
    best_step: int = 0
    steps_run: int = 0
    metric: str = "accuracy"

    @property
    def best_val(self) -> float:
        return self.val_metric[self.best_step]

    @property
    def best_test(self) -> float:
        return self.test_metric[self.best_step]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_val"] = self.best_val
        d["best_test"] = self.best_test
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_curves(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_loss", "val_metric", "test_metric"])
            for t, row in enumerate(zip(self.train_loss, self.val_metric, self.test_metric)):
                w.writerow([t, *row])


def _check_normalized(g: SparseGraph) -> None:
    if not g.normalized:
        raise GraphError("residual propagation expects a normalized graph")


def rp_step(state: ResidualState, g_norm: SparseGraph, cfg: RpConfig) -> ResidualState:
    """One residual propagation update: [R, R'] <- [R, R'] - eta A^K [R, 0]."""
    _check_normalized(g_norm)
    if state.n != g_norm.n:
        raise ValueError(f"state covers {state.n} nodes, graph has {g_norm.n}")
    moved = propagate(g_norm, state.padded(), cfg.K)
    return _apply(state, moved, float(cfg.eta))


def generalized_rp_step(state: ResidualState, g_norm: SparseGraph, cfg: RpConfig) -> ResidualState:
    """Kernel variant: the update direction is A^K Kmat A^K [R, 0]."""
    _check_normalized(g_norm)
    Kmat = cfg.kernel
    if Kmat is None:
        raise ValueError("generalized RP needs cfg.kernel")
    if Kmat.shape != (g_norm.n, g_norm.n):
        raise ValueError(f"kernel is {Kmat.shape}, graph has {g_norm.n} nodes")
    moved = propagate(g_norm, state.padded(), cfg.K)
    moved = propagate(g_norm, Kmat @ moved, cfg.K)
    return _apply(state, moved, float(cfg.eta))


def similarity_step(state: ResidualState, S: np.ndarray, eta: float) -> ResidualState:
    """The same update with an explicit dense similarity matrix ``S``."""
    return _apply(state, S @ state.padded(), eta)


def _apply(state: ResidualState, moved: np.ndarray, eta: float) -> ResidualState:
    return ResidualState(
        state.R - eta * moved[state.train_idx],
        state.R_prime - eta * moved[state.rest_idx],
        state.train_idx,
        state.rest_idx,
        state.t + 1,
    )


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    if labels.size == 0:
        return float("nan")
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def mean_roc_auc(scores: np.ndarray, targets: np.ndarray) -> float:
    from sklearn.metrics import roc_auc_score

    vals = []
    for j in range(targets.shape[1]):
        col = targets[:, j]
        if col.min() != col.max():
            vals.append(roc_auc_score(col, scores[:, j]))
    return float(np.mean(vals)) if vals else float("nan")


def _metric_fn(dataset, metric: str):
    if metric == "auto":
        metric = "rocauc" if dataset.targets is not None else "accuracy"
    if metric == "accuracy":
        return metric, lambda s, idx: accuracy(s[idx], dataset.labels[idx])
    if metric == "rocauc":
        return metric, lambda s, idx: mean_roc_auc(s[idx], dataset.target_matrix(idx))
    raise ValueError(f"unknown metric {metric!r}")


def max_step_size(
    g_norm: SparseGraph,
    K: int,
    split,
    kernel: Optional[np.ndarray] = None,
    dense_limit: int = DENSE_LIMIT,
) -> float:
    """Convergence threshold 2 / sigma_max of the training block of the propagation matrix."""
    _check_normalized(g_norm)
    train = np.asarray(getattr(split, "train_idx", split), dtype=np.int64)
    if kernel is None and g_norm.n <= dense_limit:
        S = densify_power(g_norm, K, dense_limit)
        sigma = max_eigenvalue(S[np.ix_(train, train)])
    else:
        n = g_norm.n

        def matvec(x):
            full = np.zeros((n, 1))
            full[train, 0] = x
            out = propagate(g_norm, full, K)
            if kernel is not None:
                out = propagate(g_norm, kernel @ out, K)
            return out[train, 0]

        sigma = power_iteration(matvec, train.shape[0])
    # a dominant negative eigenvalue diverges for every eta; its magnitude still bounds the rest
    if sigma == 0:
        raise GraphError("training block of the propagation matrix is zero")
    return 2.0 / abs(sigma)


def resolve_eta(cfg: RpConfig, g_norm: SparseGraph, split) -> float:
    if cfg.eta == "auto" or cfg.eta is None:
        return AUTO_ETA_FRACTION * max_step_size(g_norm, cfg.K, split, kernel=cfg.kernel)
    return float(cfg.eta)


def rp_run(dataset, cfg: RpConfig, g_norm: Optional[SparseGraph] = None):
    """Run (generalized) RP with early stopping on the validation metric.

    Returns ``(report, scores)`` where ``scores`` are the n x c predictions at
    the best validation step. ``cfg.eta`` may be a number, ``"auto"``
    (0.9 x the convergence threshold) or ``"grid"`` (best of ``ETA_GRID`` on
    validation).
    """
    split = dataset.split
    if g_norm is None:
        g_norm = normalize_adjacency(dataset.graph)
    if cfg.patience is not None and split.val_idx.size == 0:
        raise ValueError("early stopping requested but the validation set is empty")
    if cfg.eta == "grid":
        best = None
        for eta in ETA_GRID:
            out = rp_run(dataset, replace(cfg, eta=eta), g_norm)
            if best is None or out[0].best_val > best[0].best_val:
                best = out
        return best

    eta = resolve_eta(cfg, g_norm, split)
    metric, score = _metric_fn(dataset, cfg.metric)
    Y = dataset.target_matrix(split.train_idx)
    state = ResidualState.initial(Y, split, dataset.n)
    step = generalized_rp_step if cfg.kernel is not None else rp_step
    run_cfg = replace(cfg, eta=eta)
    report = RunReport(eta=eta, K=cfg.K, metric=metric)

    def record(st, dt):
        s = st.predictions(Y)
        report.train_loss.append(float(np.sum(st.R**2) / st.R.shape[0]))
        report.val_metric.append(score(s, split.val_idx))
        report.test_metric.append(score(s, split.test_idx))
        report.step_time.append(dt)
        return s

    best_scores = record(state, 0.0)
    best_val = -np.inf
    since_best = 0
    # without a validation set the last step is reported
    no_val = split.val_idx.size == 0
    for _ in range(cfg.max_steps):
        t0 = time.perf_counter()
        state = step(state, g_norm, run_cfg)
        s = record(state, time.perf_counter() - t0)
        v = report.val_metric[-1]
        if no_val or v > best_val:
            best_val, report.best_step, best_scores, since_best = v, state.t, s, 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    report.steps_run = state.t
    return report, best_scores


def lp_run(dataset, alpha: float, k: Optional[int] = None, g_norm: Optional[SparseGraph] = None,
           dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Label propagation F <- alpha A F + (1 - alpha) [Y, 0], started at [Y, 0].

    With ``k=None`` the converged solution (1 - alpha)(I - alpha A)^{-1}[Y, 0]
    is returned instead (requires alpha < 1 and a dense-sized graph).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if g_norm is None:
        g_norm = normalize_adjacency(dataset.graph)
    _check_normalized(g_norm)
    split = dataset.split
    Y = dataset.target_matrix(split.train_idx)
    base = np.zeros((dataset.n, Y.shape[1]))
    base[split.train_idx] = Y
    if k is None:
        if alpha >= 1.0:
            raise ValueError("the converged solve needs alpha < 1 (I - A is singular)")
        if dataset.n > dense_limit:
            raise GraphError(f"n={dataset.n} exceeds the dense limit {dense_limit}")
        M = np.eye(dataset.n) - alpha * g_norm.to_dense()
        return (1.0 - alpha) * np.linalg.solve(M, base)
    F = base.copy()
    for _ in range(k):
        F = alpha * propagate(g_norm, F, 1) + (1.0 - alpha) * base
    return F


@dataclass
class FixedPoint:
    F: np.ndarray  # training predictions Y - R_inf
    F_prime: np.ndarray  # predictions for rest_idx
    rest_idx: np.ndarray
    regime: str
    train_converges: bool
    test_converges: bool
    counterpart: str


# rows of the convergence table: (block PD?, block PSD?, full PSD?) -> outcome
def _classify(block_eigs: np.ndarray, full_eigs: Optional[np.ndarray], tol: float):
    scale = max(1.0, float(np.abs(block_eigs).max(initial=0.0)))
    block_pd = block_eigs.min() > tol
    block_psd = block_eigs.min() >= -tol * scale
    full_psd = full_eigs is None or full_eigs.min() >= -tol * max(1.0, float(np.abs(full_eigs).max()))
    if block_pd:
        if full_psd:
            return "PD/PSD", True, True, "kernel regression"
        return "PD/not PSD", True, True, "unique"
    if block_psd:
        if full_psd:
            return "PSD/PSD", True, True, "linear regression"
        return "PSD/not PSD", True, False, "unique"
    return "not PSD/not PSD", False, False, "unique"


def fixed_point(S: np.ndarray, train_idx, Y: np.ndarray, tol: float = PD_TOL) -> FixedPoint:
    """Limit of the residual iteration with similarity matrix ``S``.

    For a positive definite training block this is
    F' = S_{X'X} S_XX^{-1} Y and F = Y. For a singular PSD block the
    pseudo-inverse gives the projection fixed point. In the remaining regimes
    the same expression is returned as a fixed-point candidate and the
    ``*_converges`` flags are False.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    train = np.asarray(train_idx, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[train] = False
    rest = np.flatnonzero(mask)
    Y = np.asarray(Y, dtype=np.float64)
    Sxx = S[np.ix_(train, train)]
    Srx = S[np.ix_(rest, train)]
    w, V = np.linalg.eigh(Sxx)
    full_w = np.linalg.eigvalsh(S)
    regime, tr_ok, te_ok, counterpart = _classify(w, full_w, tol)
    if w.min() > tol:
        c, low = sla.cho_factor(Sxx, lower=True)
        F = Y.copy()
        F_prime = Srx @ sla.cho_solve((c, low), Y)
    else:
        cutoff = tol * max(1.0, float(np.abs(w).max()))
        inv = np.where(np.abs(w) > cutoff, 1.0 / np.where(w == 0, 1.0, w), 0.0)
        pinv = (V * inv) @ V.T
        F = Sxx @ (pinv @ Y)
        F_prime = Srx @ (pinv @ Y)
    return FixedPoint(F, F_prime, rest, regime, tr_ok, te_ok, counterpart)


def converged_rp_solution(g_norm: SparseGraph, K: int, dataset, dense_limit: int = DENSE_LIMIT) -> FixedPoint:
    _check_normalized(g_norm)
    S = densify_power(g_norm, K, dense_limit)
    return fixed_point(S, dataset.split.train_idx, dataset.target_matrix(dataset.split.train_idx))


@dataclass
class GridResult:
    K: int
    sigma: Optional[float]
    report: RunReport
    scores: np.ndarray
    table: list  # (K, sigma, best_val, best_test) for every grid point


def grp_grid_search(dataset, Ks, sigmas, kernel_kind: str = "gaussian", eta="auto",
                    max_steps: int = 100, patience: Optional[int] = 20,
                    g_norm: Optional[SparseGraph] = None) -> GridResult:
    """Generalized RP over a (K, sigma) grid, selected on validation.

    ``sigmas`` are absolute bandwidths; ``None`` entries use the median heuristic.
    """
    from .kernels import KernelSpec, kernel_matrix

    if g_norm is None:
        g_norm = normalize_adjacency(dataset.graph)
    best, table = None, []
    for sigma in sigmas:
        Kmat = kernel_matrix(KernelSpec(kernel_kind, sigma=sigma), dataset.features)
        for K in Ks:
            cfg = RpConfig(eta=eta, K=K, max_steps=max_steps, patience=patience, kernel=Kmat)
            report, scores = rp_run(dataset, cfg, g_norm)
            table.append((K, sigma, report.best_val, report.best_test))
            if best is None or report.best_val > best.report.best_val:
                best = GridResult(K, sigma, report, scores, table)
    best.table = table
    return best
