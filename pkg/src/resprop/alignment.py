"""Matrix alignment, homophily and the homophily-dependent risk bound."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .graph_core import max_eigenvalue


class AlignmentError(ValueError):
    pass


def center(K: np.ndarray) -> np.ndarray:
    """H K H with H = I - 11^T / n (centers the implicit feature map)."""
    K = np.asarray(K, dtype=np.float64)
    row = K.mean(axis=0, keepdims=True)
    col = K.mean(axis=1, keepdims=True)
    return K - row - col + K.mean()


def alignment(K1, K2, centered: bool = False) -> float:
    """Frobenius cosine <K1, K2>_F / (||K1||_F ||K2||_F)."""
    K1 = np.asarray(K1, dtype=np.float64)
    K2 = np.asarray(K2, dtype=np.float64)
    if K1.shape != K2.shape:
        raise AlignmentError(f"shape mismatch {K1.shape} vs {K2.shape}")
    if centered:
        K1, K2 = center(K1), center(K2)
    n1, n2 = np.linalg.norm(K1), np.linalg.norm(K2)
    if n1 == 0 or n2 == 0:
        raise AlignmentError("alignment is undefined for an all-zero matrix")
    return float(np.sum((K1 / n1) * (K2 / n2)))


def optimal_kernel(labels, c: int | None = None) -> np.ndarray:
    """Same-label indicator matrix Y Y^T for one-hot Y."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0):
        raise AlignmentError("optimal kernel needs every label to be known")
    if c is not None and labels.size and labels.max() >= c:
        raise AlignmentError("label exceeds the class count")
    return (labels[:, None] == labels[None, :]).astype(np.float64)


@dataclass
class AlignmentReport:
    kernel_graph: float
    kernel_target: float
    homophily: float
    centered: bool = False

    def angles(self):
        return tuple(math.acos(max(-1.0, min(1.0, v))) for v in (self.kernel_graph, self.kernel_target, self.homophily))

    def satisfies_triangle(self, tol: float = 1e-8) -> bool:
        a, b, c = self.angles()  # angles (Theta, A), (Theta, *), (A, *)
        return a <= b + c + tol and b <= a + c + tol and c <= a + b + tol

    def to_dict(self) -> dict:
        return asdict(self)


def alignment_report(Theta, A_dense, labels, centered: bool = False) -> AlignmentReport:
    target = optimal_kernel(labels)
    return AlignmentReport(
        kernel_graph=alignment(Theta, A_dense, centered),
        kernel_target=alignment(Theta, target, centered),
        homophily=alignment(A_dense, target, centered),
        centered=centered,
    )


@dataclass(frozen=True)
class BoundConfig:
    alpha: float = 0.9
    delta: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")


@dataclass
class BoundReport:
    value: float
    complexity_term: float
    confidence_term: float
    quadratic_form: float  # Y^T Theta^{-1} Y summed over label columns
    trace: float  # Tr((I - alpha A)^{-1})
    homophily: float  # A(A, Y Y^T) on the training subgraph
    c: float  # alpha ||Y Y^T||_F ||A||_F
    n_l: int

    def to_dict(self) -> dict:
        return asdict(self)


def bound_from_terms(n_l: int, label_mass: float, c: float, homophily: float, trace: float, delta: float) -> float:
    """sqrt((label_mass - c * homophily) * trace) / n_l + sqrt(log(1/delta) / n_l).

    ``label_mass`` is Tr(Y^T Y), which equals n_l for one-hot labels.
    """
    quad = label_mass - c * homophily
    if quad < 0 or trace <= 0:
        raise AlignmentError("bound terms are outside their valid range")
    return math.sqrt(quad * trace) / n_l + math.sqrt(math.log(1.0 / delta) / n_l)


def generalization_bound(A_train, Y_train, cfg: BoundConfig) -> BoundReport:
    """Exact risk-bound expression for the propagation kernel (I - alpha A)^{-1}."""
    A = np.asarray(A_train, dtype=np.float64)
    Y = np.asarray(Y_train, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n_l = A.shape[0]
    if A.shape != (n_l, n_l) or Y.shape[0] != n_l:
        raise AlignmentError("A_train must be n_l x n_l and Y_train must have n_l rows")
    if np.any(A):
        rho = abs(max_eigenvalue(A))
        if cfg.alpha * rho >= 1.0:
            raise AlignmentError(f"alpha * spectral radius = {cfg.alpha * rho:.4f} >= 1")
    eigs = np.linalg.eigvalsh(0.5 * (A + A.T))
    trace = float(np.sum(1.0 / (1.0 - cfg.alpha * eigs)))
    target = Y @ Y.T
    label_mass = float(np.sum(Y * Y))
    norm_a = float(np.linalg.norm(A))
    if norm_a == 0.0:
        homophily, c = 0.0, 0.0
    else:
        homophily = alignment(A, target)
        c = cfg.alpha * float(np.linalg.norm(target)) * norm_a
    quad = label_mass - c * homophily
    value = bound_from_terms(n_l, label_mass, c, homophily, trace, cfg.delta)
    confidence = math.sqrt(math.log(1.0 / cfg.delta) / n_l)
    return BoundReport(
        value=value,
        complexity_term=value - confidence,
        confidence_term=confidence,
        quadratic_form=quad,
        trace=trace,
        homophily=homophily,
        c=c,
        n_l=n_l,
    )
