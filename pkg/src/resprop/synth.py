"""Stochastic block model datasets with a homophily dial."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import NodeDataset
from .graph_core import DataSplit, build_graph


@dataclass(frozen=True)
class SbmConfig:
    """SBM parameters. ``lam`` slides from purely intra-block edges (0) to
    purely inter-block edges (1)."""

    num_blocks: int = 5
    block_size: int = 400
    feature_dim: int = 100
    lam: float = 0.0
    intra_p: float = 0.01
    inter_p: float = 0.0025
    seed: int = 0
    feature_scale: float = 1.0
    noise_scale: float = 1.0
    train_total: int = 100
    val_total: int = 500
    test_total: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        for name in ("intra_p", "inter_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.num_blocks < 1 or self.block_size < 1:
            raise ValueError("need at least one block with one node")

    @property
    def n(self) -> int:
        return self.num_blocks * self.block_size


def edge_prob_matrix(cfg: SbmConfig) -> np.ndarray:
    b = cfg.num_blocks
    eye = np.eye(b)
    return (1.0 - cfg.lam) * cfg.intra_p * eye + cfg.lam * cfg.inter_p * (np.ones((b, b)) - eye)


def _per_class(total: int, b: int) -> np.ndarray:
    counts = np.full(b, total // b)
    counts[: total % b] += 1
    return counts


def sbm_generate(cfg: SbmConfig) -> NodeDataset:
    n, b, s = cfg.n, cfg.num_blocks, cfg.block_size
    if cfg.train_total + cfg.val_total + cfg.test_total > n:
        raise ValueError(
            f"split sizes {cfg.train_total}+{cfg.val_total}+{cfg.test_total} exceed n={n}"
        )
    rng = np.random.default_rng(cfg.seed)
    labels = np.repeat(np.arange(b), s)
    P = edge_prob_matrix(cfg)

    rows, cols = np.triu_indices(n, k=1)
    probs = P[labels[rows], labels[cols]]
    keep = rng.random(rows.shape[0]) < probs
    edges = np.stack([rows[keep], cols[keep]], axis=1)
    graph = build_graph(edges, n, symmetrize=True)

    means = cfg.feature_scale * rng.standard_normal((b, cfg.feature_dim))
    features = means[labels] + cfg.noise_scale * rng.standard_normal((n, cfg.feature_dim))

    tr, va, te = (_per_class(t, b) for t in (cfg.train_total, cfg.val_total, cfg.test_total))
    if np.any(tr + va + te > s):
        raise ValueError("per-class split sizes exceed block size")
    train, val, test = [], [], []
    for k in range(b):
        members = rng.permutation(np.flatnonzero(labels == k))
        train.append(members[: tr[k]])
        val.append(members[tr[k] : tr[k] + va[k]])
        test.append(members[tr[k] + va[k] : tr[k] + va[k] + te[k]])
    split = DataSplit(
        np.sort(np.concatenate(train)), np.sort(np.concatenate(val)), np.sort(np.concatenate(test))
    )
    ds = NodeDataset(graph=graph, features=features, labels=labels, num_classes=b, split=split)
    ds.validate()
    return ds
