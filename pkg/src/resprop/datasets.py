"""Node-classification datasets stored as plain text directories.

Directory layout::

    edges.tsv      i<TAB>j[<TAB>w] per line, 0-based, undirected
    labels.csv     one integer per line (line number = node id), -1 = unknown
    features.csv   optional, n lines of comma-separated floats
    split.json     {"train": [...], "val": [...], "test": [...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .graph_core import DataSplit, GraphError, SparseGraph, build_graph


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NodeDataset:
    graph: SparseGraph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: DataSplit
    # multi-column binary targets (n x c); when set, labels are unused for Y
    targets: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.graph.n

    def target_matrix(self, index: np.ndarray) -> np.ndarray:
        if self.targets is not None:
            return np.asarray(self.targets[index], dtype=np.float64)
        return one_hot(self.labels, self.num_classes, index)

    def validate(self) -> None:
        n = self.graph.n
        if self.labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {self.labels.shape[0]}")
        if self.features.shape[0] != n:
            raise DatasetError(f"feature rows ({self.features.shape[0]}) != node count ({n})")
        if self.labels.size and (self.labels.min() < -1 or self.labels.max() >= self.num_classes):
            raise DatasetError("label outside {-1, 0..c-1}")
        try:
            self.split.validate(n)
        except GraphError as exc:
            raise DatasetError(str(exc)) from exc
        if self.targets is None:
            known = np.concatenate([self.split.train_idx, self.split.val_idx])
            if np.any(self.labels[known] < 0):
                raise DatasetError("train/val nodes must have known labels")


def one_hot(labels, c: int, index_subset=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    sel = labels if index_subset is None else labels[np.asarray(index_subset, dtype=np.int64)]
    if np.any(sel < 0):
        raise DatasetError("cannot one-hot encode unknown (-1) labels")
    if np.any(sel >= c):
        raise DatasetError(f"label >= num_classes ({c})")
    out = np.zeros((sel.shape[0], c))
    out[np.arange(sel.shape[0]), sel] = 1.0
    return out


def _read_labels(path: Path) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: expected an integer, got {line!r}") from None
    return np.asarray(labels, dtype=np.int64)


def _read_edges(path: Path, n: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            try:
                if len(parts) not in (2, 3):
                    raise ValueError
                i, j = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: malformed edge line {line!r}") from None
            if not (0 <= i < n and 0 <= j < n):
                raise DatasetError(f"{path.name}:{lineno}: node id out of range for n={n}")
            rows.append((i, j, w))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def _read_features(path: Path, n: int) -> np.ndarray:
    feats = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: malformed feature row") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetError(f"{path.name}:{lineno}: expected {width} columns, got {len(row)}")
            feats.append(row)
    if len(feats) != n:
        raise DatasetError(f"{path.name} has {len(feats)} rows but labels.csv has {n}")
    return np.asarray(feats, dtype=np.float64)


def load_dataset(dir_path, row_normalize: bool = False) -> NodeDataset:
    d = Path(dir_path)
    for name in ("edges.tsv", "labels.csv", "split.json"):
        if not (d / name).is_file():
            raise DatasetError(f"missing {name} in {d}")
    labels = _read_labels(d / "labels.csv")
    n = labels.shape[0]
    if n == 0:
        raise DatasetError("labels.csv is empty")
    edges = _read_edges(d / "edges.tsv", n)
    graph = build_graph(edges, n, symmetrize=True)
    if (d / "features.csv").is_file():
        features = _read_features(d / "features.csv", n)
    else:
        features = np.zeros((n, 0))
    if row_normalize and features.shape[1]:
        s = features.sum(axis=1, keepdims=True)
        s[s == 0] = 1.0
        features = features / s
    try:
        raw = json.loads((d / "split.json").read_text())
        split = DataSplit(raw["train"], raw.get("val", []), raw.get("test", []))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"split.json is malformed: {exc}") from None
    c = int(labels.max()) + 1 if labels.max() >= 0 else 0
    ds = NodeDataset(graph=graph, features=features, labels=labels, num_classes=c, split=split)
    ds.validate()
    return ds


def save_dataset(ds: NodeDataset, dir_path) -> Path:
    """Write ``ds`` in the directory format; floats use repr for exact round-trips."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w") as fh:
        for i, j, w in ds.graph.edges():
            if w == 1.0:
                fh.write(f"{i}\t{j}\n")
            else:
                fh.write(f"{i}\t{j}\t{w!r}\n")
    (d / "labels.csv").write_text("".join(f"{int(y)}\n" for y in ds.labels))
    if ds.features.shape[1]:
        with open(d / "features.csv", "w") as fh:
            for row in ds.features:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
    split = {
        "train": ds.split.train_idx.tolist(),
        "val": ds.split.val_idx.tolist(),
        "test": ds.split.test_idx.tolist(),
    }
    (d / "split.json").write_text(json.dumps(split))
    return d
