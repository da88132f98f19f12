"""Convert public benchmark downloads into the plain directory format.

    python -m resprop.convert planetoid <raw_dir> <name> <out_dir>
    python -m resprop.convert ogb <dataset_dir> <out_dir>

``planetoid`` reads the ``ind.<name>.{x,y,allx,ally,tx,ty,graph,test.index}``
files of the Planetoid release and writes the public split (first |y| nodes
train, next 500 validation, the listed test nodes test). ``ogb`` reads an
extracted OGB node-property dataset (``raw/*.csv.gz`` plus ``split/<kind>/``).
"""
from __future__ import annotations

import argparse
import gzip
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PLANETOID_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _write_features(path: Path, X) -> None:
    X = X.toarray() if sp.issparse(X) else np.asarray(X)
    with open(path, "w") as fh:
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_labels(path: Path, labels) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


def _write_split(path: Path, train, val, test) -> None:
    split = {k: [int(i) for i in v] for k, v in (("train", train), ("val", val), ("test", test))}
    path.write_text(json.dumps(split))


def _unpickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert_planetoid(raw_dir, name: str, out_dir) -> dict:
    raw_dir, out = Path(raw_dir), Path(out_dir)
    parts = {p: _unpickle(raw_dir / f"ind.{name}.{p}") for p in PLANETOID_PARTS}
    test_index = np.loadtxt(raw_dir / f"ind.{name}.test.index", dtype=np.int64, ndmin=1)
    test_range = np.sort(test_index)

    tx, ty = sp.csr_matrix(parts["tx"]), np.asarray(parts["ty"])
    span = test_range.max() - test_range.min() + 1
    if span != len(test_range):
        # some test ids are isolated nodes absent from tx (citeseer); pad them with zero rows
        tx_full = sp.lil_matrix((span, tx.shape[1]))
        tx_full[test_range - test_range.min(), :] = tx
        ty_full = np.zeros((span, ty.shape[1]))
        ty_full[test_range - test_range.min(), :] = ty
        tx, ty = tx_full.tocsr(), ty_full

    features = sp.vstack([sp.csr_matrix(parts["allx"]), tx]).tolil()
    onehot = np.vstack([np.asarray(parts["ally"]), ty])
    features[test_index, :] = features[test_range, :]
    onehot[test_index, :] = onehot[test_range, :]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)
    n = features.shape[0]

    out.mkdir(parents=True, exist_ok=True)
    seen = set()
    with open(out / "edges.tsv", "w") as fh:
        for i, nbrs in sorted(parts["graph"].items()):
            for j in nbrs:
                a, b = min(i, j), max(i, j)
                if a != b and (a, b) not in seen and b < n:
                    seen.add((a, b))
                    fh.write(f"{a}\t{b}\n")
    n_train = np.asarray(parts["y"]).shape[0]
    val_end = min(n_train + 500, np.asarray(parts["ally"]).shape[0])
    _write_labels(out / "labels.csv", labels)
    _write_features(out / "features.csv", features)
    _write_split(out / "split.json", range(n_train), range(n_train, val_end), test_range)
    return {"n": n, "edges": len(seen), "features": features.shape[1], "train": n_train, "test": len(test_range)}


def _read_csv_gz(path: Path, dtype) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        return np.loadtxt(fh, delimiter=",", dtype=dtype, ndmin=2)


def _find(base: Path, stem: str) -> Path:
    for cand in (base / f"{stem}.csv.gz", base / f"{stem}.csv"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"missing {stem}.csv(.gz) in {base}")


def convert_ogb(dataset_dir, out_dir) -> dict:
    root, out = Path(dataset_dir), Path(out_dir)
    raw = root / "raw"
    edges = _read_csv_gz(_find(raw, "edge"), np.int64)
    labels = _read_csv_gz(_find(raw, "node-label"), np.float64)
    feat_path = None
    try:
        feat_path = _find(raw, "node-feat")
    except FileNotFoundError:
        pass
    split_dirs = sorted(p for p in (root / "split").iterdir() if p.is_dir())
    if not split_dirs:
        raise FileNotFoundError(f"no split directory under {root / 'split'}")
    sdir = split_dirs[0]
    idx = {k: _read_csv_gz(_find(sdir, k), np.int64).ravel() for k in ("train", "valid", "test")}

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as fh:
        for i, j in edges:
            if i != j:
                fh.write(f"{i}\t{j}\n")
    lab = labels[:, 0]
    _write_labels(out / "labels.csv", np.where(np.isnan(lab), -1, lab).astype(np.int64))
    if feat_path is not None:
        _write_features(out / "features.csv", _read_csv_gz(feat_path, np.float64))
    _write_split(out / "split.json", idx["train"], idx["valid"], idx["test"])
    return {"n": len(lab), "edges": len(edges), "split": sdir.name}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m resprop.convert", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="source", required=True)
    p = sub.add_parser("planetoid")
    p.add_argument("raw_dir")
    p.add_argument("name", help="cora, citeseer or pubmed")
    p.add_argument("out_dir")
    p = sub.add_parser("ogb")
    p.add_argument("dataset_dir")
    p.add_argument("out_dir")
    args = parser.parse_args(argv)
    if args.source == "planetoid":
        info = convert_planetoid(args.raw_dir, args.name, args.out_dir)
    else:
        info = convert_ogb(args.dataset_dir, args.out_dir)
    print(json.dumps(info))
    return 0


if __name__ == "__main__":
    sys.exit(main())
