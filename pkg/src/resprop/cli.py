"""Command-line front end: ``resprop <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 dataset error, 4 numeric failure,
1 when ``verify`` finds a failing check.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .alignment import AlignmentError, BoundConfig, alignment_report, generalization_bound
from .datasets import DatasetError, load_dataset, save_dataset
from .gntk import (
    GntkError,
    deep_decoupled_gntk,
    gntk_compute,
    linear_gnn_gntk,
    read_theta,
    two_layer_gntk,
    write_theta,
)
from .graph_core import ConvergenceError, DenseLimitError, GraphError, densify_power, normalize_adjacency
from .kernels import KernelSpec, SingularKernelError, kernel_matrix, kernel_regression, median_bandwidth
from .propagation import RpConfig, accuracy, grp_grid_search, lp_run, rp_run
from .synth import SbmConfig, sbm_generate

log = logging.getLogger("resprop")

COMMANDS = ("rp", "grp", "lp", "kernel-reg", "gntk", "align", "bound", "sbm", "verify")


class UsageError(Exception):
    pass


def _int_list(text):
    return [int(x) for x in str(text).split(",")]


def _float_list(text):
    return [float(x) for x in str(text).split(",")]


def _eta(text):
    if text in ("auto", "grid"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("eta must be a number, 'auto' or 'grid'") from None


def _add_data(p):
    p.add_argument("--data", help="dataset directory (edges.tsv, labels.csv, split.json, features.csv)")
    p.add_argument("--lambda", dest="lam", type=float, help="generate an SBM with this homophily dial instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--row-normalize", action="store_true", help="row-normalize features on load")


def _add_out(p):
    p.add_argument("--out", default="runs/latest", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resprop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rp", help="basic residual propagation")
    _add_data(p), _add_out(p)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--eta", type=_eta, default="auto")
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--patience", type=int, default=20)

    p = sub.add_parser("grp", help="kernel-generalized residual propagation (grid over K and sigma)")
    _add_data(p), _add_out(p)
    p.add_argument("--K", type=_int_list, default=[1, 2, 3])
    p.add_argument("--sigma", type=_float_list, default=None,
                   help="comma list of bandwidths (default: median heuristic x 0.25,0.5,1,2,4)")
    p.add_argument("--kernel", choices=("linear", "gaussian", "sigmoid"), default="gaussian")
    p.add_argument("--eta", type=_eta, default="auto")
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--patience", type=int, default=20)

    p = sub.add_parser("lp", help="label propagation baseline")
    _add_data(p), _add_out(p)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--K", type=int, default=None, help="number of steps (omit for the converged solve)")

    p = sub.add_parser("kernel-reg", help="exact kernel regression (graph power or feature kernel)")
    _add_data(p), _add_out(p)
    p.add_argument("--K", type=int, default=2, help="graph power used when --kernel is not given")
    p.add_argument("--kernel", choices=("linear", "gaussian", "sigmoid"), default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--ridge", type=float, default=0.0)

    p = sub.add_parser("gntk", help="exact node-level GNTK, dumped to theta.bin")
    _add_data(p), _add_out(p)
    p.add_argument("--kind", choices=("recurrence", "two-layer", "decoupled", "linear"), default="recurrence")
    p.add_argument("--layers", type=int, default=2, help="depth L (recurrence) or propagation depth ell")
    p.add_argument("--c", type=float, default=0.0, help="constant of the decoupled closed form")
    p.add_argument("--c-sigma", type=float, default=2.0)
    p.add_argument("--inputs", choices=("onehot", "features"), default="onehot")
    p.add_argument("--first-layer-only", action="store_true")

    p = sub.add_parser("align", help="alignment report for a theta.bin dump")
    _add_data(p), _add_out(p)
    p.add_argument("--theta", required=True)
    p.add_argument("--K", type=int, default=1, help="compare against A^K")
    p.add_argument("--centered", action="store_true")

    p = sub.add_parser("bound", help="homophily-dependent risk bound on the training subgraph")
    _add_data(p), _add_out(p)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--delta", type=float, default=0.05)

    p = sub.add_parser("sbm", help="generate a stochastic block model dataset")
    _add_out(p)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", type=int, default=5)
    p.add_argument("--block-size", type=int, default=400)
    p.add_argument("--feature-dim", type=int, default=100)
    p.add_argument("--train", type=int, default=100, help="training nodes (spread over classes)")
    p.add_argument("--val", type=int, default=500)
    p.add_argument("--test", type=int, default=1000)

    p = sub.add_parser("verify", help="run the numerical verification suites")
    _add_out(p)
    p.add_argument("--suite", choices=("graph", "propagation", "gntk", "oracle", "alignment", "all"), default="all")
    return parser


def _dataset(args):
    if args.data and args.lam is not None:
        raise UsageError("--data and --lambda are mutually exclusive")
    if args.data:
        return load_dataset(args.data, row_normalize=args.row_normalize)
    return sbm_generate(SbmConfig(lam=args.lam if args.lam is not None else 0.0, seed=args.seed))


def _echo(args, out: Path, resolved: dict) -> None:
    cfg = {k: v for k, v in vars(args).items()}
    cfg.update(resolved)
    cfg["versions"] = {
        "resprop": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    (out / "config.json").write_text(json.dumps(cfg, indent=2, default=str))


def _write(out: Path, metrics: dict) -> None:
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, default=float))


def cmd_rp(args, out):
    ds = _dataset(args)
    cfg = RpConfig(eta=args.eta, K=args.K, max_steps=args.max_steps, patience=args.patience)
    t0 = time.perf_counter()
    report, _ = rp_run(ds, cfg)
    wall = time.perf_counter() - t0
    report.write_curves(out / "curves.csv")
    metrics = report.to_dict()
    metrics.update(test_accuracy=report.best_test, val_accuracy=report.best_val, wall_time=wall)
    _write(out, metrics)
    _echo(args, out, {"eta_resolved": report.eta})
    return f"best step {report.best_step}, val {report.best_val:.4f}, test {report.best_test:.4f}, {wall:.2f}s"


def cmd_grp(args, out):
    ds = _dataset(args)
    if ds.features.shape[1] == 0:
        raise DatasetError("generalized RP needs node features")
    sigmas = args.sigma
    if sigmas is None and args.kernel == "gaussian":
        med = median_bandwidth(ds.features)
        sigmas = [med * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)]
    t0 = time.perf_counter()
    res = grp_grid_search(ds, args.K, sigmas or [None], args.kernel, args.eta, args.max_steps, args.patience)
    wall = time.perf_counter() - t0
    res.report.write_curves(out / "curves.csv")
    metrics = res.report.to_dict()
    metrics.update(test_accuracy=res.report.best_test, val_accuracy=res.report.best_val, K=res.K,
                   sigma=res.sigma, grid=[list(r) for r in res.table], wall_time=wall)
    _write(out, metrics)
    _echo(args, out, {"K_selected": res.K, "sigma_selected": res.sigma, "eta_resolved": res.report.eta})
    return (f"best K={res.K} sigma={res.sigma}, step {res.report.best_step}, val {res.report.best_val:.4f}, "
            f"test {res.report.best_test:.4f}, {wall:.2f}s")


def cmd_lp(args, out):
    ds = _dataset(args)
    t0 = time.perf_counter()
    F = lp_run(ds, args.alpha, k=args.K)
    wall = time.perf_counter() - t0
    sp = ds.split
    metrics = {
        "val_accuracy": accuracy(F[sp.val_idx], ds.labels[sp.val_idx]),
        "test_accuracy": accuracy(F[sp.test_idx], ds.labels[sp.test_idx]),
        "wall_time": wall,
    }
    _write(out, metrics)
    _echo(args, out, {})
    return f"val {metrics['val_accuracy']:.4f}, test {metrics['test_accuracy']:.4f}, {wall:.2f}s"


def cmd_kernel_reg(args, out):
    ds = _dataset(args)
    t0 = time.perf_counter()
    if args.kernel:
        Kmat = kernel_matrix(KernelSpec(args.kernel, sigma=args.sigma), ds.features)
    else:
        Kmat = densify_power(normalize_adjacency(ds.graph), args.K)
    sp = ds.split
    res = kernel_regression(Kmat, sp, ds.target_matrix(sp.train_idx), ridge=args.ridge)
    scores = np.zeros((ds.n, res.predictions.shape[1]))
    scores[res.rest_idx] = res.predictions
    wall = time.perf_counter() - t0
    metrics = {
        "val_accuracy": accuracy(scores[sp.val_idx], ds.labels[sp.val_idx]),
        "test_accuracy": accuracy(scores[sp.test_idx], ds.labels[sp.test_idx]),
        "ridge": res.ridge,
        "min_eigenvalue": res.min_eigenvalue,
        "wall_time": wall,
    }
    _write(out, metrics)
    _echo(args, out, {})
    return f"val {metrics['val_accuracy']:.4f}, test {metrics['test_accuracy']:.4f}, {wall:.2f}s"


def cmd_gntk(args, out):
    ds = _dataset(args)
    A = normalize_adjacency(ds.graph).to_dense()
    t0 = time.perf_counter()
    if args.kind == "recurrence":
        X = np.eye(ds.n) if args.inputs == "onehot" else ds.features
        trainable = [True] + [False] * (args.layers - 1) if args.first_layer_only else None
        theta = gntk_compute(X, A, args.layers, c_sigma=args.c_sigma, trainable=trainable)
    elif args.kind == "two-layer":
        theta = two_layer_gntk(A, Xbar=None if args.inputs == "onehot" else ds.features)
    elif args.kind == "decoupled":
        theta = deep_decoupled_gntk(A, args.layers, args.c)
    else:
        theta = linear_gnn_gntk(A, args.layers)
    wall = time.perf_counter() - t0
    write_theta(out / "theta.bin", theta)
    metrics = {"n": ds.n, "wall_time": wall}
    if np.all(ds.labels >= 0):
        metrics["alignment"] = alignment_report(theta, A, ds.labels).to_dict()
    _write(out, metrics)
    _echo(args, out, {})
    return f"theta {ds.n}x{ds.n} written, {wall:.2f}s"


def cmd_align(args, out):
    ds = _dataset(args)
    theta = read_theta(args.theta)
    if theta.shape[0] != ds.n:
        raise DatasetError(f"theta is {theta.shape[0]}x{theta.shape[0]} but the dataset has {ds.n} nodes")
    A = densify_power(normalize_adjacency(ds.graph), args.K)
    rep = alignment_report(theta, A, ds.labels, centered=args.centered)
    metrics = rep.to_dict()
    metrics["triangle_inequality"] = rep.satisfies_triangle()
    _write(out, metrics)
    _echo(args, out, {})
    return f"A(theta,A)={rep.kernel_graph:.4f} A(theta,*)={rep.kernel_target:.4f} A(A,*)={rep.homophily:.4f}"


def cmd_bound(args, out):
    ds = _dataset(args)
    tr = ds.split.train_idx
    A = normalize_adjacency(ds.graph).to_dense()[np.ix_(tr, tr)]
    rep = generalization_bound(A, ds.target_matrix(tr), BoundConfig(args.alpha, args.delta))
    _write(out, rep.to_dict())
    _echo(args, out, {})
    return f"bound {rep.value:.4f} (homophily {rep.homophily:.4f}, trace {rep.trace:.2f})"


def cmd_sbm(args, out):
    cfg = SbmConfig(num_blocks=args.blocks, block_size=args.block_size, feature_dim=args.feature_dim,
                    lam=args.lam, seed=args.seed, train_total=args.train, val_total=args.val,
                    test_total=args.test)
    ds = sbm_generate(cfg)
    save_dataset(ds, out)
    metrics = {"n": ds.n, "edges": ds.graph.nnz // 2, "num_classes": ds.num_classes}
    _write(out, metrics)
    _echo(args, out, {})
    return f"{ds.n} nodes, {metrics['edges']} edges -> {out}"


def cmd_verify(args, out):
    from .verify import run_suite

    checks = run_suite(args.suite)
    for chk in checks:
        print(chk.line())
    _write(out, {"checks": [
        {"name": c.name, "passed": c.passed, "value": c.value, "threshold": c.threshold, "detail": c.detail,
         "seconds": c.seconds} for c in checks]})
    failed = sum(not c.passed for c in checks)
    args._exit = 1 if failed else 0
    return f"{len(checks) - failed}/{len(checks)} checks passed"


HANDLERS = {
    "rp": cmd_rp, "grp": cmd_grp, "lp": cmd_lp, "kernel-reg": cmd_kernel_reg, "gntk": cmd_gntk,
    "align": cmd_align, "bound": cmd_bound, "sbm": cmd_sbm, "verify": cmd_verify,
}


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = HANDLERS[args.command](args, out)
    except UsageError as exc:
        print(f"resprop {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, FileNotFoundError) as exc:
        print(f"resprop {args.command}: dataset error: {exc}", file=sys.stderr)
        return 3
    except (GraphError, GntkError, AlignmentError, SingularKernelError, DenseLimitError, ConvergenceError,
            FloatingPointError, np.linalg.LinAlgError, ValueError, MemoryError) as exc:
        print(f"resprop {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 4
    print(summary)
    return getattr(args, "_exit", 0)


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
