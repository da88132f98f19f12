import numpy as np
import pytest

from resprop.datasets import NodeDataset
from resprop.graph_core import DataSplit, build_graph, normalize_adjacency


def make_dataset(edges, n, labels, train, val=(), test=(), features=None, c=None):
    labels = np.asarray(labels, dtype=np.int64)
    feats = np.zeros((n, 0)) if features is None else np.asarray(features, dtype=np.float64)
    c = int(labels.max()) + 1 if c is None else c
    return NodeDataset(build_graph(edges, n), feats, labels, c, DataSplit(train, val, test))


@pytest.fixture
def path2():
    return build_graph([(0, 1)], 2)


@pytest.fixture
def path2_norm(path2):
    return normalize_adjacency(path2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_edges(rng, n, p):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return list(zip(iu[keep].tolist(), ju[keep].tolist()))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
