import numpy as np
import pytest

from gwdice.label_metric import LabelSpace, metric_from_matrix

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_prob_map(rng, shape, n, sparse=False):
    p = rng.dirichlet(np.ones(n), size=shape)
    if sparse:
        p[rng.random(p.shape) < 0.3] = 0.0
        dead = p.sum(axis=-1) == 0
        p[dead, 0] = 1.0
        p /= p.sum(axis=-1, keepdims=True)
    return p


def random_symmetric_metric(rng, n):
    a = rng.random((n, n))
    m = np.triu(a, 1)
    return m + m.T


def random_euclidean_metric(rng, n):
    pts = rng.random((n, 3))
    return np.linalg.norm(pts[:, None] - pts[None], axis=-1)


def random_tree_edges(rng, n_labels, n_internal=2):
    """Random weighted tree over label ids plus a few internal nodes."""
    nodes = list(range(n_labels)) + [f"n{k}" for k in range(n_internal)]
    order = [nodes[i] for i in rng.permutation(len(nodes))]
    edges = []
    for k in range(1, len(order)):
        parent = order[rng.integers(0, k)]
        edges.append((parent, order[k], float(rng.uniform(0.05, 1.0))))
    return edges


def extremal_metric(rng, n):
    """Random Euclidean metric rescaled so background (0) is furthest from every class."""
    m = random_euclidean_metric(rng, n)
    top = m.max() * 1.01
    m[0, 1:] = top
    m[1:, 0] = top
    return metric_from_matrix(m, LabelSpace.anonymous(n))


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)
