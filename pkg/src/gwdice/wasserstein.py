"""Wasserstein distance between label probability vectors.

Two routes are provided: :func:`emd_lp` solves the transport linear program
with a transportation simplex, and :func:`emd_crisp` uses the closed form
that holds when the target is a one-hot vector.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .label_metric import GroundMetric

SUM_TOL = 1e-6
MAX_LABELS = 64


class ProbabilityError(ValueError):
    """Raised for inputs that are not label probability vectors."""


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class TransportPlan:
    t: np.ndarray

    def cost(self, m: np.ndarray) -> float:
        return float(np.sum(self.t * m))


def as_prob_vector(values, n: int | None = None) -> np.ndarray:
    """Return ``values`` as a float64 probability vector.

    Sums within 1e-6 of one are renormalised; anything further off raises.
    """
    p = np.array(values, dtype=np.float64).reshape(-1)
    if n is not None and p.size != n:
        raise ShapeError(f"expected {n} probabilities, got {p.size}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ProbabilityError("probabilities must be finite and nonnegative")
    s = p.sum()
    if abs(s - 1.0) > SUM_TOL:
        raise ProbabilityError(f"probabilities sum to {s!r}, not 1")
    return p / s


def as_prob_segmentation(p, n_labels: int | None = None) -> np.ndarray:
    """Validate a label probability map with labels on the last axis."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 2:
        raise ShapeError("probability map needs a grid axis and a label axis")
    if n_labels is not None and p.shape[-1] != n_labels:
        raise ShapeError(f"probability map has {p.shape[-1]} labels, expected {n_labels}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ProbabilityError("probabilities must be finite and nonnegative")
    s = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > SUM_TOL):
        raise ProbabilityError("some voxel probability vectors do not sum to 1")
    return p / s


def as_crisp_segmentation(g, n_labels: int, dims: tuple | None = None) -> np.ndarray:
    g = np.asarray(g)
    if not np.issubdtype(g.dtype, np.integer):
        if not np.all(np.equal(np.mod(g, 1), 0)):
            raise ShapeError("crisp segmentation must hold integer label ids")
        g = g.astype(np.int64)
    if dims is not None and tuple(g.shape) != tuple(dims):
        raise ShapeError(f"segmentation grid {g.shape} does not match {tuple(dims)}")
    if g.size and (g.min() < 0 or g.max() >= n_labels):
        raise ShapeError(f"label ids must lie in 0..{n_labels - 1}")
    return g.astype(np.intp, copy=False)


def one_hot(g: np.ndarray, n_labels: int) -> np.ndarray:
    return np.eye(n_labels)[g]


# --- transportation simplex -------------------------------------------------


def _northwest_corner(p: np.ndarray, q: np.ndarray):
    m, n = p.size, q.size
    s, d = p.copy(), q.copy()
    t = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(s[i], d[j])
        t[i, j] = x
        basis.append((i, j))
        supply_first = s[i] <= d[j]
        s[i] -= x
        d[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif supply_first:
            i += 1
        else:
            j += 1
    # floating residue of the last cell keeps marginals within rounding
    return t, basis


def _potentials(c: np.ndarray, basis, m: int, n: int):
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, k = stack.pop()
        if kind == "r":
            for j in rows[k]:
                if np.isnan(v[j]):
                    v[j] = c[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = c[i, k] - v[k]
                    stack.append(("r", i))
    return u, v, rows, cols


def _tree_path(rows, cols, start_col: int, end_row: int):
    """Basic cells on the tree path from column node to row node."""
    parent = {("c", start_col): None}
    stack = [("c", start_col)]
    while stack:
        node = stack.pop()
        if node == ("r", end_row):
            break
        kind, k = node
        nbrs = [("r", i) for i in cols[k]] if kind == "c" else [("c", j) for j in rows[k]]
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                stack.append(nb)
    path = []
    node = ("r", end_row)
    while parent[node] is not None:
        prev = parent[node]
        cell = (node[1], prev[1]) if node[0] == "r" else (prev[1], node[1])
        path.append(cell)
        node = prev
    path.reverse()
    return path


def _transport_simplex(p: np.ndarray, q: np.ndarray, c: np.ndarray, max_iter: int = 10_000):
    m, n = p.size, q.size
    t, basis = _northwest_corner(p, q)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    tol = 1e-12 * max(1.0, float(np.max(np.abs(c))))

    for _ in range(max_iter):
        u, v, rows, cols = _potentials(c, basis, m, n)
        reduced = c - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        candidates = np.flatnonzero(reduced.ravel() < -tol)
        if candidates.size == 0:
            return t
        # Bland: lowest-index entering cell
        ei, ej = divmod(int(candidates[0]), n)
        path = _tree_path(rows, cols, ej, ei)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(t[cell] for cell in minus)
        leaving = min(cell for cell in minus if t[cell] == theta)
        for cell in minus:
            t[cell] -= theta
        for cell in plus:
            t[cell] += theta
        t[ei, ej] = theta
        t[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
        in_basis[leaving] = False
        in_basis[ei, ej] = True
    raise RuntimeError("transportation simplex did not converge")


def emd_lp(p, q, metric: GroundMetric | np.ndarray) -> tuple[float, TransportPlan]:
    """Wasserstein distance by solving the transport linear program.

    Returns the optimal cost and one optimal plan. Only the value is unique;
    callers must not rely on which optimal plan is returned.
    """
    m = metric.m if isinstance(metric, GroundMetric) else np.asarray(metric, dtype=np.float64)
    n = m.shape[0]
    if n > MAX_LABELS:
        raise ShapeError(f"label spaces above {MAX_LABELS} labels are not supported")
    p = as_prob_vector(p, n)
    q = as_prob_vector(q, n)
    t = _transport_simplex(p, q, m)
    np.clip(t, 0.0, None, out=t)
    assert np.allclose(t.sum(axis=1), p, atol=1e-9) and np.allclose(t.sum(axis=0), q, atol=1e-9)
    plan = TransportPlan(t)
    return plan.cost(m), plan


def emd_crisp(p, gt: int, metric: GroundMetric) -> float:
    """Closed-form distance from ``p`` to the one-hot vector of label ``gt``."""
    n = len(metric)
    if not 0 <= int(gt) < n:
        raise ShapeError(f"label {gt} outside label space of size {n}")
    p = as_prob_vector(p, n)
    return float(np.sum(metric.m[:, int(gt)] * p))


def crisp_distances(p: np.ndarray, g: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Per-voxel ``sum_l M[l, g_i] p_il`` for flat ``p`` (N, L) and ``g`` (N,)."""
    return np.sum(m[:, g].T * p, axis=-1)


def emd_map_crisp(pred, gt, metric: GroundMetric, threads: int = 1, validate: bool = True):
    """Per-voxel crisp Wasserstein distances and their total.

    ``pred`` has labels on the last axis. The per-voxel map may be computed in
    ``threads`` chunks; the total is always reduced over the complete map in
    voxel order, so it does not depend on the thread count.
    """
    n = len(metric)
    p = as_prob_segmentation(pred, n) if validate else np.asarray(pred, dtype=np.float64)
    g = as_crisp_segmentation(gt, n)
    if p.shape[:-1] != g.shape:
        raise ShapeError(f"prediction grid {p.shape[:-1]} does not match ground truth {g.shape}")
    flat_p = p.reshape(-1, n)
    flat_g = g.reshape(-1)
    if threads <= 1 or flat_g.size < 2 * threads:
        per = crisp_distances(flat_p, flat_g, metric.m)
    else:
        bounds = np.linspace(0, flat_g.size, threads + 1).astype(int)
        per = np.empty(flat_g.size)

        def work(k):
            a, b = bounds[k], bounds[k + 1]
            per[a:b] = crisp_distances(flat_p[a:b], flat_g[a:b], metric.m)

        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, range(threads)))
    total = float(np.sum(per))
    return per.reshape(g.shape), total
