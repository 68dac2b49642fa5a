"""Label spaces and ground distance matrices between labels."""

from __future__ import annotations

import io
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

SYMMETRY_TOL = 1e-12


class MetricError(ValueError):
    """Raised when a distance matrix or label tree is invalid."""


class BackgroundExtremalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LabelSpace:
    """Ordered labels with ids ``0..n-1`` and a designated background id."""

    names: tuple[str, ...]
    background: int = 0

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if len(self.names) < 2:
            raise MetricError("a label space needs at least 2 labels")
        if len(set(self.names)) != len(self.names):
            raise MetricError(f"duplicate label names: {self.names}")
        if not 0 <= self.background < len(self.names):
            raise MetricError(f"background id {self.background} not in label space")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def ids(self) -> range:
        return range(len(self.names))

    @classmethod
    def anonymous(cls, n: int, background: int = 0) -> "LabelSpace":
        return cls(tuple(f"label{i}" for i in range(n)), background)


BRATS_SPACE = LabelSpace(
    ("background", "necrotic core", "edema", "non-enhancing core", "enhancing tumour"),
    background=0,
)

_M_TREE = np.array(
    [
        [0.0, 1.0, 1.0, 1.0, 1.0],
        [1.0, 0.0, 0.6, 0.2, 0.5],
        [1.0, 0.6, 0.0, 0.6, 0.7],
        [1.0, 0.2, 0.6, 0.0, 0.5],
        [1.0, 0.5, 0.7, 0.5, 0.0],
    ]
)


@dataclass(frozen=True, eq=False)
class GroundMetric:
    """Validated symmetric distance matrix on a label space.

    ``background_extremal`` is False when some foreground pair is further
    apart than one of them is from background; the matrix is still usable.
    """

    space: LabelSpace
    m: np.ndarray
    name: str = "M"
    background_extremal: bool = field(default=True)

    def __len__(self) -> int:
        return len(self.space)

    @property
    def background(self) -> int:
        return self.space.background

    @property
    def to_background(self) -> np.ndarray:
        """Column ``M[:, b]``: distance of every label to background."""
        return self.m[:, self.space.background]

    def extremal_violations(self) -> list[tuple[int, int]]:
        return _extremal_violations(self.m, self.space.background)

    def __eq__(self, other):
        if not isinstance(other, GroundMetric):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.m, other.m)

    __hash__ = None


def _extremal_violations(m: np.ndarray, b: int) -> list[tuple[int, int]]:
    out = []
    n = m.shape[0]
    for l in range(n):
        if l == b:
            continue
        for l2 in range(n):
            if l2 != b and m[l, l2] > m[l, b]:
                out.append((l, l2))
    return out


def metric_from_matrix(matrix, space: LabelSpace | None = None, name: str = "M") -> GroundMetric:
    """Validate ``matrix`` and wrap it as a :class:`GroundMetric`.

    Raises :class:`MetricError` for wrong shape, negative entries, asymmetry
    above 1e-12 or a nonzero diagonal. A non background-extremal matrix only
    triggers a :class:`BackgroundExtremalWarning`.
    """
    if isinstance(matrix, GroundMetric):
        space = space or matrix.space
        name = matrix.name if name == "M" else name
        matrix = matrix.m
    m = np.array(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise MetricError(f"distance matrix must be square, got shape {m.shape}")
    if space is None:
        space = LabelSpace.anonymous(m.shape[0])
    if m.shape[0] != len(space):
        raise MetricError(f"matrix is {m.shape[0]}x{m.shape[1]} but label space has {len(space)} labels")
    if not np.all(np.isfinite(m)):
        raise MetricError("distance matrix has non-finite entries")
    if np.any(m < 0):
        raise MetricError("distance matrix has negative entries")
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
        raise MetricError("distance matrix is not symmetric")
    if np.any(np.diag(m) != 0):
        raise MetricError("distance matrix has a nonzero diagonal")
    m = 0.5 * (m + m.T)
    m.setflags(write=False)
    extremal = not _extremal_violations(m, space.background)
    if not extremal:
        warnings.warn(
            f"metric {name!r}: background is not the furthest label from every class",
            BackgroundExtremalWarning,
            stacklevel=2,
        )
    return GroundMetric(space, m, name, extremal)


def metric_zero_one(space: LabelSpace) -> GroundMetric:
    n = len(space)
    return metric_from_matrix(np.ones((n, n)) - np.eye(n), space, name="M_0-1")


def metric_tree_brats() -> GroundMetric:
    """The hand-tuned tree distance on the five BraTS labels."""
    return metric_from_matrix(_M_TREE, BRATS_SPACE, name="M_tree")


@dataclass(frozen=True)
class LabelTree:
    """Weighted tree whose nodes are label ids plus arbitrary internal nodes."""

    edges: tuple[tuple[Hashable, Hashable, float], ...]

    def __init__(self, edges: Iterable[tuple[Hashable, Hashable, float]]):
        object.__setattr__(self, "edges", tuple((a, b, float(w)) for a, b, w in edges))

    @property
    def nodes(self) -> set:
        return {a for a, _, _ in self.edges} | {b for _, b, _ in self.edges}

    def adjacency(self) -> dict:
        adj = defaultdict(list)
        for a, b, w in self.edges:
            if w < 0:
                raise MetricError(f"negative edge weight on ({a!r}, {b!r})")
            adj[a].append((b, w))
            adj[b].append((a, w))
        return adj


def metric_from_tree(tree: LabelTree, space: LabelSpace, name: str = "M_tree") -> GroundMetric:
    """Path-length metric between labels induced by a weighted tree."""
    adj = tree.adjacency()
    nodes = tree.nodes
    missing = [l for l in space.ids if l not in nodes]
    if missing:
        raise MetricError(f"labels missing from tree: {missing}")
    if len(tree.edges) != len(nodes) - 1:
        raise MetricError("label tree must have exactly |nodes| - 1 edges")

    n = len(space)
    m = np.zeros((n, n))
    for src in space.ids:
        dist = {src: 0.0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v, w in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + w
                    queue.append(v)
        if len(dist) != len(nodes):
            raise MetricError("label tree is disconnected")
        for dst in space.ids:
            m[src, dst] = dist[dst]
    return metric_from_matrix(m, space, name=name)


def read_metric_file(path: str | Path, name: str | None = None) -> GroundMetric:
    """Parse the plain-text metric format.

    Line 1 ``labels: a,b,...``, line 2 ``background: <id>``, then one
    comma-separated row of distances per label.
    """
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return parse_metric_text(lines, name or path.stem)


def parse_metric_text(lines: Sequence[str], name: str = "M") -> GroundMetric:
    if len(lines) < 2:
        raise MetricError("metric file needs 'labels:' and 'background:' header lines")
    key, _, value = lines[0].partition(":")
    if key.strip() != "labels":
        raise MetricError("first line must start with 'labels:'")
    names = [s.strip() for s in value.split(",")]
    key, _, value = lines[1].partition(":")
    if key.strip() != "background":
        raise MetricError("second line must start with 'background:'")
    try:
        background = int(value.strip())
    except ValueError as exc:
        raise MetricError(f"background id is not an integer: {value.strip()!r}") from exc
    space = LabelSpace(tuple(names), background)
    rows = lines[2:]
    if len(rows) != len(space):
        raise MetricError(f"expected {len(space)} matrix rows, found {len(rows)}")
    try:
        matrix = [[float(x) for x in row.split(",")] for row in rows]
    except ValueError as exc:
        raise MetricError(f"unparseable distance: {exc}") from exc
    if any(len(r) != len(space) for r in matrix):
        raise MetricError("ragged distance matrix rows")
    return metric_from_matrix(matrix, space, name=name)


def format_metric(metric: GroundMetric) -> str:
    buf = io.StringIO()
    buf.write("labels: " + ",".join(metric.space.names) + "\n")
    buf.write(f"background: {metric.space.background}\n")
    for row in metric.m:
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def write_metric_file(metric: GroundMetric, path: str | Path) -> None:
    Path(path).write_text(format_metric(metric), encoding="utf-8")
