import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwdice.label_metric import (
    BRATS_SPACE,
    BackgroundExtremalWarning,
    LabelSpace,
    LabelTree,
    MetricError,
    format_metric,
    metric_from_matrix,
    metric_from_tree,
    metric_tree_brats,
    metric_zero_one,
    parse_metric_text,
    read_metric_file,
    write_metric_file,
)

from conftest import random_tree_edges

PRINTED_M_TREE = [
    [0, 1, 1, 1, 1],
    [1, 0, 0.6, 0.2, 0.5],
    [1, 0.6, 0, 0.6, 0.7],
    [1, 0.2, 0.6, 0, 0.5],
    [1, 0.5, 0.7, 0.5, 0],
]


def floyd_warshall(edges, nodes):
    idx = {n: i for i, n in enumerate(nodes)}
    d = np.full((len(nodes), len(nodes)), np.inf)
    np.fill_diagonal(d, 0)
    for a, b, w in edges:
        d[idx[a], idx[b]] = d[idx[b], idx[a]] = w
    for k in range(len(nodes)):
        d = np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :])
    return d, idx


class TestLabelSpace:
    def test_needs_two_labels(self):
        with pytest.raises(MetricError):
            LabelSpace(("only",))

    def test_background_must_exist(self):
        with pytest.raises(MetricError):
            LabelSpace(("a", "b"), background=2)

    def test_duplicate_names(self):
        with pytest.raises(MetricError):
            LabelSpace(("a", "a"))


class TestMetricFromMatrix:
    def test_zero_one_5(self):
        m = metric_from_matrix(np.ones((5, 5)) - np.eye(5), BRATS_SPACE)
        assert m.background_extremal

    def test_printed_tree_matrix(self):
        m = metric_from_matrix(PRINTED_M_TREE, BRATS_SPACE)
        assert m.background_extremal
        assert np.all(m.m[0, 1:] == 1.0)
        assert np.all(m.m.max(axis=1)[1:] == 1.0)

    def test_binary(self):
        m = metric_from_matrix([[0, 1], [1, 0]])
        assert m.m.tolist() == [[0, 1], [1, 0]]

    @pytest.mark.parametrize(
        "matrix",
        [
            np.zeros((2, 3)),
            np.zeros((3, 3)),  # wrong size for a 2-label space
        ],
    )
    def test_shape_errors(self, matrix):
        with pytest.raises(MetricError):
            metric_from_matrix(matrix, LabelSpace(("a", "b")))

    def test_negative(self):
        with pytest.raises(MetricError, match="negative"):
            metric_from_matrix([[0, -1], [-1, 0]])

    def test_asymmetric(self):
        with pytest.raises(MetricError, match="symmetric"):
            metric_from_matrix([[0, 1], [1 + 1e-9, 0]])

    def test_tiny_asymmetry_is_symmetrised(self):
        m = metric_from_matrix([[0, 1], [1 + 1e-13, 0]])
        assert m.m[0, 1] == m.m[1, 0]

    def test_nonzero_diagonal(self):
        with pytest.raises(MetricError, match="diagonal"):
            metric_from_matrix([[0.1, 1], [1, 0]])

    def test_extremal_violation_is_a_warning(self):
        bad = [[0, 0.1, 0.1], [0.1, 0, 0.9], [0.1, 0.9, 0]]
        with pytest.warns(BackgroundExtremalWarning):
            m = metric_from_matrix(bad)
        assert not m.background_extremal
        assert (1, 2) in m.extremal_violations()

    def test_revalidation_is_idempotent(self):
        m = metric_tree_brats()
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            again = metric_from_matrix(m)
        assert again == m


class TestZeroOne:
    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_entries(self, n):
        m = metric_zero_one(LabelSpace.anonymous(n))
        assert np.array_equal(m.m, 1 - np.eye(n))

    def test_matches_matrix_route(self):
        space = LabelSpace.anonymous(4)
        assert metric_zero_one(space) == metric_from_matrix(np.ones((4, 4)) - np.eye(4), space)


class TestTree:
    def test_star(self):
        space = LabelSpace.anonymous(4)
        tree = LabelTree([("hub", l, 0.5) for l in range(4)])
        m = metric_from_tree(tree, space)
        assert np.allclose(m.m, 1 - np.eye(4))

    def test_path(self):
        space = LabelSpace(("a", "b", "c"))
        with pytest.warns(BackgroundExtremalWarning):
            m = metric_from_tree(LabelTree([(0, 1, 0.2), (1, 2, 0.3)]), space)
        assert m.m[0, 2] == pytest.approx(0.5)

    def test_six_node_tree_matches_floyd_warshall(self):
        edges = [(0, "tumour", 0.5), ("tumour", 2, 0.3), ("tumour", 1, 0.2), (1, 3, 0.1), (1, 4, 0.25)]
        m = metric_from_tree(LabelTree(edges), BRATS_SPACE)
        d, idx = floyd_warshall(edges, [0, 1, 2, 3, 4, "tumour"])
        assert np.allclose(m.m, d[:5, :5], atol=1e-12)

    def test_disconnected(self):
        edges = [(0, 1, 1.0), (2, 3, 1.0), ("x", "y", 1.0)]
        with pytest.raises(MetricError):
            metric_from_tree(LabelTree(edges), LabelSpace.anonymous(4))

    def test_missing_label(self):
        with pytest.raises(MetricError, match="missing"):
            metric_from_tree(LabelTree([(0, 1, 1.0)]), LabelSpace.anonymous(3))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 7))
    def test_triangle_inequality_random_trees(self, seed, n):
        rng = np.random.default_rng(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BackgroundExtremalWarning)
            m = metric_from_tree(LabelTree(random_tree_edges(rng, n)), LabelSpace.anonymous(n)).m
        for a, b, c in itertools.product(range(n), repeat=3):
            assert m[a, c] <= m[a, b] + m[b, c] + 1e-12


class TestMetricFile:
    def test_roundtrip(self, tmp_path):
        m = metric_tree_brats()
        write_metric_file(m, tmp_path / "tree.csv")
        back = read_metric_file(tmp_path / "tree.csv")
        assert back == m
        assert back.space.names == BRATS_SPACE.names

    def test_parse(self):
        m = parse_metric_text(["labels: bg, fg", "background: 0", "0, 1", "1, 0"])
        assert m.space.names == ("bg", "fg")

    @pytest.mark.parametrize(
        "lines",
        [
            ["background: 0", "labels: a,b", "0,1", "1,0"],
            ["labels: a,b", "background: x", "0,1", "1,0"],
            ["labels: a,b", "background: 0", "0,1"],
            ["labels: a,b", "background: 0", "0,1", "1,zero"],
            ["labels: a,b", "background: 0", "0,1,2", "1,0"],
        ],
    )
    def test_malformed(self, lines):
        with pytest.raises(MetricError):
            parse_metric_text(lines)

    def test_format_uses_decimal_point(self):
        lines = format_metric(metric_tree_brats()).splitlines()
        assert lines[1] == "background: 0"
        assert lines[3] == "1.0,0.0,0.6,0.2,0.5"
