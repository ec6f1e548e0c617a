import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import pair_graph, random_graph, triangle_graph
from unreal.graph import (
    BoundsError,
    ParseError,
    SchemaError,
    from_edges,
    load_graph,
    load_graph_dir,
    normalize_adjacency,
    read_features,
    save_graph,
    spmm,
    write_features,
)


def test_triangle_structure():
    g = triangle_graph()
    assert (g.n, g.f, g.k) == (3, 2, 2)
    assert len(g.indices) == 6
    assert g.num_edges == 3


def test_cora_shape(cora):
    assert (cora.n, cora.f, cora.k) == (2708, 1433, 7)
    assert np.bincount(cora.labels).tolist() == [351, 217, 418, 818, 426, 298, 180]


def test_self_loop_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        g = from_edges(np.array([[0, 1], [5, 5]]), np.zeros((6, 2), np.float32), np.array([0, 1, 0, 1, 0, 1]))
    assert "self-loop" in caplog.text
    assert g.degrees()[5] == 0


def test_duplicates_and_direction_normalized():
    g = from_edges(np.array([[0, 1], [1, 0], [0, 1], [2, 1]]), np.zeros((3, 1), np.float32), np.array([0, 1, 0]))
    assert g.edges().tolist() == [[0, 1], [1, 2]]
    a = g.adjacency().toarray()
    assert np.array_equal(a, a.T)


def test_missing_class_is_schema_error():
    with pytest.raises(SchemaError):
        from_edges(np.array([[0, 1]]), np.zeros((2, 1), np.float32), np.array([0, 2]))


def test_out_of_range_edge_is_bounds_error():
    with pytest.raises(BoundsError):
        from_edges(np.array([[0, 7]]), np.zeros((2, 1), np.float32), np.array([0, 1]))


def test_parse_error_names_line(tmp_path):
    (tmp_path / "e.tsv").write_text("# header\n0\t1\nfoo\tbar\n")
    (tmp_path / "l.txt").write_text("0\n1\n")
    write_features(tmp_path / "x.gfm", np.zeros((2, 1), np.float32))
    with pytest.raises(ParseError, match=":3"):
        load_graph(tmp_path / "e.tsv", tmp_path / "x.gfm", tmp_path / "l.txt")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_graph(tmp_path / "none.tsv", tmp_path / "x.gfm", tmp_path / "l.txt")


@pytest.mark.parametrize("binary", [True, False])
def test_round_trip(tmp_path, binary):
    g = random_graph(3, n=15, f=4)
    save_graph(g, tmp_path, binary=binary)
    h = load_graph_dir(tmp_path)
    assert np.array_equal(h.features, g.features)
    assert np.array_equal(h.edges(), g.edges())
    assert np.array_equal(h.labels, g.labels)


def test_feature_file_header(tmp_path):
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_features(tmp_path / "f.gfm", x)
    raw = (tmp_path / "f.gfm").read_bytes()
    assert raw[:4] == b"GFM1"
    assert int.from_bytes(raw[4:12], "little") == 2
    assert int.from_bytes(raw[12:20], "little") == 3
    assert np.array_equal(read_features(tmp_path / "f.gfm"), x)


def test_isolated_node_normalization():
    g = from_edges(np.zeros((0, 2), int), np.zeros((1, 1), np.float32), np.array([0]))
    assert normalize_adjacency(g).toarray().tolist() == [[1.0]]


def test_pair_normalization_and_spmm():
    g = pair_graph()
    a = normalize_adjacency(g)
    assert np.allclose(a.toarray(), [[0.5, 0.5], [0.5, 0.5]])
    assert np.allclose(spmm(a, np.array([[1.0], [3.0]])), [[2.0], [2.0]])


def test_triangle_normalization():
    a = normalize_adjacency(triangle_graph()).toarray()
    assert np.allclose(a, np.full((3, 3), 1 / 3))


def test_spmm_shape_mismatch():
    with pytest.raises(ValueError):
        spmm(normalize_adjacency(pair_graph()), np.ones((3, 2)))


def test_normalization_does_not_mutate_graph():
    g = random_graph(1)
    before = g.indices.copy()
    normalize_adjacency(g)
    assert np.array_equal(before, g.indices)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 64), st.integers(1, 6))
def test_spmm_matches_dense(seed, n, d):
    g = random_graph(seed, n=max(n, 3), f=2, k=2, p_edge=0.2)
    a = normalize_adjacency(g)
    dense = a.toarray()
    x = np.random.default_rng(seed).normal(size=(g.n, d))
    assert np.allclose(spmm(a, x), dense @ x, rtol=1e-6, atol=1e-6)
    deg = g.degrees() + 1
    rows, cols = a.matrix.nonzero()
    assert np.all(dense[rows, cols] > 0)
    assert np.allclose(dense[rows, cols], 1 / np.sqrt(deg[rows] * deg[cols]), rtol=1e-6)
    assert np.all(dense.sum(axis=1) <= np.sqrt(deg.max()) + 1e-6)
