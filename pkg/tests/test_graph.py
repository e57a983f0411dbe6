import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simguard.errors import GraphFormatError, GraphValidationError
from simguard.graph import (AttributedGraph, RoleMask, SplitSpec, export, ingest,
                            inductive_split, load_graph_dir, remove_nodes, subgraph)


def test_edges_are_canonical():
    g = AttributedGraph(np.zeros((3, 2)), [(2, 0), (0, 2), (1, 0)], [-1, -1, -1])
    assert g.edges.tolist() == [[0, 1], [0, 2]]
    assert g.degrees.tolist() == [2, 1, 1]


def test_rejects_self_loop_and_dangling():
    with pytest.raises(GraphValidationError):
        AttributedGraph(np.zeros((2, 2)), [(1, 1)], [-1, -1])
    with pytest.raises(GraphValidationError):
        AttributedGraph(np.zeros((2, 2)), [(0, 5)], [-1, -1])


def test_graph_is_immutable(tiny_graph):
    with pytest.raises(ValueError):
        tiny_graph.features[0, 0] = 9.0


def test_add_nodes_keeps_original(tiny_graph):
    g2 = tiny_graph.add_nodes(np.ones((1, 4)), [(0, 6)])
    assert g2.n_nodes == 7 and tiny_graph.n_nodes == 6
    assert g2.labels[6] == -1
    assert g2.has_edge(0, 6)


def test_role_mask_overlap_rejected():
    with pytest.raises(GraphValidationError):
        RoleMask(frozenset({1, 2}), frozenset({2}), 0)


@pytest.mark.parametrize("binary", [True, False])
def test_export_ingest_roundtrip(tmp_path, tiny_graph, binary):
    export(tiny_graph, tmp_path, binary=binary)
    back = load_graph_dir(tmp_path)
    assert np.array_equal(back.features, tiny_graph.features)
    assert np.array_equal(back.edges, tiny_graph.edges)
    assert np.array_equal(back.labels, tiny_graph.labels)


def test_binary_export_is_float32(tmp_path):
    g = AttributedGraph(np.array([[0.1, 1.0 / 3.0]]), [], [-1])
    export(g, tmp_path)
    back = load_graph_dir(tmp_path)
    assert np.array_equal(back.features, g.features.astype(np.float32).astype(np.float64))


def test_ingest_reports_bad_line(tmp_path):
    (tmp_path / "f.csv").write_text("1,2\n3,x\n")
    (tmp_path / "e.txt").write_text("0 1\n")
    with pytest.raises(GraphFormatError) as exc:
        ingest(tmp_path / "f.csv", tmp_path / "e.txt")
    assert ":2:" in str(exc.value) or "2" in str(exc.value)


def test_ingest_dangling_edge(tmp_path):
    (tmp_path / "f.csv").write_text("1,2\n3,4\n")
    (tmp_path / "e.txt").write_text("# comment\n0 1\n1 7\n")
    with pytest.raises(GraphValidationError):
        ingest(tmp_path / "f.csv", tmp_path / "e.txt")


def test_ingest_truncated_binary(tmp_path):
    (tmp_path / "f.sgfx").write_bytes(b"SGFX" + (3).to_bytes(4, "little")
                                      + (2).to_bytes(4, "little") + b"\0" * 8)
    (tmp_path / "e.txt").write_text("")
    with pytest.raises(GraphFormatError):
        ingest(tmp_path / "f.sgfx", tmp_path / "e.txt")


def test_missing_graph_dir_file(tmp_path):
    with pytest.raises(GraphValidationError):
        load_graph_dir(tmp_path)


def test_split_json_roundtrip():
    s = SplitSpec(np.array([0, 2]), np.array([1]), 4)
    back = SplitSpec.from_json(s.to_json())
    assert back.train_nodes.tolist() == [0, 2] and back.seed == 4


def test_subgraph_drops_cross_edges(tiny_graph):
    sub, mapping = subgraph(tiny_graph, [3, 2, 0])
    assert mapping.tolist() == [0, 2, 3]
    assert sub.edges.tolist() == [[0, 1], [1, 2]]
    assert sub.labels.tolist() == [0, 0, 1]


def test_remove_nodes(tiny_graph):
    sub, kept = remove_nodes(tiny_graph, [2])
    assert kept.tolist() == [0, 1, 3, 4, 5]
    assert sub.edges.tolist() == [[0, 1], [2, 3]]


@given(st.integers(3, 60), st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_partitions_nodes(n, ratio, seed):
    g = AttributedGraph(np.zeros((n, 1)), [], np.full(n, -1))
    s = inductive_split(g, ratio, seed)
    both = np.concatenate([s.train_nodes, s.unseen_nodes])
    assert sorted(both.tolist()) == list(range(n))
    assert s.train_nodes.size == int(round(ratio * n))
    again = inductive_split(g, ratio, seed)
    assert np.array_equal(again.train_nodes, s.train_nodes)


@given(st.integers(2, 15), st.integers(0, 1000))
def test_subgraph_edges_are_induced(n, seed):
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    g = AttributedGraph(rng.random((n, 2)), pairs, np.full(n, -1))
    keep = np.flatnonzero(rng.random(n) < 0.6)
    sub, mapping = subgraph(g, keep)
    expected = {(a, b) for a, b in pairs if a in keep and b in keep}
    got = {(int(mapping[a]), int(mapping[b])) for a, b in sub.edges}
    assert got == expected


def test_split_of_ten_nodes():
    g = AttributedGraph(np.zeros((10, 1)), [], np.full(10, -1))
    s = inductive_split(g, 0.8, 7)
    assert s.train_nodes.size == 8 and s.unseen_nodes.size == 2
    assert not set(s.train_nodes) & set(s.unseen_nodes)
    with pytest.raises(ValueError):
        inductive_split(g, 1.0, 7)


def test_triangle_pair_subgraph():
    g = AttributedGraph(np.eye(3), [(0, 1), (1, 2), (0, 2)], [-1] * 3)
    sub, _ = subgraph(g, [1, 2])
    assert sub.n_nodes == 2 and sub.n_edges == 1
    single, _ = subgraph(g, [0])
    assert single.n_edges == 0
    with pytest.raises(ValueError):
        subgraph(g, [5])
