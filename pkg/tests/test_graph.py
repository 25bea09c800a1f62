import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlenet.graph import (
    DisconnectedGraph,
    InvalidEdge,
    build_graph,
    complete_graph,
    cycle_graph,
    diameter,
    hop_distance,
    neighbors,
    path_graph,
    random_geometric_graph,
    star_graph,
)


def test_four_cycle_has_two_neighbors_each():
    g = build_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    assert all(len(neighbors(g, i)) == 2 for i in range(4))


def test_two_isolated_nodes_are_disconnected():
    with pytest.raises(DisconnectedGraph):
        build_graph(2, [])


@pytest.mark.parametrize(
    "edges",
    [[(0, 0)], [(0, 1), (1, 0)], [(0, 3)], [(-1, 0)], [(0, 1, 2)]],
    ids=["self-loop", "duplicate", "out-of-range", "negative", "malformed"],
)
def test_invalid_edges(edges):
    with pytest.raises(InvalidEdge):
        build_graph(3, edges)


def test_neighbor_examples():
    assert neighbors(cycle_graph(4), 0) == [1, 3]
    assert neighbors(complete_graph(3), 2) == [0, 1]
    assert neighbors(star_graph(5), 0) == [1, 2, 3, 4]


def test_neighbors_out_of_range():
    with pytest.raises(IndexError):
        neighbors(cycle_graph(4), 4)


def test_diameter_examples():
    assert diameter(path_graph(3)) == 2
    assert diameter(complete_graph(4)) == 1
    assert diameter(build_graph(1, [])) == 0


def test_random_geometric_diameter_matches_frozen_bfs_value():
    # all-pairs shortest paths computed separately with scipy's csgraph on the
    # same point set: 58 edges, diameter 4
    g = random_geometric_graph(20, 0.4, 1)
    assert len(g.edges) == 58
    assert diameter(g) == 4


def test_random_geometric_disconnected_seed_is_rejected():
    with pytest.raises(DisconnectedGraph):
        random_geometric_graph(20, 0.35, 7)


def test_slot_layout_is_consistent():
    g = random_geometric_graph(20, 0.4, 1)
    assert g.slot_count == 2 * len(g.edges)
    src, dst, rev = g.slot_src, g.slot_dst, g.slot_reverse
    assert np.array_equal(src[rev], dst) and np.array_equal(dst[rev], src)
    for i in range(g.node_count):
        lo, hi = g.slot_offsets[i], g.slot_offsets[i + 1]
        assert list(dst[lo:hi]) == neighbors(g, i)


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(1, 9))
    # random spanning tree plus extra edges keeps the graph connected
    edges = {(draw(st.integers(0, i - 1)), i) for i in range(1, n)}
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=12))
    for a, b in extra:
        if a != b:
            edges.add((min(a, b), max(a, b)))
    return build_graph(n, sorted(edges))


@settings(max_examples=60, deadline=None)
@given(connected_graphs())
def test_hop_distance_bounded_by_diameter(g):
    D = diameter(g)
    assert all(hop_distance(g, i, j) <= D for i in range(g.node_count) for j in range(g.node_count))


@settings(max_examples=60, deadline=None)
@given(connected_graphs())
def test_neighbor_relation_is_symmetric(g):
    for i in range(g.node_count):
        for j in neighbors(g, i):
            assert i in neighbors(g, j)


@pytest.mark.parametrize("n", range(2, 11))
def test_path_diameter(n):
    assert diameter(path_graph(n)) == n - 1
