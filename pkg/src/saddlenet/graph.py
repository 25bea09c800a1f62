"""Undirected agent network: validation, neighborhoods, hop distances."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    pass


class InvalidEdge(GraphError):
    pass


class DisconnectedGraph(GraphError):
    pass


@dataclass(frozen=True)
class Graph:
    """Connected undirected graph over nodes ``0 .. node_count - 1``.

    Besides the neighbor lists, the graph exposes a *directed slot* layout
    used by the dynamics: every ordered pair ``(i, j)`` with ``j`` adjacent
    to ``i`` gets one slot, ordered by ``i`` then ``j``.  Slot ``e`` is owned
    by ``slot_src[e]``; ``slot_reverse[e]`` is the slot of ``(j, i)``.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    _adjacency: tuple[tuple[int, ...], ...] = field(repr=False, compare=False)

    @property
    def slot_src(self) -> np.ndarray:
        return self._slots[0]

    @property
    def slot_dst(self) -> np.ndarray:
        return self._slots[1]

    @property
    def slot_reverse(self) -> np.ndarray:
        return self._slots[2]

    @property
    def slot_offsets(self) -> np.ndarray:
        """``slot_offsets[i]:slot_offsets[i+1]`` are the slots owned by ``i``."""
        return self._slots[3]

    @property
    def slot_count(self) -> int:
        return int(self._slots[0].size)

    @property
    def _slots(self):
        cached = self.__dict__.get("_slot_cache")
        if cached is None:
            src, dst = [], []
            offsets = [0]
            for i, nbrs in enumerate(self._adjacency):
                for j in nbrs:
                    src.append(i)
                    dst.append(j)
                offsets.append(len(src))
            index = {(i, j): e for e, (i, j) in enumerate(zip(src, dst))}
            rev = [index[(j, i)] for i, j in zip(src, dst)]
            cached = (
                np.asarray(src, dtype=np.intp),
                np.asarray(dst, dtype=np.intp),
                np.asarray(rev, dtype=np.intp),
                np.asarray(offsets, dtype=np.intp),
            )
            object.__setattr__(self, "_slot_cache", cached)
        return cached

    def degree(self, i: int) -> int:
        return len(neighbors(self, i))


def build_graph(node_count: int, edge_list) -> Graph:
    """Validate ``edge_list`` and return the connected graph it describes."""
    if int(node_count) != node_count or node_count < 1:
        raise GraphError(f"node_count must be a positive integer, got {node_count!r}")
    node_count = int(node_count)
    seen: set[tuple[int, int]] = set()
    adjacency: list[set[int]] = [set() for _ in range(node_count)]
    for pair in edge_list:
        try:
            i, j = (int(v) for v in pair)
        except (TypeError, ValueError) as exc:
            raise InvalidEdge(f"malformed edge {pair!r}") from exc
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise InvalidEdge(f"edge {pair!r} has an index outside [0, {node_count})")
        if i == j:
            raise InvalidEdge(f"self-loop on node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InvalidEdge(f"duplicate edge {key}")
        seen.add(key)
        adjacency[i].add(j)
        adjacency[j].add(i)

    adj = tuple(tuple(sorted(s)) for s in adjacency)
    reached = _bfs_distances(adj, 0)
    missing = [v for v, d in enumerate(reached) if d < 0]
    if missing:
        raise DisconnectedGraph(f"nodes {missing} are unreachable from node 0")
    return Graph(node_count, tuple(sorted(seen)), adj)


def neighbors(g: Graph, i: int) -> list[int]:
    if not 0 <= i < g.node_count:
        raise IndexError(f"node {i} out of range for a graph with {g.node_count} nodes")
    return list(g._adjacency[i])


def _bfs_distances(adjacency, source: int) -> list[int]:
    dist = [-1] * len(adjacency)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def hop_distance(g: Graph, i: int, j: int) -> int:
    return _bfs_distances(g._adjacency, i)[j]


def diameter(g: Graph) -> int:
    """Longest shortest-path hop count, by BFS from every node.

    A single-node graph has diameter 0.
    """
    return max(max(_bfs_distances(g._adjacency, s)) for s in range(g.node_count))


# generators -----------------------------------------------------------------

def cycle_graph(n: int) -> Graph:
    if n < 3:
        return path_graph(n)
    return build_graph(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n: int) -> Graph:
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n: int) -> Graph:
    return build_graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def star_graph(n: int) -> Graph:
    return build_graph(n, [(0, j) for j in range(1, n)])


def random_geometric_graph(n: int, radius: float, seed: int) -> Graph:
    """Nodes uniform on the unit square, linked when within ``radius``."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, 2))
    edges = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if np.hypot(*(pts[i] - pts[j])) <= radius
    ]
    return build_graph(n, edges)
