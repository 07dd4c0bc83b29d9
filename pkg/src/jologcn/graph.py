"""Skeleton graphs: adjacency with self-loops, symmetric degree normalisation,
hop neighbourhoods and bone features."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError


@dataclass(frozen=True)
class GraphTopology:
    K: int
    edges: tuple[tuple[int, int], ...]
    parent: tuple[int, ...]
    A: np.ndarray = field(repr=False, compare=False)
    A_norm: np.ndarray = field(repr=False, compare=False)

    def degree(self) -> np.ndarray:
        return self.A.sum(axis=1)

    def to_json(self) -> dict:
        return {"K": self.K, "edges": [list(e) for e in self.edges], "parent": list(self.parent)}


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with ``D`` the row sums of ``A``."""
    deg = A.sum(axis=1)
    if np.any(deg <= 0):
        raise SchemaError("every joint needs a non-zero degree; include self-loops")
    d = 1.0 / np.sqrt(deg)
    return A * d[:, None] * d[None, :]


def _parents_from_edges(K: int, edges) -> tuple[int, ...]:
    # BFS tree rooted at joint 0 of each component; roots are their own parent
    adj = [[] for _ in range(K)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    parent = [-1] * K
    for root in range(K):
        if parent[root] != -1:
            continue
        parent[root] = root
        queue = deque([root])
        while queue:
            a = queue.popleft()
            for b in sorted(adj[a]):
                if parent[b] == -1:
                    parent[b] = a
                    queue.append(b)
    return tuple(parent)


def build_topology(edges, K: int, self_loops: bool = True, parent=None) -> GraphTopology:
    """Unit-weight undirected graph on ``K`` joints.

    ``parent`` defaults to a BFS tree rooted at joint 0; pass it explicitly to
    fix the bone directions used by :func:`bones`.
    """
    if K < 1:
        raise SchemaError("K must be positive")
    clean = []
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < K and 0 <= j < K):
            raise SchemaError(f"edge ({i}, {j}) out of range for K={K}")
        if i != j:
            clean.append((min(i, j), max(i, j)))
    clean = tuple(sorted(set(clean)))
    A = np.zeros((K, K), dtype=np.float64)
    for i, j in clean:
        A[i, j] = A[j, i] = 1.0
    if self_loops:
        A[np.diag_indices(K)] = 1.0
    if parent is None:
        parent = _parents_from_edges(K, clean)
    else:
        parent = tuple(int(p) for p in parent)
        if len(parent) != K or any(not 0 <= p < K for p in parent):
            raise SchemaError("parent map must list one in-range parent per joint")
    return GraphTopology(K=K, edges=clean, parent=parent, A=A, A_norm=normalize_adjacency(A))


def topology_from_parents(parent) -> GraphTopology:
    """Tree topology whose edges are ``(k, parent[k])``."""
    edges = [(k, p) for k, p in enumerate(parent) if k != p]
    return build_topology(edges, len(parent), parent=parent)


def load_topology(path) -> GraphTopology:
    doc = json.loads(Path(path).read_text())
    try:
        return build_topology(doc["edges"], int(doc["K"]), parent=doc.get("parent"))
    except KeyError as exc:
        raise SchemaError(f"topology JSON missing key {exc}") from None


def save_topology(topo: GraphTopology, path) -> None:
    Path(path).write_text(json.dumps(topo.to_json()))


def hop_distances(topo: GraphTopology, i: int) -> np.ndarray:
    """Shortest-path hop count from ``i`` to every joint (-1 if unreachable)."""
    dist = np.full(topo.K, -1, dtype=np.int64)
    dist[i] = 0
    queue = deque([i])
    while queue:
        a = queue.popleft()
        for b in np.flatnonzero(topo.A[a]):
            if dist[b] < 0:
                dist[b] = dist[a] + 1
                queue.append(b)
    return dist


def neighborhood(topo: GraphTopology, i: int, D: int = 1) -> set[int]:
    """Joints within ``D`` hops of joint ``i`` (including ``i``)."""
    if D < 0:
        raise ValueError("D must be non-negative")
    dist = hop_distances(topo, i)
    return {int(j) for j in np.flatnonzero((dist >= 0) & (dist <= D))}


def bones(coords: np.ndarray, topo: GraphTopology) -> np.ndarray:
    """Bone vectors ``J_k - J_parent(k)`` for a ``T x K x C x N`` coordinate array.

    Root joints (their own parent) get a zero bone.
    """
    coords = np.asarray(coords)
    if coords.shape[1] != topo.K:
        raise SchemaError(f"coordinates have {coords.shape[1]} joints, topology has {topo.K}")
    parent = np.asarray(topo.parent)
    return coords - coords[:, parent]


# -- standard layouts --------------------------------------------------------

OPENPOSE18_NAMES = (
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow",
    "l_wrist", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)
OPENPOSE18_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7), (1, 8), (8, 9),
    (9, 10), (1, 11), (11, 12), (12, 13), (0, 14), (0, 15), (14, 16), (15, 17),
)
# first 14 OpenPose joints once eyes and ears are dropped; rooted at the neck
JFP14_PARENT = (1, 1, 1, 2, 3, 1, 5, 6, 1, 8, 9, 1, 11, 12)

FIGURE7_NAMES = ("head", "l_shoulder", "r_shoulder", "l_hand", "r_hand", "hip", "foot")
FIGURE7_PARENT = (5, 5, 5, 1, 2, 5, 5)


def jfp14_topology() -> GraphTopology:
    return topology_from_parents(JFP14_PARENT)


def figure7_topology() -> GraphTopology:
    return topology_from_parents(FIGURE7_PARENT)
