"""Oriented circuit graph, spanning tree / cotree, and Kirchhoff matrices.

Tree-branch fluxes and cotree-link charges are the generalized coordinates.
Expressing every branch flux through the cut-set matrix Q and every branch
charge through the loop matrix B makes both Kirchhoff laws hold identically,
so the simulator never carries explicit constraint equations.  Q and B use
exact integer entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit
from .errors import DegenerateTopologyError

# tree selection priority: sources and capacitors first so state variables
# land on tree fluxes; deterministic tie-break by declaration order
_PRIORITY = {"V": 0, "OC": 1, "C": 1, "R": 2, "M": 3, "L": 4, "I": 5}


@dataclass(frozen=True)
class OrientedGraph:
    """One branch per element, oriented n_plus -> n_minus."""

    nodes: tuple
    branch_nodes: tuple  # (n_plus, n_minus) per branch, element order
    incidence: np.ndarray  # nodes x branches, entries in {-1, 0, +1}


@dataclass(frozen=True)
class TreeCotree:
    tree: tuple  # branch indices forming the spanning tree, sorted
    links: tuple  # complement, sorted


@dataclass(frozen=True)
class KirchhoffMatrices:
    """Fundamental cut-set matrix Q (rows = tree branches) and loop matrix B
    (rows = links); columns follow element declaration order; Q B^T = 0."""

    Q: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class CoordinateMap:
    """Linear maps from coordinates to branch quantities.

    branch fluxes  = flux_map  @ tree fluxes   (flux_map = Q^T)
    branch charges = charge_map @ loop charges (charge_map = B^T)
    """

    tree: tuple
    links: tuple
    flux_map: np.ndarray  # branches x |tree|
    charge_map: np.ndarray  # branches x |links|
    flux_coord_names: tuple
    charge_coord_names: tuple


def build_graph(circuit: Circuit) -> OrientedGraph:
    nodes = circuit.nodes
    index = {n: i for i, n in enumerate(nodes)}
    nb = len(circuit.elements)
    A = np.zeros((len(nodes), nb), dtype=np.int64)
    pairs = []
    for b, e in enumerate(circuit.elements):
        A[index[e.n_plus], b] = 1
        A[index[e.n_minus], b] = -1
        pairs.append((e.n_plus, e.n_minus))
    return OrientedGraph(tuple(nodes), tuple(pairs), A)


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def select_tree(graph: OrientedGraph, circuit: Circuit) -> TreeCotree:
    """Priority spanning tree: V > C/OC > R > M > L > I, declaration order ties.

    Raises DegenerateTopologyError for voltage-source loops (a V forced into
    the cotree) and current-source cut-sets (an I forced into the tree), and
    for disconnected graphs.
    """
    order = sorted(range(len(circuit.elements)), key=lambda b: (_PRIORITY[circuit.elements[b].kind], b))
    uf = _UnionFind(graph.nodes)
    tree = []
    for b in order:
        u, v = graph.branch_nodes[b]
        if uf.union(u, v):
            tree.append(b)
    if len(tree) != len(graph.nodes) - 1:
        raise DegenerateTopologyError("graph is not connected; no spanning tree exists")
    tree_set = set(tree)
    for b in tree:
        if circuit.elements[b].kind == "I":
            raise DegenerateTopologyError(
                f"current source {circuit.elements[b].name} forms a cut-set of current sources"
            )
    for b in range(len(circuit.elements)):
        if b not in tree_set and circuit.elements[b].kind == "V":
            raise DegenerateTopologyError(
                f"voltage source {circuit.elements[b].name} closes a loop of voltage sources"
            )
    links = [b for b in range(len(circuit.elements)) if b not in tree_set]
    return TreeCotree(tuple(sorted(tree)), tuple(links))


def kirchhoff_matrices(graph: OrientedGraph, partition: TreeCotree) -> KirchhoffMatrices:
    """Fundamental loop matrix from tree paths, cut-set matrix from B.

    Each link's loop follows the link from n_plus to n_minus and returns
    through the tree; a tree branch traversed along its own orientation gets
    +1 in the loop row.  Q = [I | F] with F = -B_tree^T on tree columns.
    """
    nb = len(graph.branch_nodes)
    tree, links = partition.tree, partition.links
    # tree adjacency: node -> list of (branch, neighbor, sign when leaving via n_plus)
    adj = {n: [] for n in graph.nodes}
    for b in tree:
        u, v = graph.branch_nodes[b]
        adj[u].append((b, v, +1))
        adj[v].append((b, u, -1))

    def tree_path(src, dst):
        # BFS through the tree; returns [(branch, direction)] from src to dst
        prev = {src: None}
        queue = [src]
        while queue:
            n = queue.pop(0)
            if n == dst:
                break
            for b, m, s in adj[n]:
                if m not in prev:
                    prev[m] = (n, b, s)
                    queue.append(m)
        path = []
        n = dst
        while prev[n] is not None:
            p, b, s = prev[n]
            path.append((b, s))
            n = p
        return path[::-1]

    B = np.zeros((len(links), nb), dtype=np.int64)
    for r, b in enumerate(links):
        u, v = graph.branch_nodes[b]
        B[r, b] = 1
        for tb, s in tree_path(v, u):
            B[r, tb] = s
    Q = np.zeros((len(tree), nb), dtype=np.int64)
    for r, b in enumerate(tree):
        Q[r, b] = 1
    # F = -B_tree^T on the link columns
    for lr, lb in enumerate(links):
        for tr, tb in enumerate(tree):
            Q[tr, lb] = -B[lr, tb]
    return KirchhoffMatrices(Q, B)


def coordinate_map(circuit: Circuit, partition: TreeCotree, matrices: KirchhoffMatrices) -> CoordinateMap:
    names = [e.name for e in circuit.elements]
    return CoordinateMap(
        tree=partition.tree,
        links=partition.links,
        flux_map=matrices.Q.T.astype(float),
        charge_map=matrices.B.T.astype(float),
        flux_coord_names=tuple(names[b] for b in partition.tree),
        charge_coord_names=tuple(names[b] for b in partition.links),
    )


def build_topology(circuit: Circuit):
    """Convenience pipeline: graph, partition, matrices, coordinate map."""
    graph = build_graph(circuit)
    partition = select_tree(graph, circuit)
    matrices = kirchhoff_matrices(graph, partition)
    return graph, partition, matrices, coordinate_map(circuit, partition, matrices)
