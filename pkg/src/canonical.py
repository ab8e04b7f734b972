"""
Canonical Certificates
======================

Ordering-independent byte strings identifying isomorphism classes of
attributed graphs.

Colour refinement over (node label, multiset of (neighbour colour, bond
type)) followed by individualization-refinement over every member of the
smallest non-singleton colour cell. The certificate is the
lexicographically least serialization among the discrete leaves.
"""

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import json

import numpy as np

from graph_core import MolecularGraph


@dataclass(frozen=True, order=True)
class Certificate:
    data: bytes

    def hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Certificate":
        return cls(bytes.fromhex(text.strip()))

    def __repr__(self):
        return f"Certificate({self.data.decode('utf-8', 'replace')})"


Adjacency = List[List[Tuple[int, int]]]
CanonicalKey = Tuple[Tuple, Tuple[int, ...]]


def _rank(signatures: Sequence) -> List[int]:
    index = {s: i for i, s in enumerate(sorted(set(signatures)))}
    return [index[s] for s in signatures]


def _refine(colors: List[int], adj: Adjacency) -> List[int]:
    """Refine until the number of cells stops growing"""
    while True:
        signatures = [(colors[v], tuple(sorted((colors[w], b) for w, b in adj[v])))
                      for v in range(len(colors))]
        refined = _rank(signatures)
        if len(set(refined)) == len(set(colors)):
            return refined
        colors = refined


def _are_twins(u: int, v: int, edges: np.ndarray) -> bool:
    """Swapping u and v is an automorphism (labels already agree)"""
    mask = np.ones(len(edges), dtype=bool)
    mask[[u, v]] = False
    return bool(np.array_equal(edges[u, mask], edges[v, mask]))


class _Search:
    def __init__(self, labels: Sequence, edges: np.ndarray):
        self.labels = list(labels)
        self.edges = edges
        n = len(self.labels)
        self.adj: Adjacency = [[(int(w), int(edges[v, w])) for w in np.nonzero(edges[v])[0]] for v in range(n)]
        self.best: Optional[Tuple[CanonicalKey, List[int]]] = None

    def _serialize(self, order: List[int]) -> CanonicalKey:
        labels = tuple(self.labels[v] for v in order)
        permuted = self.edges[np.ix_(order, order)]
        upper = tuple(int(x) for x in permuted[np.triu_indices(len(order), k=1)])
        return labels, upper

    def run(self, colors: List[int]) -> None:
        colors = _refine(colors, self.adj)
        n = len(colors)
        if len(set(colors)) == n:
            order = sorted(range(n), key=lambda v: colors[v])
            key = self._serialize(order)
            if self.best is None or key < self.best[0]:
                self.best = (key, order)
            return

        counts = Counter(colors)
        target = min(c for c, k in counts.items() if k > 1)
        explored: List[int] = []
        for v in (u for u in range(n) if colors[u] == target):
            if any(_are_twins(v, r, self.edges) for r in explored):
                continue
            explored.append(v)
            individualized = [2 * c + (1 if c == target and u != v else 0) for u, c in enumerate(colors)]
            self.run(individualized)


def canonical_form(node_labels: Sequence, edge_matrix: np.ndarray) -> Tuple[CanonicalKey, List[int]]:
    """
    Canonical serialization and atom order of a labelled graph.

    Args:
        node_labels: One comparable label per node (all of the same type)
        edge_matrix: n x n symmetric ints, 0 where there is no edge

    Returns:
        (key, order) where order[p] is the original index placed at position p
    """
    edges = np.asarray(edge_matrix, dtype=np.int64)
    n = len(node_labels)
    if n == 0:
        return ((), ()), []
    search = _Search(node_labels, edges)
    search.run(_rank(list(node_labels)))
    return search.best


def _encode(key: CanonicalKey) -> Certificate:
    labels, upper = key
    return Certificate(json.dumps([len(labels), list(labels), list(upper)], separators=(",", ":")).encode())


def certificate_from_labels(node_labels: Sequence, edge_matrix: np.ndarray) -> Certificate:
    """Certificate of a bare labelled graph; numpy scalar labels are taken as their Python values"""
    labels = [label.item() if isinstance(label, np.generic) else label for label in node_labels]
    key, _ = canonical_form(labels, edge_matrix)
    return _encode(key)


def _graph_labels(G: MolecularGraph) -> List[str]:
    return [atom.label for atom in G.atoms()]


def canonical_certificate(G: MolecularGraph) -> Certificate:
    """Certificate of G; equal for G and every relabelling of G"""
    return _cached_certificate(_graph_key(G))


def canonical_order(G: MolecularGraph) -> List[int]:
    _, order = canonical_form(_graph_labels(G), G.bond_type_matrix())
    return order


def _graph_key(G: MolecularGraph) -> Tuple[Tuple[str, ...], bytes, int]:
    edges = G.bond_type_matrix()
    return tuple(_graph_labels(G)), edges.astype(np.int8).tobytes(), G.n


@lru_cache(maxsize=65536)
def _cached_certificate(key: Tuple[Tuple[str, ...], bytes, int]) -> Certificate:
    labels, edge_bytes, n = key
    edges = np.frombuffer(edge_bytes, dtype=np.int8).reshape(n, n)
    return certificate_from_labels(labels, edges)
