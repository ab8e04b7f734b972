"""
Ring Rules
==========

Structural checks on the skeleton: connectivity, ring (non-bridge) edges and
the aromatic-cycle rule. Aromaticity is purely structural here: an aromatic
bond must lie on a cycle made only of aromatic bonds. No electron counting.
"""

from typing import Iterable, List, Set, Tuple

import networkx as nx

from graph_core import BondType, MolecularGraph


Edge = Tuple[int, int]


def skeleton_graph(n: int, edges: Iterable[Edge]) -> nx.Graph:
    """Undirected networkx graph on nodes 0..n-1"""
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    graph.add_edges_from(edges)
    return graph


def connected_components(n: int, edges: Iterable[Edge]) -> List[List[int]]:
    """Components as sorted node lists, ordered by their smallest node"""
    return sorted(sorted(c) for c in nx.connected_components(skeleton_graph(n, edges)))


def bridges(n: int, edges: Iterable[Edge]) -> Set[Edge]:
    """Edges (i < j) whose removal disconnects their endpoints"""
    return {(min(i, j), max(i, j)) for i, j in nx.bridges(skeleton_graph(n, edges))}


def ring_edges(n: int, edges: Iterable[Edge]) -> Set[Edge]:
    edges = [(min(i, j), max(i, j)) for i, j in edges]
    return set(edges) - bridges(n, edges)


def is_connected(G: MolecularGraph) -> bool:
    if G.n == 0:
        return False
    return nx.is_connected(skeleton_graph(G.n, [(i, j) for i, j, _ in G.bonds()]))


def non_cyclic_aromatic_bonds(G: MolecularGraph) -> List[Edge]:
    """Aromatic bonds that do not lie on an all-aromatic cycle"""
    aromatic = [(i, j) for i, j, bond in G.bonds() if bond == BondType.AROMATIC]
    if not aromatic:
        return []
    return sorted(bridges(G.n, aromatic))
