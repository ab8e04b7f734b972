"""Validity rule subsystem"""
from .valence_rules import ValenceTable, half_bond_sums
from .ring_rules import (bridges, connected_components, is_connected, non_cyclic_aromatic_bonds, ring_edges,
                         skeleton_graph)
from .vocab_extractor import VocabExtractor

__all__ = ['ValenceTable', 'half_bond_sums', 'bridges', 'connected_components', 'is_connected',
           'non_cyclic_aromatic_bonds', 'ring_edges', 'skeleton_graph', 'VocabExtractor']
