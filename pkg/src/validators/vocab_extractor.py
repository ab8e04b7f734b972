"""
Vocab Extractor - Build the Atom Vocabulary from a Corpus
=========================================================

Converts parsed training molecules into the AtomVocab (columns of X) and
checks it against the valence table.
"""

from collections import Counter
from typing import Any, Dict, Iterable, List, Optional, Sequence

from graph_core import QM9_ATOM_TYPES, QM9_ELEMENTS, AtomVocab, MolecularGraph

try:
    from .valence_rules import ValenceTable
except ImportError:
    # Running as script
    from valence_rules import ValenceTable


class VocabExtractor:
    """
    Extract the atom vocabulary from training molecules
    """

    def __init__(self, molecules: Iterable[MolecularGraph], elements: Sequence[str] = QM9_ELEMENTS,
                 table: Optional[ValenceTable] = None):
        """
        Args:
            molecules: Parsed molecules (each with its own vocabulary)
            elements: Configured element set
            table: Valence table the vocabulary must be covered by
        """
        self.elements = tuple(elements)
        self.table = table or ValenceTable.default()
        self.counts: Counter = Counter()
        for graph in molecules:
            self.counts.update(graph.atoms())

    def extract_vocab(self) -> AtomVocab:
        """Sorted distinct descriptors seen in the corpus"""
        return AtomVocab.from_corpus(self.counts, self.elements)

    def validate_rules(self) -> List[str]:
        """
        Problems with the extracted vocabulary

        Returns:
            Empty list when every descriptor has a valence entry and belongs
            to the configured element set
        """
        problems = []
        for descriptor in sorted(self.counts):
            if descriptor.element not in self.elements:
                problems.append(f"{descriptor.label}: element outside {''.join(self.elements)}")
            elif not self.table.has_entry(descriptor.element, descriptor.formal_charge):
                problems.append(f"{descriptor.label}: no valence entry")
        return problems

    def check_type_count(self, expected: int = QM9_ATOM_TYPES) -> Optional[str]:
        """Warning text when the vocabulary size differs from `expected`"""
        size = len(self.counts)
        if size != expected:
            return f"Vocabulary has {size} atom types, expected {expected}"
        return None

    def get_stats(self) -> Dict[str, Any]:
        """Get statistics about the extracted vocabulary"""
        by_element = Counter()
        charged = 0
        for descriptor, count in self.counts.items():
            by_element[descriptor.element] += count
            if descriptor.formal_charge != 0:
                charged += count
        return {
            "atom_types": len(self.counts),
            "atoms": sum(self.counts.values()),
            "atoms_by_element": dict(sorted(by_element.items())),
            "charged_atoms": charged,
            "most_common": [(d.label, c) for d, c in self.counts.most_common(5)],
        }
