"""
Valence Rules
=============

Allowed total bond-order sums per (element, formal charge).

Bond orders count single=1, double=2, triple=3, aromatic=1.5. Sums are kept
in half units (twice the bond order) so that comparisons stay exact.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import json
from pathlib import Path

import numpy as np

from graph_core import AtomDescriptor, AtomVocab, MolecularGraph


# Twice the bond order of each W channel (single, double, triple, aromatic)
HALF_ORDERS = np.array([2, 4, 6, 3], dtype=np.int64)

DEFAULT_VALENCES: Dict[Tuple[str, int], Tuple[int, ...]] = {
    ("C", 0): (4,),
    ("N", 0): (3,),
    ("N", 1): (4,),
    ("N", -1): (2,),
    ("O", 0): (2,),
    ("O", -1): (1,),
    ("O", 1): (3,),
    ("F", 0): (1,),
}


@dataclass
class ValenceTable:
    """
    Maps (element, formal_charge) to the set of allowed valences.

    An atom is saturated when its bond-order sum plus attached hydrogens
    lands exactly on one of these values.
    """
    allowed: Dict[Tuple[str, int], FrozenSet[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.allowed = {key: frozenset(values) for key, values in self.allowed.items()}
        for key, values in self.allowed.items():
            if not values or min(values) <= 0:
                raise ValueError(f"Allowed valences for {key} must be positive and nonempty")

    @classmethod
    def default(cls) -> "ValenceTable":
        return cls(dict(DEFAULT_VALENCES))

    @classmethod
    def from_file(cls, path: Path) -> "ValenceTable":
        """Load from JSON of the form [["N", 1, [4]], ...]"""
        with open(path, "r", encoding="utf-8") as f:
            rows = json.load(f)
        return cls({(element, int(charge)): tuple(values) for element, charge, values in rows})

    def has_entry(self, element: str, charge: int) -> bool:
        return (element, charge) in self.allowed

    def valences(self, element: str, charge: int) -> FrozenSet[int]:
        return self.allowed.get((element, charge), frozenset())

    def covers(self, vocab: AtomVocab) -> List[AtomDescriptor]:
        """Vocabulary entries with no valence entry (empty when the table covers vocab)"""
        return [d for d in vocab if not self.has_entry(d.element, d.formal_charge)]

    def implicit_hydrogens(self, element: str, charge: int, half_sum: int) -> Optional[int]:
        """
        SMILES implicit-H rule: fill up to the smallest allowed valence that
        is at least the current bond-order sum. None when the sum exceeds
        every allowed valence.
        """
        for valence in sorted(self.valences(element, charge)):
            if 2 * valence >= half_sum:
                return (2 * valence - half_sum) // 2
        return None

    def max_valence(self, element: str, charge: int) -> Optional[int]:
        values = self.valences(element, charge)
        return max(values) if values else None

    def check_atom(self, atom: AtomDescriptor, half_sum: int) -> Tuple[bool, Optional[str]]:
        """
        Check one atom's saturation

        Returns:
            (is_valid, error_message)
        """
        values = self.valences(atom.element, atom.formal_charge)
        if not values:
            return (False, f"No valence entry for {atom.element} with charge {atom.formal_charge:+d}")
        total = half_sum + 2 * atom.explicit_h
        if total % 2 == 0 and total // 2 in values:
            return (True, None)
        return (False, f"{atom.label} has bond-order sum {half_sum / 2:g} + {atom.explicit_h} H "
                       f"= {total / 2:g}; allowed: {', '.join(str(v) for v in sorted(values))}")

    def get_stats(self) -> Dict:
        return {
            "entries": len(self.allowed),
            "elements": sorted({element for element, _ in self.allowed}),
        }


def half_bond_sums(G: MolecularGraph) -> np.ndarray:
    """Per-node bond-order sum in half units"""
    return (G.W.astype(np.int64) @ HALF_ORDERS).sum(axis=1)
