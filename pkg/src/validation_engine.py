"""
Validation Engine
=================

Decides whether a generated (A, X, W) encoding is a valid molecule.

Checks run level by level: a broken encoding is rejected before any
chemistry is looked at; otherwise valence, aromaticity and connectivity
problems are all collected, each pinned to the atoms involved.
"""

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent))

from graph_core import EncodingError, GraphError, MolecularGraph, validate
from validators.ring_rules import connected_components, non_cyclic_aromatic_bonds
from validators.valence_rules import ValenceTable, half_bond_sums


class ValidationLevel(Enum):
    """Levels of validation, in the order they are checked"""
    ENCODING = "encoding"          # (A, X, W) tensor invariants
    VALENCE = "valence"            # bond-order sum + H per atom
    AROMATICITY = "aromaticity"    # aromatic bonds on aromatic cycles
    CONNECTIVITY = "connectivity"  # one connected component


LEVEL_ORDER = list(ValidationLevel)


@dataclass(frozen=True)
class Violation:
    """
    One broken rule.

    `where` holds atom indices for the chemistry levels and the offending
    tensor index for encoding errors. `allowed` lists the valences a
    failing atom could have had.
    """
    level: ValidationLevel
    rule: str
    message: str
    where: Tuple[int, ...] = ()
    allowed: FrozenSet[int] = frozenset()


@dataclass
class ValidationResult:
    """Violations found in one graph"""
    n_atoms: int
    violations: List[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def levels(self) -> List[ValidationLevel]:
        return sorted({v.level for v in self.violations}, key=LEVEL_ORDER.index)

    def atoms_at(self, level: ValidationLevel) -> List[int]:
        return sorted({i for v in self.violations if v.level == level for i in v.where})

    def __str__(self):
        if self.passed:
            return f"valid molecule ({self.n_atoms} atoms)"
        parts = []
        for level in self.levels:
            where = self.atoms_at(level) if level != ValidationLevel.ENCODING else []
            parts.append(f"{level.value} at atoms {where}" if where else level.value)
        return "invalid: " + "; ".join(parts)


class ValidationEngine:
    """
    Validity predicate for molecular graphs.

    A molecule is valid when its encoding is well formed, every atom is
    saturated according to the valence table, every aromatic bond lies on an
    all-aromatic cycle and the graph is connected.
    """

    def __init__(self, table: Optional[ValenceTable] = None):
        """
        Args:
            table: Valence table (defaults to the standard C/N/O/F table)
        """
        self.table = table or ValenceTable.default()
        self.molecules = 0
        self.valid = 0
        self.atoms_checked = 0
        self.by_level: Counter = Counter()
        self.valence_by_element: Counter = Counter()

    def validate(self, graph: MolecularGraph) -> ValidationResult:
        """
        Validate a molecular graph against all constraints

        Returns:
            ValidationResult listing every violation (empty when valid)
        """
        result = ValidationResult(graph.n, self._violations(graph))
        self.molecules += 1
        self.atoms_checked += graph.n
        self.valid += result.passed
        self.by_level.update(result.levels)
        for v in result.violations:
            if v.level == ValidationLevel.VALENCE:
                self.valence_by_element[graph.atom(v.where[0]).element] += 1
        return result

    def is_valid(self, graph: MolecularGraph) -> bool:
        """Validity without touching the counters"""
        return not self._violations(graph)

    def _violations(self, graph: MolecularGraph) -> List[Violation]:
        encoding = self._check_encoding(graph)
        if encoding:
            return encoding
        return self._check_valence(graph) + self._check_aromaticity(graph) + self._check_connectivity(graph)

    def _check_encoding(self, graph: MolecularGraph) -> List[Violation]:
        try:
            validate(graph)
        except EncodingError as e:
            return [Violation(ValidationLevel.ENCODING, type(e).__name__, str(e), tuple(e.indices))]
        except GraphError as e:
            return [Violation(ValidationLevel.ENCODING, type(e).__name__, str(e))]
        return []

    def _check_valence(self, graph: MolecularGraph) -> List[Violation]:
        out = []
        sums = half_bond_sums(graph)
        for i, atom in enumerate(graph.atoms()):
            ok, message = self.table.check_atom(atom, int(sums[i]))
            if not ok:
                out.append(Violation(ValidationLevel.VALENCE, atom.label, message, (i,),
                                     self.table.valences(atom.element, atom.formal_charge)))
        return out

    def _check_aromaticity(self, graph: MolecularGraph) -> List[Violation]:
        return [Violation(ValidationLevel.AROMATICITY, "aromatic-bridge",
                          f"Aromatic bond {i}-{j} is not on an all-aromatic cycle", (i, j))
                for i, j in non_cyclic_aromatic_bonds(graph)]

    def _check_connectivity(self, graph: MolecularGraph) -> List[Violation]:
        if graph.n == 0:
            return [Violation(ValidationLevel.CONNECTIVITY, "empty", "A molecule needs at least one atom")]
        components = connected_components(graph.n, [(i, j) for i, j, _ in graph.bonds()])
        if len(components) == 1:
            return []
        # atoms outside the largest fragment (ties go to the lowest-numbered one)
        main = max(components, key=len)
        stray = tuple(i for c in components if c is not main for i in c)
        return [Violation(ValidationLevel.CONNECTIVITY, "fragments",
                          f"{len(components)} fragments; atoms {list(stray)} are off the largest one", stray)]

    def get_stats(self) -> Dict[str, Any]:
        """Validity rate, failing levels and which elements break valence"""
        return {
            "molecules": self.molecules,
            "valid": self.valid,
            "validity": 100.0 * self.valid / self.molecules if self.molecules else None,
            "atoms_checked": self.atoms_checked,
            "invalid_by_level": {level.value: self.by_level[level] for level in LEVEL_ORDER},
            "valence_failures_by_element": dict(sorted(self.valence_by_element.items())),
        }
