"""
Generation Metrics
==================

Validity, uniqueness, novelty and the global valid-unique-novel rate.

Denominators are chained so that all = val * uniq * nov / 10^4 exactly:
    val  = |valid| / |generated|
    uniq = |distinct valid| / |valid|
    nov  = |distinct valid not in training| / |distinct valid|
    all  = |distinct valid novel| / |generated|
"""

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from canonical import Certificate, canonical_certificate
from graph_core import AtomVocab, BondType, MolecularGraph, N_BOND_TYPES
from validation_engine import ValidationEngine
from validators.valence_rules import ValenceTable


class MetricsError(Exception):
    pass


class EmptyInput(MetricsError):
    pass


def _percent(rate: Optional[Fraction]) -> Optional[float]:
    return None if rate is None else float(rate * 100)


@dataclass
class MetricsReport:
    generated: int
    valid: int
    unique: int
    novel: int
    invalid_by_level: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.novel <= self.unique <= self.valid <= self.generated:
            raise MetricsError(f"Inconsistent counts {self.generated}/{self.valid}/{self.unique}/{self.novel}")

    # exact rates in [0, 1]
    @property
    def val_rate(self) -> Fraction:
        return Fraction(self.valid, self.generated) if self.generated else Fraction(0)

    @property
    def uniq_rate(self) -> Optional[Fraction]:
        return Fraction(self.unique, self.valid) if self.valid else None

    @property
    def nov_rate(self) -> Optional[Fraction]:
        return Fraction(self.novel, self.unique) if self.unique else None

    @property
    def all_rate(self) -> Fraction:
        return Fraction(self.novel, self.generated) if self.generated else Fraction(0)

    # percentages
    @property
    def val(self) -> float:
        return _percent(self.val_rate)

    @property
    def uniq(self) -> Optional[float]:
        return _percent(self.uniq_rate)

    @property
    def nov(self) -> Optional[float]:
        return _percent(self.nov_rate)

    @property
    def all(self) -> float:
        return _percent(self.all_rate)

    @property
    def empty_valid_set(self) -> bool:
        return self.valid == 0

    def identity_holds(self) -> bool:
        """all = val * uniq * nov, exactly"""
        if self.valid == 0 or self.unique == 0:
            return self.novel == 0
        return self.all_rate == self.val_rate * self.uniq_rate * self.nov_rate

    def rows(self) -> List[tuple]:
        def fmt(x: Optional[float]) -> str:
            return "undefined" if x is None else f"{x:.1f}"
        return [("val", fmt(self.val), f"{self.valid}/{self.generated}"),
                ("uniq", fmt(self.uniq), f"{self.unique}/{self.valid}"),
                ("nov", fmt(self.nov), f"{self.novel}/{self.unique}"),
                ("all", fmt(self.all), f"{self.novel}/{self.generated}")]

    def render_table(self) -> str:
        rows = [("metric", "percent", "count")] + self.rows()
        widths = [max(len(r[k]) for r in rows) for k in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[k]) if k == 0 else cell.rjust(widths[k])
                                   for k, cell in enumerate(row)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        for level, count in sorted(self.invalid_by_level.items()):
            lines.append(f"invalid[{level}]: {count}")
        return "\n".join(lines)

    def render_kv(self) -> str:
        pairs = [("generated", self.generated), ("valid", self.valid), ("unique", self.unique),
                 ("novel", self.novel)]
        pairs += [(name, value) for name, value, _ in self.rows()]
        pairs += [(f"invalid_{level}", count) for level, count in sorted(self.invalid_by_level.items())]
        return "\n".join(f"{k}={v}" for k, v in pairs)

    def __repr__(self):
        return (f"MetricsReport(val={self.rows()[0][1]}, uniq={self.rows()[1][1]}, "
                f"nov={self.rows()[2][1]}, all={self.rows()[3][1]})")


def evaluate(generated: Sequence[Optional[MolecularGraph]], training_certificates: Set[Certificate],
             table: Optional[ValenceTable] = None) -> MetricsReport:
    """
    Metrics of a generated set against the training certificates

    `None` entries count as generated but invalid (unreadable outputs).

    Raises:
        EmptyInput when nothing was generated
    """
    if len(generated) == 0:
        raise EmptyInput("No generated molecules to evaluate")
    engine = ValidationEngine(table)
    invalid = Counter()
    distinct: Set[Certificate] = set()
    valid = 0
    for graph in generated:
        if graph is None:
            invalid["unreadable"] += 1
            continue
        result = engine.validate(graph)
        if not result.passed:
            invalid[result.levels[0].value] += 1
            continue
        valid += 1
        distinct.add(canonical_certificate(graph))
    novel = len(distinct - set(training_certificates))
    return MetricsReport(len(generated), valid, len(distinct), novel, dict(invalid))


def combined_rate(val: float, uniq: float, nov: float) -> float:
    """Global rate in percent from the three percentages"""
    return val * uniq * nov / 1e4


def random_assignment(A: np.ndarray, vocab: AtomVocab, rng: np.random.Generator) -> MolecularGraph:
    """Uniform atom types and bond types on a fixed skeleton"""
    A = np.asarray(A, dtype=np.int8)
    n = A.shape[0]
    X = np.eye(len(vocab), dtype=np.int8)[rng.integers(len(vocab), size=n)]
    W = np.zeros((n, n, N_BOND_TYPES), dtype=np.int8)
    for i, j in zip(*np.nonzero(np.triu(A, k=1))):
        bond = BondType(int(rng.integers(N_BOND_TYPES)))
        W[i, j, bond] = W[j, i, bond] = 1
    return MolecularGraph(vocab, A, X, W)


def baseline_random(skeletons: Sequence[np.ndarray], vocab: AtomVocab, rng: np.random.Generator,
                    samples: int, training_certificates: Iterable[Certificate] = (),
                    table: Optional[ValenceTable] = None) -> MetricsReport:
    """Untrained floor: random attributes on skeletons drawn from the data"""
    if not skeletons:
        raise EmptyInput("baseline_random needs at least one skeleton")
    if samples < 1:
        raise EmptyInput("baseline_random needs samples >= 1")
    graphs = [random_assignment(skeletons[int(rng.integers(len(skeletons)))], vocab, rng) for _ in range(samples)]
    return evaluate(graphs, set(training_certificates), table)
