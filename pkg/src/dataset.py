"""
Molecule Dataset
================

Preprocessed training molecules: SMILES ingestion with per-line skip
reasons, grouping by node count for batching, and npz persistence.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple
from pathlib import Path

import numpy as np

from canonical import Certificate, canonical_certificate
from chem_io import SmilesError, parse_smiles
from graph_core import QM9_ELEMENTS, AtomVocab, BondType, MolecularGraph, SizeMismatch
from validation_engine import ValidationEngine
from validators.valence_rules import ValenceTable
from validators.vocab_extractor import VocabExtractor


class DatasetError(Exception):
    pass


@dataclass
class GraphBatch:
    """Same-size graphs stacked as float arrays"""
    A: np.ndarray   # (B, n, n)
    X: np.ndarray   # (B, n, k)
    W: np.ndarray   # (B, n, n, 4)

    @classmethod
    def from_graphs(cls, graphs: List[MolecularGraph]) -> "GraphBatch":
        if not graphs:
            raise DatasetError("Cannot batch zero graphs")
        sizes = {g.n for g in graphs}
        if len(sizes) != 1:
            raise SizeMismatch(f"Batch mixes node counts {sorted(sizes)}")
        return cls(A=np.stack([g.A for g in graphs]).astype(np.float64),
                   X=np.stack([g.X for g in graphs]).astype(np.float64),
                   W=np.stack([g.W for g in graphs]).astype(np.float64))

    @property
    def size(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass
class PreprocessReport:
    total_lines: int = 0
    kept: int = 0
    skipped: Counter = field(default_factory=Counter)
    skipped_lines: List[Tuple[int, str, str]] = field(default_factory=list)

    @property
    def skipped_count(self) -> int:
        return sum(self.skipped.values())

    @property
    def skip_fraction(self) -> float:
        return self.skipped_count / self.total_lines if self.total_lines else 0.0

    def summary(self) -> str:
        lines = [f"lines: {self.total_lines}", f"kept: {self.kept}", f"skipped: {self.skipped_count}"]
        lines += [f"  {reason}: {count}" for reason, count in sorted(self.skipped.items())]
        return "\n".join(lines)


class MoleculeDataset:
    """Molecules encoded over one shared vocabulary"""

    def __init__(self, vocab: AtomVocab, graphs: Iterable[MolecularGraph],
                 smiles: Optional[List[str]] = None):
        self.vocab = vocab
        self.graphs: List[MolecularGraph] = [g if g.vocab == vocab else g.with_vocab(vocab) for g in graphs]
        self.smiles = smiles
        self._by_size: Dict[int, List[int]] = {}
        for index, graph in enumerate(self.graphs):
            self._by_size.setdefault(graph.n, []).append(index)

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i: int) -> MolecularGraph:
        return self.graphs[i]

    def __iter__(self):
        return iter(self.graphs)

    def by_size(self) -> Dict[int, List[int]]:
        """Node count -> dataset indices"""
        return {n: list(indices) for n, indices in sorted(self._by_size.items())}

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> GraphBatch:
        """
        Draw a molecule uniformly, then fill the batch with molecules of its
        node count (with replacement)
        """
        if not self.graphs:
            raise DatasetError("Dataset is empty")
        anchor = self.graphs[int(rng.integers(len(self.graphs)))]
        pool = self._by_size[anchor.n]
        picks = rng.integers(len(pool), size=batch_size)
        return GraphBatch.from_graphs([self.graphs[pool[int(p)]] for p in picks])

    def skeletons(self) -> List[np.ndarray]:
        return [np.array(g.A) for g in self.graphs]

    def certificates(self) -> Set[Certificate]:
        return {canonical_certificate(g) for g in self.graphs}

    def get_stats(self) -> Dict:
        sizes = Counter(g.n for g in self.graphs)
        return {
            "molecules": len(self.graphs),
            "atom_types": len(self.vocab),
            "node_counts": dict(sorted(sizes.items())),
        }

    # Persistence

    def save(self, path: Path) -> None:
        sizes = np.array([g.n for g in self.graphs], dtype=np.int64)
        atoms = np.concatenate([g.X.argmax(axis=1) for g in self.graphs]) if self.graphs else np.zeros(0)
        bonds = [(k, i, j, int(b)) for k, g in enumerate(self.graphs) for i, j, b in g.bonds()]
        np.savez_compressed(
            path,
            sizes=sizes,
            atoms=np.asarray(atoms, dtype=np.int64),
            bonds=np.asarray(bonds, dtype=np.int64).reshape(-1, 4),
            vocab=np.array(self.vocab.to_json()),
        )

    @classmethod
    def load(cls, path: Path) -> "MoleculeDataset":
        try:
            with np.load(path, allow_pickle=False) as data:
                vocab = AtomVocab.from_json(str(data["vocab"]))
                sizes, atoms, bonds = data["sizes"], data["atoms"], data["bonds"]
        except (OSError, KeyError, ValueError) as e:
            raise DatasetError(f"Cannot read dataset {path}: {e}") from e
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        per_graph: Dict[int, List[Tuple[int, int, BondType]]] = {}
        for k, i, j, b in bonds:
            per_graph.setdefault(int(k), []).append((int(i), int(j), BondType(int(b))))
        graphs = []
        for k in range(len(sizes)):
            descriptors = [vocab[int(a)] for a in atoms[offsets[k]:offsets[k + 1]]]
            graphs.append(MolecularGraph.from_atoms(vocab, descriptors, per_graph.get(k, [])))
        return cls(vocab, graphs)


def preprocess_smiles(lines: Iterable[Tuple[int, str]], max_atoms: int = 9,
                      table: Optional[ValenceTable] = None,
                      elements=QM9_ELEMENTS) -> Tuple[MoleculeDataset, PreprocessReport]:
    """
    Parse, filter and encode SMILES lines

    Lines are skipped when they fail to parse, exceed `max_atoms` heavy atoms
    or are not valid molecules under the validity predicate.

    Returns:
        (dataset over the corpus vocabulary, report with skip reasons)
    """
    table = table or ValenceTable.default()
    engine = ValidationEngine(table)
    report = PreprocessReport()
    parsed: List[MolecularGraph] = []
    kept_smiles: List[str] = []

    def skip(line_no: int, text: str, reason: str) -> None:
        report.skipped[reason] += 1
        report.skipped_lines.append((line_no, text, reason))

    for line_no, text in lines:
        report.total_lines += 1
        try:
            graph = parse_smiles(text, table=table, elements=elements)
        except SmilesError as e:
            skip(line_no, text, type(e).__name__)
            continue
        if graph.n > max_atoms:
            skip(line_no, text, "TooManyAtoms")
            continue
        result = engine.validate(graph)
        if not result.passed:
            skip(line_no, text, f"Invalid:{result.levels[0].value}")
            continue
        parsed.append(graph)
        kept_smiles.append(text)

    report.kept = len(parsed)
    vocab = VocabExtractor(parsed, elements, table).extract_vocab()
    return MoleculeDataset(vocab, parsed, kept_smiles), report


def save_certificates(certificates: Iterable[Certificate], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for cert in sorted(certificates):
            f.write(cert.hex() + "\n")


def load_certificates(path: Path) -> Set[Certificate]:
    with open(path, "r", encoding="utf-8") as f:
        return {Certificate.from_hex(line) for line in f if line.strip()}


def save_vocab(vocab: AtomVocab, path: Path) -> None:
    Path(path).write_text(vocab.to_json(), encoding="utf-8")


def load_vocab(path: Path) -> AtomVocab:
    return AtomVocab.from_json(Path(path).read_text(encoding="utf-8"))
