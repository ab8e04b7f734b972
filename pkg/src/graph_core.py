"""
Graph Core
==========

Value types for attributed molecular graphs in the (A, X, W) encoding:

- A: n x n binary skeleton (undirected, no self loops)
- X: n x k one-hot node attributes over an AtomVocab
- W: n x n x 4 one-hot bond types, zero vector where there is no edge

plus permutation machinery and structural validation.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import json

import numpy as np


QM9_ELEMENTS: Tuple[str, ...] = ("C", "N", "O", "F")
QM9_ATOM_TYPES = 21

MAX_CHARGE = 2
MAX_HYDROGENS = 4


class BondType(IntEnum):
    """Channel order of W"""
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def order(self) -> float:
        return BOND_ORDERS[self]

    @property
    def symbol(self) -> str:
        return "-=#:"[self]


BOND_ORDERS: Tuple[float, ...] = (1.0, 2.0, 3.0, 1.5)
N_BOND_TYPES = len(BondType)


# Errors

class GraphError(Exception):
    """Base class for graph encoding errors"""


class SizeMismatch(GraphError):
    def __init__(self, message: str, expected: Optional[int] = None, got: Optional[int] = None):
        super().__init__(message)
        self.expected = expected
        self.got = got


class IndexOutOfRange(GraphError, IndexError):
    def __init__(self, index: int, n: int):
        super().__init__(f"Node index {index} out of range for graph with {n} nodes")
        self.index = index
        self.n = n


class EncodingError(GraphError):
    """An (A, X, W) invariant is violated at `indices`"""

    def __init__(self, message: str, indices: Tuple[int, ...] = ()):
        super().__init__(f"{type(self).__name__} at {indices}: {message}")
        self.indices = indices


class NonBinaryEntry(EncodingError):
    pass


class SelfLoop(EncodingError):
    pass


class AsymmetricA(EncodingError):
    pass


class NonOneHotRow(EncodingError):
    pass


class EdgeAttrMismatch(EncodingError):
    pass


class AsymmetricW(EncodingError):
    pass


# Atom types

@dataclass(frozen=True, order=True)
class AtomDescriptor:
    """A heavy atom with its formal charge and attached hydrogen count"""
    element: str
    formal_charge: int = 0
    explicit_h: int = 0

    def __post_init__(self):
        if not (isinstance(self.element, str) and self.element[:1].isupper()):
            raise ValueError(f"Invalid element symbol {self.element!r}")
        if not -MAX_CHARGE <= self.formal_charge <= MAX_CHARGE:
            raise ValueError(f"formal_charge {self.formal_charge} outside [-{MAX_CHARGE}, {MAX_CHARGE}]")
        if not 0 <= self.explicit_h <= MAX_HYDROGENS:
            raise ValueError(f"explicit_h {self.explicit_h} outside [0, {MAX_HYDROGENS}]")

    @property
    def label(self) -> str:
        """Ordering-independent text label, e.g. 'N+1H4'"""
        return f"{self.element}{self.formal_charge:+d}H{self.explicit_h}"

    def to_list(self) -> list:
        return [self.element, self.formal_charge, self.explicit_h]

    def __repr__(self):
        return f"Atom({self.label})"


class AtomVocab:
    """
    Ordered list of distinct atom descriptors; columns of X.

    Built from the training corpus so that corpora other than QM9 work.
    """

    def __init__(self, entries: Iterable[AtomDescriptor], elements: Sequence[str] = QM9_ELEMENTS):
        self.entries: Tuple[AtomDescriptor, ...] = tuple(entries)
        self.elements: Tuple[str, ...] = tuple(elements)
        self._index: Dict[AtomDescriptor, int] = {}
        for i, entry in enumerate(self.entries):
            if entry in self._index:
                raise ValueError(f"Duplicate vocabulary entry {entry}")
            if entry.element not in self.elements:
                raise ValueError(f"Element {entry.element} not in configured set {self.elements}")
            self._index[entry] = i

    @classmethod
    def from_corpus(cls, descriptors: Iterable[AtomDescriptor],
                    elements: Sequence[str] = QM9_ELEMENTS) -> "AtomVocab":
        """Sorted distinct descriptors; the order is stable for a given corpus"""
        return cls(sorted(set(descriptors)), elements)

    def index(self, descriptor: AtomDescriptor) -> int:
        try:
            return self._index[descriptor]
        except KeyError:
            raise KeyError(f"{descriptor} not in vocabulary") from None

    def __contains__(self, descriptor: AtomDescriptor) -> bool:
        return descriptor in self._index

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[AtomDescriptor]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> AtomDescriptor:
        return self.entries[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, AtomVocab) and self.entries == other.entries and self.elements == other.elements

    def __hash__(self):
        return hash((self.entries, self.elements))

    def __repr__(self):
        return f"AtomVocab({len(self)} types over {''.join(self.elements)})"

    def to_json(self) -> str:
        return json.dumps({"elements": list(self.elements),
                           "entries": [e.to_list() for e in self.entries]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AtomVocab":
        data = json.loads(text)
        return cls([AtomDescriptor(*e) for e in data["entries"]], data["elements"])


# Permutations

@dataclass(frozen=True)
class Permutation:
    """Bijection i -> mapping[i] on {0, ..., n-1}"""
    mapping: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mapping", tuple(int(m) for m in self.mapping))
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ValueError(f"Not a bijection: {self.mapping}")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(rng.permutation(n)))

    @property
    def size(self) -> int:
        return len(self.mapping)

    def __call__(self, i: int) -> int:
        return self.mapping[i]

    def compose(self, other: "Permutation") -> "Permutation":
        """self ∘ other, i.e. i -> self(other(i))"""
        if other.size != self.size:
            raise SizeMismatch("Cannot compose permutations of different sizes", self.size, other.size)
        return Permutation(tuple(self.mapping[j] for j in other.mapping))

    def inverse(self) -> "Permutation":
        inv = [0] * self.size
        for i, j in enumerate(self.mapping):
            inv[j] = i
        return Permutation(tuple(inv))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.int64)

    def permute_axes(self, array: np.ndarray, axes: int = 1) -> np.ndarray:
        """Move entry i of each of the first `axes` axes to position π(i)"""
        inv = self.inverse().as_array()
        out = np.asarray(array)
        for ax in range(axes):
            out = np.take(out, inv, axis=ax)
        return out


# The graph

def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.int8, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MolecularGraph:
    """The (A, X, W) triple; immutable after construction"""
    vocab: AtomVocab
    A: np.ndarray
    X: np.ndarray
    W: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(self.A))
        object.__setattr__(self, "X", _frozen(self.X))
        object.__setattr__(self, "W", _frozen(self.W))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_atoms(cls, vocab: AtomVocab, atoms: Sequence[AtomDescriptor],
                   bonds: Iterable[Tuple[int, int, BondType]]) -> "MolecularGraph":
        n = len(atoms)
        A = np.zeros((n, n), dtype=np.int8)
        X = np.zeros((n, len(vocab)), dtype=np.int8)
        W = np.zeros((n, n, N_BOND_TYPES), dtype=np.int8)
        for i, atom in enumerate(atoms):
            X[i, vocab.index(atom)] = 1
        for i, j, bond in bonds:
            A[i, j] = A[j, i] = 1
            W[i, j] = W[j, i] = 0
            W[i, j, int(bond)] = W[j, i, int(bond)] = 1
        return cls(vocab, A, X, W)

    def atoms(self) -> List[AtomDescriptor]:
        return [self.vocab[int(k)] for k in self.X.argmax(axis=1)]

    def atom(self, i: int) -> AtomDescriptor:
        return self.vocab[int(self.X[i].argmax())]

    def bonds(self) -> List[Tuple[int, int, BondType]]:
        """Edges as (i, j, type) with i < j in index order"""
        i_idx, j_idx = np.nonzero(np.triu(self.A, k=1))
        return [(int(i), int(j), BondType(int(self.W[i, j].argmax()))) for i, j in zip(i_idx, j_idx)]

    def neighbors(self, i: int) -> List[int]:
        return [int(j) for j in np.nonzero(self.A[i])[0]]

    def bond(self, i: int, j: int) -> Optional[BondType]:
        if not self.A[i, j]:
            return None
        return BondType(int(self.W[i, j].argmax()))

    def bond_type_matrix(self) -> np.ndarray:
        """n x n ints: 0 = no edge, 1 + BondType otherwise"""
        return np.where(self.A > 0, self.W.argmax(axis=2) + 1, 0).astype(np.int64)

    def with_vocab(self, vocab: AtomVocab) -> "MolecularGraph":
        """Re-encode X onto another vocabulary containing all of this graph's atoms"""
        return MolecularGraph.from_atoms(vocab, self.atoms(), self.bonds())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MolecularGraph):
            return NotImplemented
        return (self.vocab == other.vocab and np.array_equal(self.A, other.A)
                and np.array_equal(self.X, other.X) and np.array_equal(self.W, other.W))

    __hash__ = None

    def __repr__(self):
        return f"MolecularGraph(n={self.n}, bonds={len(self.bonds())})"


# Operations

def validate(G: MolecularGraph) -> None:
    """
    Check every encoding invariant of G.

    Raises the EncodingError subclass naming the first violated invariant
    (NonBinaryEntry, SelfLoop, AsymmetricA, NonOneHotRow, EdgeAttrMismatch,
    AsymmetricW) or SizeMismatch for inconsistent shapes.
    """
    A, X, W = G.A, G.X, G.W
    n = A.shape[0]
    if A.shape != (n, n):
        raise SizeMismatch(f"A has shape {A.shape}, expected square")
    if X.shape != (n, len(G.vocab)):
        raise SizeMismatch(f"X has shape {X.shape}, expected {(n, len(G.vocab))}")
    if W.shape != (n, n, N_BOND_TYPES):
        raise SizeMismatch(f"W has shape {W.shape}, expected {(n, n, N_BOND_TYPES)}")

    for array, name in ((A, "A"), (X, "X"), (W, "W")):
        bad = np.argwhere((array != 0) & (array != 1))
        if len(bad):
            raise NonBinaryEntry(f"{name} entry is not 0/1", tuple(int(v) for v in bad[0]))

    diag = np.nonzero(np.diagonal(A))[0]
    if len(diag):
        raise SelfLoop("A has a nonzero diagonal entry", (int(diag[0]), int(diag[0])))

    asym = np.argwhere(A != A.T)
    if len(asym):
        raise AsymmetricA("A[i,j] != A[j,i]", tuple(int(v) for v in asym[0]))

    row_sums = X.sum(axis=1)
    bad_rows = np.nonzero(row_sums != 1)[0]
    if len(bad_rows):
        raise NonOneHotRow("X row is not one-hot", (int(bad_rows[0]),))

    w_sums = W.sum(axis=2)
    mismatch = np.argwhere(w_sums != A)
    if len(mismatch):
        i, j = (int(v) for v in mismatch[0])
        raise EdgeAttrMismatch(f"A[i,j]={A[i, j]} but W[i,j] sums to {w_sums[i, j]}", (i, j))

    asym_w = np.argwhere((W != W.transpose(1, 0, 2)).any(axis=2))
    if len(asym_w):
        raise AsymmetricW("W[i,j] != W[j,i]", tuple(int(v) for v in asym_w[0]))


def apply_permutation(G: MolecularGraph, pi: Permutation) -> MolecularGraph:
    """G^π: node i of G becomes node π(i)"""
    if pi.size != G.n:
        raise SizeMismatch(f"Permutation of size {pi.size} applied to graph with {G.n} nodes", G.n, pi.size)
    return MolecularGraph(G.vocab, pi.permute_axes(G.A, 2), pi.permute_axes(G.X, 1), pi.permute_axes(G.W, 2))


NodeTuple = Tuple[Tuple[int, ...], Tuple[Tuple[int, ...], ...]]


def node_tuple(G: MolecularGraph, i: int) -> NodeTuple:
    """(x_i, sorted multiset {w_ij : j != i}); zero vectors stand for non-neighbors"""
    if not 0 <= i < G.n:
        raise IndexOutOfRange(i, G.n)
    x = tuple(int(v) for v in G.X[i])
    edges = sorted(tuple(int(v) for v in G.W[i, j]) for j in range(G.n) if j != i)
    return x, tuple(edges)
