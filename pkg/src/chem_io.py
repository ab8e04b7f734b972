"""
Chemistry I/O
=============

SMILES-subset parsing and writing plus the validity predicate used by the
metrics. Supported grammar:

- organic-subset atoms C N O F and aromatic c n o
- bracket atoms with H count and charge, e.g. [NH4+], [O-], [nH]
- bond symbols - = # :
- ring closures (digits and %nn) and parenthesized branches

Implicit hydrogens on organic-subset atoms fill up to the smallest allowed
valence. An unmarked bond between two aromatic atoms is aromatic when it lies
on a ring, single otherwise.
"""

from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import re
from pathlib import Path

from canonical import canonical_order
from graph_core import QM9_ELEMENTS, AtomDescriptor, AtomVocab, BondType, MolecularGraph, validate
from validation_engine import ValidationEngine
from validators.ring_rules import connected_components, ring_edges
from validators.valence_rules import ValenceTable, half_bond_sums


AROMATIC_SYMBOLS = {"c": "C", "n": "N", "o": "O"}
BOND_SYMBOLS = {"-": BondType.SINGLE, "=": BondType.DOUBLE, "#": BondType.TRIPLE, ":": BondType.AROMATIC}
# Organic-subset symbols outside our element set, recognised so they can be named
OTHER_ORGANIC = ("Cl", "Br", "B", "P", "S", "I")

_BRACKET = re.compile(r"^(?P<symbol>[A-Z][a-z]?|[a-z])(?P<h>H(?P<hcount>\d)?)?(?P<charge>\+\+|--|[+-]\d?)?$")


# Errors

class SmilesError(Exception):
    """Base class for SMILES errors; `position` indexes the input string"""

    def __init__(self, message: str, position: Optional[int] = None):
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}")
        self.position = position


class SmilesSyntaxError(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnclosedBranch(SmilesError):
    pass


class ValenceOverflow(SmilesError):
    pass


class UnsupportedGraph(SmilesError):
    pass


# Parsing

class _ParsedAtom:
    __slots__ = ("element", "aromatic", "charge", "hcount", "position")

    def __init__(self, element: str, aromatic: bool, position: int,
                 charge: int = 0, hcount: Optional[int] = None):
        self.element = element
        self.aromatic = aromatic
        self.charge = charge
        self.hcount = hcount  # None for organic-subset atoms
        self.position = position


class _SmilesParser:
    def __init__(self, text: str, elements: Sequence[str]):
        self.text = text
        self.elements = tuple(elements)
        self.atoms: List[_ParsedAtom] = []
        # (i, j, BondType or None for an unmarked bond)
        self.bonds: List[Tuple[int, int, Optional[BondType]]] = []
        self.bonded: set = set()

    def _element(self, symbol: str, position: int) -> Tuple[str, bool]:
        if symbol in AROMATIC_SYMBOLS:
            element, aromatic = AROMATIC_SYMBOLS[symbol], True
        elif symbol[0].isupper():
            element, aromatic = symbol, False
        else:
            raise UnknownElement(f"Unsupported aromatic atom '{symbol}'", position)
        if element not in self.elements:
            raise UnknownElement(f"Element {element} is not in {''.join(self.elements)}", position)
        return element, aromatic

    def _bond(self, i: int, j: int, bond: Optional[BondType], position: int) -> None:
        key = (min(i, j), max(i, j))
        if i == j or key in self.bonded:
            raise SmilesSyntaxError(f"Duplicate or self bond between atoms {i} and {j}", position)
        self.bonded.add(key)
        self.bonds.append((i, j, bond))

    def parse(self) -> None:
        text = self.text
        prev: Optional[int] = None
        pending: Optional[BondType] = None
        pending_pos = 0
        branches: List[Tuple[int, int]] = []
        rings: Dict[int, Tuple[int, Optional[BondType], int]] = {}
        i = 0

        while i < len(text):
            ch = text[i]

            if ch == "(":
                if prev is None:
                    raise SmilesSyntaxError("Branch opened before any atom", i)
                if pending is not None:
                    raise SmilesSyntaxError("Bond symbol before '('", pending_pos)
                branches.append((prev, i))
                i += 1
                continue

            if ch == ")":
                if not branches:
                    raise SmilesSyntaxError("Unmatched ')'", i)
                if pending is not None:
                    raise SmilesSyntaxError("Dangling bond symbol", pending_pos)
                prev, _ = branches.pop()
                i += 1
                continue

            if ch in BOND_SYMBOLS:
                if prev is None or pending is not None:
                    raise SmilesSyntaxError(f"Unexpected bond symbol '{ch}'", i)
                pending, pending_pos = BOND_SYMBOLS[ch], i
                i += 1
                continue

            if ch.isdigit() or ch == "%":
                if prev is None:
                    raise SmilesSyntaxError("Ring closure before any atom", i)
                if ch == "%":
                    digits = text[i + 1:i + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        raise SmilesSyntaxError("Expected two digits after '%'", i)
                    number, width = int(digits), 3
                else:
                    number, width = int(ch), 1
                if number in rings:
                    other, open_bond, _ = rings.pop(number)
                    if pending is not None and open_bond is not None and pending != open_bond:
                        raise SmilesSyntaxError(f"Conflicting bond symbols on ring {number}", i)
                    self._bond(other, prev, pending if pending is not None else open_bond, i)
                else:
                    rings[number] = (prev, pending, i)
                pending = None
                i += width
                continue

            if ch == "[":
                close = text.find("]", i)
                if close == -1:
                    raise SmilesSyntaxError("Unterminated bracket atom", i)
                match = _BRACKET.match(text[i + 1:close])
                if match is None:
                    raise SmilesSyntaxError(f"Unsupported bracket atom '{text[i:close + 1]}'", i)
                element, aromatic = self._element(match.group("symbol"), i)
                hcount = 0
                if match.group("h"):
                    hcount = int(match.group("hcount")) if match.group("hcount") else 1
                charge_text = match.group("charge") or ""
                if charge_text in ("++", "--"):
                    charge = 2 if charge_text == "++" else -2
                elif charge_text:
                    magnitude = int(charge_text[1:]) if len(charge_text) > 1 else 1
                    charge = magnitude if charge_text[0] == "+" else -magnitude
                else:
                    charge = 0
                atom = _ParsedAtom(element, aromatic, i, charge, hcount)
                width = close + 1 - i
            elif ch.isalpha():
                two = text[i:i + 2]
                if two in OTHER_ORGANIC:
                    raise UnknownElement(f"Element {two} is not in {''.join(self.elements)}", i)
                if ch in OTHER_ORGANIC or ch.lower() in ("b", "p", "s"):
                    raise UnknownElement(f"Element {ch} is not in {''.join(self.elements)}", i)
                if not (ch.isupper() or ch in AROMATIC_SYMBOLS):
                    raise SmilesSyntaxError(f"Unexpected character '{ch}'", i)
                element, aromatic = self._element(ch, i)
                atom = _ParsedAtom(element, aromatic, i)
                width = 1
            elif ch == ".":
                raise SmilesSyntaxError("Multi-fragment molecules are not supported", i)
            else:
                raise SmilesSyntaxError(f"Unexpected character '{ch}'", i)

            self.atoms.append(atom)
            index = len(self.atoms) - 1
            if prev is not None:
                self._bond(prev, index, pending, pending_pos if pending is not None else i)
            elif self.atoms[:-1]:
                raise SmilesSyntaxError("Atom not connected to the molecule", i)
            prev, pending = index, None
            i += width

        if branches:
            raise UnclosedBranch("Branch opened here is never closed", branches[-1][1])
        if rings:
            number, (_, _, position) = next(iter(rings.items()))
            raise UnclosedRing(f"Ring {number} is never closed", position)
        if pending is not None:
            raise SmilesSyntaxError("Dangling bond symbol", pending_pos)
        if not self.atoms:
            raise SmilesSyntaxError("Empty SMILES", 0)

    def resolved_bonds(self) -> List[Tuple[int, int, BondType]]:
        """Assign unmarked bonds: aromatic between aromatic atoms on a ring, else single"""
        rings = ring_edges(len(self.atoms), [(i, j) for i, j, _ in self.bonds])
        out = []
        for i, j, bond in self.bonds:
            if bond is None:
                both_aromatic = self.atoms[i].aromatic and self.atoms[j].aromatic
                on_ring = (min(i, j), max(i, j)) in rings
                bond = BondType.AROMATIC if both_aromatic and on_ring else BondType.SINGLE
            out.append((i, j, bond))
        return out


def parse_smiles(text: str, vocab: Optional[AtomVocab] = None, table: Optional[ValenceTable] = None,
                 elements: Sequence[str] = QM9_ELEMENTS) -> MolecularGraph:
    """
    Parse one SMILES string into a MolecularGraph

    Args:
        text: SMILES in the supported grammar
        vocab: Vocabulary to encode X over; defaults to the molecule's own atom types
        table: Valence table for implicit hydrogens and overflow checks
        elements: Accepted element set

    Raises:
        SmilesSyntaxError, UnknownElement, UnclosedRing, UnclosedBranch, ValenceOverflow
    """
    table = table or ValenceTable.default()
    parser = _SmilesParser(text.strip(), elements)
    parser.parse()
    bonds = parser.resolved_bonds()

    half_sums = [0] * len(parser.atoms)
    for i, j, bond in bonds:
        half_sums[i] += int(2 * bond.order)
        half_sums[j] += int(2 * bond.order)

    descriptors = []
    for index, atom in enumerate(parser.atoms):
        if not table.has_entry(atom.element, atom.charge):
            raise UnknownElement(f"No valence entry for {atom.element} with charge {atom.charge:+d}", atom.position)
        half_sum = half_sums[index]
        if atom.hcount is None:
            hcount = table.implicit_hydrogens(atom.element, 0, half_sum)
            if hcount is None:
                raise ValenceOverflow(f"{atom.element} has bond-order sum {half_sum / 2:g}", atom.position)
        else:
            hcount = atom.hcount
            if half_sum + 2 * hcount > 2 * table.max_valence(atom.element, atom.charge):
                raise ValenceOverflow(f"{atom.element}{atom.charge:+d} has bond-order sum {half_sum / 2:g} "
                                      f"and {hcount} H", atom.position)
        try:
            descriptors.append(AtomDescriptor(atom.element, atom.charge, hcount))
        except ValueError as e:
            raise SmilesSyntaxError(str(e), atom.position) from None

    if vocab is None:
        vocab = AtomVocab.from_corpus(descriptors, elements)
    missing = [d for d in descriptors if d not in vocab]
    if missing:
        raise UnknownElement(f"Atom type {missing[0].label} is not in the vocabulary")
    return MolecularGraph.from_atoms(vocab, descriptors, bonds)


def read_smiles_file(path: Path) -> Iterator[Tuple[int, str]]:
    """(line number, SMILES) pairs; blank lines and '#' comments are skipped"""
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield line_no, line


# Writing

def _charge_text(charge: int) -> str:
    if charge == 0:
        return ""
    sign = "+" if charge > 0 else "-"
    return sign if abs(charge) == 1 else f"{sign}{abs(charge)}"


def write_smiles(G: MolecularGraph, table: Optional[ValenceTable] = None, allow_fragments: bool = False) -> str:
    """
    SMILES for G in canonical atom order

    Raises:
        UnsupportedGraph for empty graphs, and for disconnected graphs unless
        allow_fragments joins the components with '.'
    """
    validate(G)
    table = table or ValenceTable.default()
    if G.n == 0:
        raise UnsupportedGraph("Empty graph")

    bonds = G.bonds()
    components = connected_components(G.n, [(i, j) for i, j, _ in bonds])
    if len(components) > 1 and not allow_fragments:
        raise UnsupportedGraph(f"Graph has {len(components)} fragments")

    rank = {v: p for p, v in enumerate(canonical_order(G))}
    rings = ring_edges(G.n, [(i, j) for i, j, _ in bonds])
    aromatic = [any(G.bond(i, j) == BondType.AROMATIC for j in G.neighbors(i)) for i in range(G.n)]
    lowercase = [aromatic[i] and G.atom(i).element.lower() in AROMATIC_SYMBOLS for i in range(G.n)]
    half_sums = half_bond_sums(G)

    def bond_symbol(i: int, j: int) -> str:
        bond = G.bond(i, j)
        both_lower = lowercase[i] and lowercase[j]
        if bond == BondType.SINGLE:
            return "-" if both_lower else ""
        if bond == BondType.AROMATIC:
            return "" if both_lower and (min(i, j), max(i, j)) in rings else ":"
        return bond.symbol

    def atom_token(i: int) -> str:
        atom = G.atom(i)
        symbol = atom.element.lower() if lowercase[i] else atom.element
        implicit = table.implicit_hydrogens(atom.element, 0, int(half_sums[i])) if table.has_entry(atom.element, 0) else None
        if atom.formal_charge == 0 and implicit == atom.explicit_h:
            return symbol
        h = "" if atom.explicit_h == 0 else ("H" if atom.explicit_h == 1 else f"H{atom.explicit_h}")
        return f"[{symbol}{h}{_charge_text(atom.formal_charge)}]"

    def by_rank(vertices):
        return sorted(vertices, key=lambda v: rank[v])

    fragments = []
    for component in sorted(components, key=lambda c: min(rank[v] for v in c)):
        root = by_rank(component)[0]

        # pass 1: spanning tree and ring-closure edges
        children: Dict[int, List[int]] = {v: [] for v in component}
        closures: Dict[int, List[int]] = {v: [] for v in component}   # at the later atom
        openings: Dict[int, List[int]] = {v: [] for v in component}   # at the earlier atom
        visited = {root}
        seen_edges = set()
        stack = [(root, -1, iter(by_rank(G.neighbors(root))))]
        while stack:
            v, parent, neighbors = stack[-1]
            for w in neighbors:
                edge = (min(v, w), max(v, w))
                if w == parent or edge in seen_edges:
                    continue
                seen_edges.add(edge)
                if w in visited:
                    openings[w].append(v)
                    closures[v].append(w)
                    continue
                visited.add(w)
                children[v].append(w)
                stack.append((w, v, iter(by_rank(G.neighbors(w)))))
                break
            else:
                stack.pop()

        # pass 2: emit
        free_digits = list(range(1, 100))
        open_digits: Dict[Tuple[int, int], int] = {}

        def ring_label(d: int) -> str:
            return str(d) if d < 10 else f"%{d:02d}"

        def emit(v: int) -> str:
            out = [atom_token(v)]
            for w in closures[v]:
                digit = open_digits.pop((w, v))
                out.append(bond_symbol(v, w) + ring_label(digit))
                free_digits.append(digit)
                free_digits.sort()
            for w in openings[v]:
                digit = free_digits.pop(0)
                open_digits[(v, w)] = digit
                out.append(ring_label(digit))
            kids = children[v]
            for k, child in enumerate(kids):
                piece = bond_symbol(v, child) + emit(child)
                out.append(piece if k == len(kids) - 1 else f"({piece})")
            return "".join(out)

        fragments.append(emit(root))
    return ".".join(fragments)


# Validity

def check_valence(G: MolecularGraph, table: Optional[ValenceTable] = None) -> bool:
    """
    Validity predicate: every atom saturated, every aromatic bond on an
    all-aromatic cycle, one connected component.
    """
    return ValidationEngine(table).is_valid(G)
