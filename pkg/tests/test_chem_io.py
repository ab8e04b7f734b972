"""
Chemistry I/O Tests
===================

SMILES parsing, canonical writing and the validity predicate.
"""

import pytest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np
from hypothesis import given, settings, strategies as st

from canonical import canonical_certificate
from chem_io import (SmilesSyntaxError, UnclosedBranch, UnclosedRing, UnknownElement, UnsupportedGraph,
                     ValenceOverflow, check_valence, parse_smiles, read_smiles_file, write_smiles)
from conftest import random_molecule
from graph_core import AtomDescriptor, AtomVocab, BondType, MolecularGraph, Permutation, apply_permutation


# SUITE 1: Parsing

class TestParse:
    """Grammar coverage and implicit hydrogens"""

    def test_single_atom(self):
        """'C' is methane: one carbon with four hydrogens"""
        G = parse_smiles("C")
        assert G.n == 1
        assert G.atom(0) == AtomDescriptor("C", 0, 4)

    def test_branch_and_double_bond(self, acetic_acid):
        """CC(=O)O has one double and two single heavy-atom bonds"""
        bonds = sorted(b for _, _, b in acetic_acid.bonds())
        assert bonds == [BondType.SINGLE, BondType.SINGLE, BondType.DOUBLE]
        assert AtomDescriptor("O", 0, 1) in acetic_acid.atoms()
        assert AtomDescriptor("O", 0, 0) in acetic_acid.atoms()

    def test_triple_bond(self):
        """C#N: carbon keeps one hydrogen, nitrogen none"""
        G = parse_smiles("C#N")
        assert G.bond(0, 1) == BondType.TRIPLE
        assert G.atoms() == [AtomDescriptor("C", 0, 1), AtomDescriptor("N", 0, 0)]

    def test_ring_closure(self):
        """C1CC1 closes a three-membered ring"""
        G = parse_smiles("C1CC1")
        assert len(G.bonds()) == 3
        assert all(a.explicit_h == 2 for a in G.atoms())

    def test_aromatic_ring(self, benzene):
        """Lowercase ring atoms are joined by aromatic bonds"""
        assert all(b == BondType.AROMATIC for _, _, b in benzene.bonds())
        assert all(a == AtomDescriptor("C", 0, 1) for a in benzene.atoms())

    def test_bracket_atom_with_charge(self):
        """[NH4+] keeps its explicit hydrogens and charge"""
        G = parse_smiles("[NH4+]")
        assert G.atom(0) == AtomDescriptor("N", 1, 4)

    def test_two_digit_ring_label(self):
        """%10 works like a digit"""
        assert canonical_certificate(parse_smiles("C%10CC%10")) == canonical_certificate(parse_smiles("C1CC1"))

    def test_explicit_vocab(self, acetic_acid):
        """Parsing onto a given vocabulary encodes X over it"""
        vocab = AtomVocab(sorted(set(acetic_acid.atoms())) + [AtomDescriptor("F", 0, 0)])
        G = parse_smiles("CC(=O)O", vocab=vocab)
        assert G.vocab == vocab
        assert G.X.shape == (4, len(vocab))


# SUITE 2: Parse errors

class TestParseErrors:
    """Each malformed input names its error"""

    @pytest.mark.parametrize("text", ["Cl", "CBr", "S"])
    def test_unknown_element(self, text):
        """Elements outside C, N, O, F are rejected"""
        with pytest.raises(UnknownElement):
            parse_smiles(text)

    def test_unclosed_ring(self):
        """A ring digit without its partner"""
        with pytest.raises(UnclosedRing):
            parse_smiles("C1CC")

    def test_unclosed_branch(self):
        """An open parenthesis without its partner"""
        with pytest.raises(UnclosedBranch):
            parse_smiles("CC(C")

    def test_valence_overflow(self):
        """A five-bonded carbon overflows"""
        with pytest.raises(ValenceOverflow):
            parse_smiles("C(C)(C)(C)(C)C")

    @pytest.mark.parametrize("text", ["", "C)C", "C.C", "C=", "[C"])
    def test_syntax_errors(self, text):
        """Malformed strings are syntax errors"""
        with pytest.raises(SmilesSyntaxError):
            parse_smiles(text)

    def test_error_carries_position(self):
        """Errors report where parsing failed"""
        with pytest.raises(UnknownElement) as e:
            parse_smiles("CCCl")
        assert e.value.position == 2


# SUITE 3: Writing

class TestWrite:
    """Canonical output and round trips"""

    @pytest.mark.parametrize("smiles", ["C", "CC(=O)O", "c1ccccc1", "c1ccncc1", "OC1CC1", "C#CC#N",
                                        "FC(F)F", "[NH4+]", "Oc1ccccc1", "C1CCNCC1"])
    def test_round_trip_certificate(self, smiles):
        """parse(write(G)) is isomorphic to G"""
        G = parse_smiles(smiles)
        assert canonical_certificate(parse_smiles(write_smiles(G))) == canonical_certificate(G)

    def test_output_independent_of_labelling(self, rng):
        """Every relabelling of G writes the same string"""
        G = parse_smiles("OC(=O)c1ccccc1")
        expected = write_smiles(G)
        for _ in range(10):
            assert write_smiles(apply_permutation(G, Permutation.random(G.n, rng))) == expected

    def test_aromatic_written_lowercase(self, benzene):
        """Aromatic rings come back lowercase"""
        assert write_smiles(benzene) == "c1ccccc1"

    def test_disconnected_rejected(self):
        """Fragments need allow_fragments"""
        vocab = AtomVocab([AtomDescriptor("C", 0, 4)])
        G = MolecularGraph.from_atoms(vocab, [vocab[0], vocab[0]], [])
        with pytest.raises(UnsupportedGraph):
            write_smiles(G)
        assert write_smiles(G, allow_fragments=True) == "C.C"

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_random_molecules_round_trip(self, seed):
        """Random valid molecules with n <= 9 survive write then parse"""
        G = random_molecule(np.random.default_rng(seed))
        assert check_valence(G)
        assert canonical_certificate(parse_smiles(write_smiles(G))) == canonical_certificate(G)

    def test_round_trip_batch(self):
        """1,000 seeded molecules, aromatic rings and charged atoms included"""
        rng = np.random.default_rng(2024)
        molecules = [random_molecule(rng) for _ in range(1000)]
        assert any(BondType.AROMATIC in [b for _, _, b in G.bonds()] for G in molecules)
        assert any(a.formal_charge != 0 for G in molecules for a in G.atoms())
        for G in molecules:
            assert check_valence(G)
            assert canonical_certificate(parse_smiles(write_smiles(G))) == canonical_certificate(G)

    def test_charged_and_aromatic_round_trip(self):
        """A charged substituent on a pyridine ring"""
        G = parse_smiles("[NH3+]c1ccncc1[O-]")
        assert canonical_certificate(parse_smiles(write_smiles(G))) == canonical_certificate(G)


# SUITE 4: Validity predicate and files

class TestValidity:
    """check_valence and SMILES files"""

    def test_valid_molecules(self, acetic_acid, benzene):
        """Saturated connected molecules are valid"""
        assert check_valence(acetic_acid)
        assert check_valence(benzene)

    def test_wrong_hydrogen_count(self):
        """A carbon with too few hydrogens is invalid"""
        vocab = AtomVocab([AtomDescriptor("C", 0, 2)])
        G = MolecularGraph.from_atoms(vocab, [vocab[0]], [])
        assert not check_valence(G)

    def test_read_smiles_file(self, tmp_path):
        """Blank lines and comments are skipped, line numbers kept"""
        path = tmp_path / "mols.smi"
        path.write_text("# header\nC\n\nCC\n  # note\nCO\n")
        assert list(read_smiles_file(path)) == [(2, "C"), (4, "CC"), (6, "CO")]
