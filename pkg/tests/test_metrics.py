"""
Metrics Tests
=============

Validity, uniqueness, novelty, the product identity and the random baseline.
"""

import pytest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np

from canonical import canonical_certificate
from chem_io import parse_smiles
from graph_core import AtomDescriptor, AtomVocab, MolecularGraph, validate
from metrics import EmptyInput, MetricsError, MetricsReport, baseline_random, combined_rate, evaluate, random_assignment


def disconnected():
    vocab = AtomVocab([AtomDescriptor("C", 0, 4)])
    return MolecularGraph.from_atoms(vocab, [vocab[0], vocab[0]], [])


# SUITE 1: Counting

class TestEvaluate:
    """Chained denominators over a generated set"""

    def test_counts(self):
        """Duplicates, invalid, unreadable and known molecules"""
        generated = [parse_smiles("CCO"), parse_smiles("OCC"), parse_smiles("CC"), disconnected(), None]
        report = evaluate(generated, {canonical_certificate(parse_smiles("CC"))})
        assert (report.generated, report.valid, report.unique, report.novel) == (5, 3, 2, 1)
        assert report.invalid_by_level == {"connectivity": 1, "unreadable": 1}
        assert report.val == pytest.approx(60.0)
        assert report.uniq == pytest.approx(200 / 3)
        assert report.nov == pytest.approx(50.0)
        assert report.all == pytest.approx(20.0)
        assert report.identity_holds()

    def test_training_molecules_are_not_novel(self, small_dataset):
        """Regenerating the training set gives nov = 0"""
        report = evaluate(list(small_dataset), small_dataset.certificates())
        assert report.val == 100.0
        assert report.novel == 0
        assert report.nov == 0.0

    def test_empty_valid_set(self):
        """uniq and nov are undefined without valid molecules"""
        report = evaluate([disconnected(), None], set())
        assert report.empty_valid_set
        assert report.uniq is None and report.nov is None
        assert report.all == 0.0
        assert "undefined" in report.render_table()

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            evaluate([], set())

    def test_inconsistent_counts(self):
        with pytest.raises(MetricsError):
            MetricsReport(generated=2, valid=3, unique=1, novel=0)


# SUITE 2: Identity and rendering

class TestIdentity:
    """all = val * uniq * nov / 10^4"""

    def test_combined_rate(self):
        """A published-style row: 78.5 / 53.9 / 62.0"""
        assert combined_rate(78.5, 53.9, 62.0) == pytest.approx(26.2, abs=0.05)

    @pytest.mark.parametrize("counts", [(10, 10, 10, 10), (7, 5, 3, 2), (1000, 785, 423, 262), (3, 0, 0, 0)])
    def test_identity_exact(self, counts):
        report = MetricsReport(*counts)
        assert report.identity_holds()
        if report.valid:
            assert report.all == pytest.approx(combined_rate(report.val, report.uniq, report.nov))

    def test_render_kv(self):
        text = MetricsReport(4, 2, 1, 1, {"valence": 2}).render_kv()
        assert "val=50.0" in text
        assert "invalid_valence=2" in text


# SUITE 3: Random baseline

class TestBaseline:
    """Uniform attributes on data skeletons"""

    def test_random_assignment_is_an_encoding(self, small_dataset, rng):
        for A in small_dataset.skeletons():
            graph = random_assignment(A, small_dataset.vocab, rng)
            validate(graph)
            assert np.array_equal(graph.A, A)

    def test_baseline_report(self, small_dataset, rng):
        report = baseline_random(small_dataset.skeletons(), small_dataset.vocab, rng, 50,
                                 small_dataset.certificates())
        assert report.generated == 50
        assert report.identity_holds()

    def test_baseline_needs_skeletons(self, small_dataset, rng):
        with pytest.raises(EmptyInput):
            baseline_random([], small_dataset.vocab, rng, 10)
