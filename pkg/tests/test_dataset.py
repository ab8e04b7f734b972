"""
Dataset Tests
=============

SMILES preprocessing with skip reasons, same-size batching and persistence.
"""

import pytest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np

from canonical import canonical_certificate
from chem_io import read_smiles_file
from dataset import (DatasetError, GraphBatch, MoleculeDataset, load_certificates, load_vocab,
                     preprocess_smiles, save_certificates, save_vocab)
from graph_core import SizeMismatch


def numbered(*smiles):
    return list(enumerate(smiles, start=1))


# SUITE 1: Preprocessing

class TestPreprocess:
    """Parse, filter, encode"""

    def test_sample_file(self, sample_file):
        """Only the two deliberately broken lines are skipped"""
        dataset, report = preprocess_smiles(read_smiles_file(sample_file))
        assert report.skipped_count == 2
        assert report.skipped == {"UnknownElement": 1, "UnclosedBranch": 1}
        assert report.kept == len(dataset) == report.total_lines - 2
        assert all(g.vocab == dataset.vocab for g in dataset)

    def test_too_many_atoms(self):
        dataset, report = preprocess_smiles(numbered("CCCCCCCCCC", "CC"), max_atoms=9)
        assert report.skipped == {"TooManyAtoms": 1}
        assert len(dataset) == 1

    def test_invalid_molecule(self):
        """Parsed but not a valid molecule: an under-saturated bracket carbon"""
        dataset, report = preprocess_smiles(numbered("[CH3]", "C"))
        assert report.skipped == {"Invalid:valence": 1}
        assert report.skipped_lines[0][:2] == (1, "[CH3]")
        assert len(dataset) == 1

    def test_vocab_is_sorted_corpus_descriptors(self):
        dataset, _ = preprocess_smiles(numbered("CO", "C=O"))
        assert list(dataset.vocab) == sorted(dataset.vocab)
        assert len(dataset.vocab) == 4

    def test_summary(self):
        _, report = preprocess_smiles(numbered("C", "CCl"))
        assert report.skip_fraction == 0.5
        assert "skipped: 1" in report.summary()


# SUITE 2: Batching

class TestBatching:
    """Batches hold one node count"""

    def test_sample_batch_same_size(self, small_dataset, rng):
        for _ in range(20):
            batch = small_dataset.sample_batch(5, rng)
            assert batch.size == 5
            assert batch.A.shape == (5, batch.n, batch.n)
            assert batch.X.shape == (5, batch.n, len(small_dataset.vocab))
            assert batch.W.shape == (5, batch.n, batch.n, 4)

    def test_by_size(self, small_dataset):
        assert small_dataset.by_size() == {3: [2, 3, 4], 4: [0, 1], 6: [5]}

    def test_mixed_sizes_rejected(self, small_dataset):
        with pytest.raises(SizeMismatch):
            GraphBatch.from_graphs([small_dataset[0], small_dataset[2]])

    def test_empty(self, small_dataset, rng):
        with pytest.raises(DatasetError):
            MoleculeDataset(small_dataset.vocab, []).sample_batch(2, rng)

    def test_stats(self, small_dataset):
        stats = small_dataset.get_stats()
        assert stats["molecules"] == 6
        assert stats["node_counts"] == {3: 3, 4: 2, 6: 1}


# SUITE 3: Persistence

class TestPersistence:
    """npz dataset, vocabulary JSON, certificate lists"""

    def test_dataset_round_trip(self, small_dataset, tmp_path):
        path = tmp_path / "dataset.npz"
        small_dataset.save(path)
        loaded = MoleculeDataset.load(path)
        assert loaded.vocab == small_dataset.vocab
        for a, b in zip(loaded, small_dataset):
            assert np.array_equal(a.A, b.A) and np.array_equal(a.X, b.X) and np.array_equal(a.W, b.W)

    def test_unreadable_dataset(self, tmp_path):
        path = tmp_path / "broken.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(DatasetError):
            MoleculeDataset.load(path)

    def test_certificates_and_vocab(self, small_dataset, tmp_path):
        save_certificates(small_dataset.certificates(), tmp_path / "certificates.txt")
        save_vocab(small_dataset.vocab, tmp_path / "vocab.json")
        assert load_certificates(tmp_path / "certificates.txt") == small_dataset.certificates()
        assert load_vocab(tmp_path / "vocab.json") == small_dataset.vocab
        assert canonical_certificate(small_dataset[0]) in small_dataset.certificates()
