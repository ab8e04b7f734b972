"""Shared fixtures: small vocabularies, molecules and configs"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np
import pytest

from chem_io import parse_smiles
from config import StageConfig
from dataset import MoleculeDataset
from graph_core import AtomDescriptor, AtomVocab, BondType, MolecularGraph


# Bond-order capacity in half units (aromatic bond = 3)
CAPACITY = {("C", 0): 8, ("N", 0): 6, ("O", 0): 4, ("F", 0): 2, ("N", 1): 8, ("O", -1): 2}
SAMPLE_FILE = Path(__file__).parent.parent / "data" / "sample_molecules.smi"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-length training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-length training or sampling runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def random_molecule(rng: np.random.Generator, n_max: int = 9, rings: bool = True, aromatic: bool = True,
                    charged: bool = True) -> MolecularGraph:
    """
    A random valid molecule over C, N, O, F: an optional aromatic six-ring,
    a random tree grown from it, a few ring closures, random bond upgrades,
    hydrogens fill the rest. Charged atoms are N+ and O-.
    """
    n = int(rng.integers(1, n_max + 1))
    atoms = []
    used = []
    orders = {}
    ring = set()

    def free(i):
        return CAPACITY[atoms[i]] - used[i]

    if aromatic and n >= 6 and rng.random() < 0.3:
        for k in range(6):
            atoms.append(("N", 0) if k and rng.random() < 0.2 else ("C", 0))
            used.append(6)
            orders[(k, k + 1) if k < 5 else (0, 5)] = 3
        ring = set(range(6))
    else:
        atoms.append(("C", 0))
        used.append(0)

    choices = [("C", 0), ("C", 0), ("N", 0), ("O", 0), ("F", 0)] + ([("N", 1), ("O", -1)] if charged else [])
    while len(atoms) < n:
        parents = [i for i in range(len(atoms)) if free(i) >= 2]
        if not parents:
            break
        parent = parents[int(rng.integers(len(parents)))]
        atoms.append(choices[int(rng.integers(len(choices)))])
        used.append(2)
        used[parent] += 2
        orders[(parent, len(atoms) - 1)] = 2

    n = len(atoms)
    if rings and n >= 3:
        for _ in range(int(rng.integers(0, 3))):
            i, j = sorted(int(v) for v in rng.choice(n, size=2, replace=False))
            if (i, j) in orders or free(i) < 2 or free(j) < 2 or (i in ring and j in ring):
                continue
            orders[(i, j)] = 2
            used[i] += 2
            used[j] += 2

    for (i, j) in list(orders):
        if orders[(i, j)] == 3:
            continue
        if rng.random() < 0.3 and free(i) >= 2 and free(j) >= 2 and orders[(i, j)] < 6:
            orders[(i, j)] += 2
            used[i] += 2
            used[j] += 2

    descriptors = [AtomDescriptor(e, charge, free(i) // 2) for i, (e, charge) in enumerate(atoms)]
    vocab = AtomVocab.from_corpus(descriptors)
    bonds = [(i, j, BondType.AROMATIC if half == 3 else BondType(half // 2 - 1)) for (i, j), half in orders.items()]
    return MolecularGraph.from_atoms(vocab, descriptors, bonds)


@pytest.fixture
def molecule_factory():
    """random_molecule(rng, n_max, rings, aromatic, charged)"""
    return random_molecule


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acetic_acid():
    return parse_smiles("CC(=O)O")


@pytest.fixture
def benzene():
    return parse_smiles("c1ccccc1")


@pytest.fixture
def small_dataset():
    """Six molecules over one vocabulary, several node counts"""
    smiles = ["CC(=O)O", "OCC=O", "CCO", "CCN", "C1CC1", "c1ccncc1"]
    graphs = [parse_smiles(s) for s in smiles]
    vocab = AtomVocab.from_corpus(a for g in graphs for a in g.atoms())
    return MoleculeDataset(vocab, graphs, smiles)


@pytest.fixture
def tiny_config():
    """Smallest model that still exercises every code path"""
    return StageConfig(latent_dim=4, layers=1, node_width=6, edge_width=6, batch_size=3,
                       critic_steps=1, max_steps=2, checkpoint_every=1, atom_types=21)


@pytest.fixture
def sample_file():
    return SAMPLE_FILE
