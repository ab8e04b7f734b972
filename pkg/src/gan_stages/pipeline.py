# src/gan_stages/pipeline.py
"""
Generation Pipeline
===================

Connects: skeleton source → stage 2 (X | A) → stage 3 (W | X, A) → MolecularGraph
"""

from typing import List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from config import StageConfig
from graph_core import AtomVocab, MolecularGraph, validate

from . import models
from .models import ModelParams, StageId, UntrainedStage


SKELETON_SOURCES = ("data", "stage1")


class GenerationPipeline:
    """
    Sequential sampling of molecules:
    1. Draw a skeleton A from the data (or from the stage-1 generator)
    2. Draw Z and sample node attributes X given A
    3. Draw a fresh Z (unless shared) and sample bond types W given X, A
    4. Assemble the (A, X, W) encoding
    """

    def __init__(self, vocab: AtomVocab, stage2: Optional[ModelParams], stage3: Optional[ModelParams],
                 stage1: Optional[ModelParams] = None, config: Optional[StageConfig] = None,
                 verbose: bool = False):
        self.vocab = vocab
        self.stages = {StageId.SKELETON: stage1, StageId.NODE_ATTRS: stage2, StageId.EDGE_ATTRS: stage3}
        self.config = config or StageConfig()
        self.verbose = verbose
        for stage, model in self.stages.items():
            if model is not None and model.stage != stage:
                raise ValueError(f"Model for stage {model.stage.value} passed as stage {stage.value}")
        if verbose:
            ready = [str(s.value) for s, m in self.stages.items() if m is not None]
            print(f"✅ Pipeline ready (stages {', '.join(ready) or 'none'})")

    def _require(self, stage: StageId) -> ModelParams:
        model = self.stages[stage]
        if model is None:
            raise UntrainedStage(f"Stage {stage.value} ({stage.name.lower()}) has no trained parameters")
        return model

    def sample_skeleton(self, source: str, rng: np.random.Generator,
                        skeletons: Optional[Sequence[np.ndarray]] = None,
                        node_counts: Optional[Sequence[int]] = None) -> np.ndarray:
        if source == "data":
            if not skeletons:
                raise ValueError("Skeleton source 'data' needs at least one skeleton")
            return np.asarray(skeletons[int(rng.integers(len(skeletons)))], dtype=np.float64)
        if source == "stage1":
            model = self._require(StageId.SKELETON)
            counts = list(node_counts) if node_counts else [len(s) for s in (skeletons or [])]
            if not counts:
                raise ValueError("Skeleton source 'stage1' needs node counts")
            n = int(counts[int(rng.integers(len(counts)))])
            Z = models.sample_latent(n, model.latent_dim, rng)
            return models.stage1_generator(Z, model.generator, self.config.sample_outputs, rng).sample
        raise ValueError(f"Unknown skeleton source {source!r}; use one of {SKELETON_SOURCES}")

    def complete(self, A: np.ndarray, rng: np.random.Generator) -> MolecularGraph:
        """Attributes for one skeleton"""
        stage2 = self._require(StageId.NODE_ATTRS)
        stage3 = self._require(StageId.EDGE_ATTRS)
        n = A.shape[0]
        sample = self.config.sample_outputs

        Z2 = models.sample_latent(n, stage2.latent_dim, rng)
        X = models.stage2_generator(Z2, A, stage2.generator, sample, rng).sample
        if self.config.shared_latent and stage3.latent_dim == stage2.latent_dim:
            Z3 = Z2
        else:
            Z3 = models.sample_latent(n, stage3.latent_dim, rng)
        W = models.stage3_generator(Z3, X, A, stage3.generator, sample, rng).sample

        graph = MolecularGraph(self.vocab, A.astype(np.int8), X.astype(np.int8), W.astype(np.int8))
        validate(graph)
        return graph

    def generate(self, count: int, rng: np.random.Generator, source: str = "data",
                 skeletons: Optional[Sequence[np.ndarray]] = None,
                 node_counts: Optional[Sequence[int]] = None) -> List[MolecularGraph]:
        """Exactly `count` graphs; validity is not enforced"""
        self._require(StageId.NODE_ATTRS)
        self._require(StageId.EDGE_ATTRS)
        if source == "stage1":
            self._require(StageId.SKELETON)

        indices = range(count)
        if self.verbose:
            indices = tqdm(indices, desc="generating", unit="mol")
        out = []
        for _ in indices:
            A = self.sample_skeleton(source, rng, skeletons, node_counts)
            out.append(self.complete(A, rng))
        return out


def generate(count: int, skeleton_source: str, stage2: Optional[ModelParams], stage3: Optional[ModelParams],
             vocab: AtomVocab, rng: np.random.Generator, skeletons: Optional[Sequence[np.ndarray]] = None,
             stage1: Optional[ModelParams] = None, config: Optional[StageConfig] = None,
             node_counts: Optional[Sequence[int]] = None) -> List[MolecularGraph]:
    pipeline = GenerationPipeline(vocab, stage2, stage3, stage1, config)
    return pipeline.generate(count, rng, skeleton_source, skeletons, node_counts)


# Quick test
if __name__ == "__main__":
    from .models import build_model

    config = StageConfig(layers=1, node_width=8, edge_width=8)
    vocab = AtomVocab.from_json('{"elements": ["C","N","O","F"], "entries": [["C",0,0],["C",0,1],["C",0,2],["C",0,3],["C",0,4]]}')
    rng = np.random.default_rng(0)
    pipeline = GenerationPipeline(vocab, build_model(StageId.NODE_ATTRS, config, len(vocab)),
                                  build_model(StageId.EDGE_ATTRS, config, len(vocab)), config=config, verbose=True)
    ring = np.roll(np.eye(6), 1, axis=1)
    graphs = pipeline.generate(3, rng, skeletons=[ring + ring.T])
    for g in graphs:
        print(f"   {g}")
