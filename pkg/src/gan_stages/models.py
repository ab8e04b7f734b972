"""
Stage Models
============

Generators and critics of the three stages:

1. skeleton A from latents Z (pairwise Deep-Sets scores)
2. node attributes X given A
3. edge attributes W given X and A

Generators are equivariant in all their inputs; critics are invariant.
Every generator exposes a relaxed straight-through output for training and
discrete argmax (or sampled) output for generation.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Union

import numpy as np

from autodiff import (DiffTensor, as_tensor, concat, expand_dims, mul, no_record, reshape, sigmoid,
                      softmax, straight_through, swapaxes, add)
from gnn import (DeepSetsParams, HeadParams, LayerParams, Linear, PairScoreParams, deepsets_pair_layer,
                 interaction_stack, invariant_readout, off_diagonal, pairwise_scores, skeleton_edge_features)
from graph_core import N_BOND_TYPES


# Errors

class StageError(Exception):
    """Base class for staged-model errors"""


class NEmpty(StageError):
    pass


class EmptyBatch(StageError):
    pass


class EmptyDataset(StageError):
    pass


class DivergedLoss(StageError):
    def __init__(self, step: int, d_loss: float, g_loss: float):
        super().__init__(f"Non-finite loss at step {step}: d_loss={d_loss}, g_loss={g_loss}")
        self.step = step


class UntrainedStage(StageError):
    pass


class CheckpointError(StageError):
    pass


class StageId(Enum):
    """Generation order: SKELETON < NODE_ATTRS < EDGE_ATTRS"""
    SKELETON = 1
    NODE_ATTRS = 2
    EDGE_ATTRS = 3

    @property
    def field(self) -> str:
        """The tensor this stage generates"""
        return {1: "A", 2: "X", 3: "W"}[self.value]

    @classmethod
    def parse(cls, text: Union[str, int]) -> "StageId":
        text = str(text).strip().lower()
        for stage in cls:
            if text in (str(stage.value), stage.name.lower(), stage.field.lower()):
                return stage
        raise ValueError(f"Unknown stage {text!r}; use 1/2/3")

    def __lt__(self, other: "StageId") -> bool:
        return self.value < other.value


def sample_latent(n: int, d_z: int, rng: np.random.Generator, batch: Optional[int] = None) -> np.ndarray:
    """iid standard-normal latent set: (n, d_z), or (batch, n, d_z)"""
    if n < 1:
        raise NEmpty(f"Latent set needs n >= 1, got {n}")
    shape = (n, d_z) if batch is None else (batch, n, d_z)
    return rng.standard_normal(shape)


# Discretization

def one_hot_argmax(probs: np.ndarray) -> np.ndarray:
    """One-hot of the last-axis argmax (first index on ties)"""
    k = probs.shape[-1]
    return np.eye(k)[np.argmax(probs, axis=-1)]


def categorical_sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = probs.shape[-1]
    flat = probs.reshape(-1, k)
    cumulative = np.cumsum(flat, axis=1)
    draws = rng.random((flat.shape[0], 1)) * cumulative[:, -1:]
    picks = np.minimum((cumulative < draws).sum(axis=1), k - 1)
    return np.eye(k)[picks].reshape(probs.shape)


def _upper_mirror(values: np.ndarray) -> np.ndarray:
    """Copy the strict upper triangle of axes (1, 2) onto the lower one"""
    n = values.shape[1]
    iu = np.triu_indices(n, k=1)
    out = np.zeros_like(values)
    out[:, iu[0], iu[1]] = values[:, iu[0], iu[1]]
    out[:, iu[1], iu[0]] = values[:, iu[0], iu[1]]
    return out


def gumbel_noise(shape, rng: np.random.Generator, symmetric: bool = False) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-20, 1.0 - 1e-12)
    noise = -np.log(-np.log(u))
    return _upper_mirror(noise) if symmetric else noise


def logistic_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return _upper_mirror(np.log(u) - np.log1p(-u))


def _trunk(node_in: int, edge_in: int, layers: int, node_width: int, edge_width: int,
           rng: np.random.Generator) -> List[LayerParams]:
    out = []
    for _ in range(layers):
        out.append(LayerParams.init(node_in, edge_in, node_width, edge_width, rng))
        node_in, edge_in = node_width, edge_width
    return out


def _trunk_parameters(layers: List[LayerParams], prefix: str) -> Dict[str, DiffTensor]:
    out: Dict[str, DiffTensor] = {}
    for k, layer in enumerate(layers):
        out.update(layer.named_parameters(f"{prefix}.{k}"))
    return out


def _as_array(x) -> np.ndarray:
    x = np.asarray(x.values if isinstance(x, DiffTensor) else x, dtype=np.float64)
    return x


# Generators

@dataclass
class Stage1Generator:
    """Skeleton generator: Deep-Sets trunk on Z, symmetric pair scores"""
    trunk: List[DeepSetsParams]
    scores: PairScoreParams

    @classmethod
    def init(cls, d_z: int, layers: int, width: int, edge_width: int, rng: np.random.Generator,
             pair_form: str = "literal") -> "Stage1Generator":
        trunk = []
        d_in = d_z
        for _ in range(layers):
            trunk.append(DeepSetsParams.init(d_in, width, width, rng, pair_form))
            d_in = width
        return cls(trunk, PairScoreParams.init(d_in, edge_width, rng))

    def logits(self, Z) -> DiffTensor:
        H = as_tensor(Z)
        for layer in self.trunk:
            H = deepsets_pair_layer(H, layer)
        return pairwise_scores(H, self.scores)

    def probabilities(self, Z) -> DiffTensor:
        logits = self.logits(Z)
        return mul(sigmoid(logits), off_diagonal(logits.shape[-1]))

    def relaxed(self, Z, batch, tau: float, rng: np.random.Generator, noise: bool = True) -> DiffTensor:
        logits = self.logits(Z)
        n = logits.shape[-1]
        if noise:
            logits = add(logits, logistic_noise(logits.shape, rng))
        soft = mul(sigmoid(mul(logits, 1.0 / tau)), off_diagonal(n))
        hard = (soft.values > 0.5).astype(np.float64) * off_diagonal(n)
        return straight_through(hard, soft)

    def named_parameters(self) -> Dict[str, DiffTensor]:
        out: Dict[str, DiffTensor] = {}
        for k, layer in enumerate(self.trunk):
            out.update(layer.named_parameters(f"trunk.{k}"))
        out.update(self.scores.named_parameters("scores"))
        return out


@dataclass
class Stage2Generator:
    """Node attributes: interaction stack over (Z, A), softmax over the vocabulary"""
    trunk: List[LayerParams]
    out: Linear

    @classmethod
    def init(cls, d_z: int, vocab_size: int, layers: int, node_width: int, edge_width: int,
             rng: np.random.Generator) -> "Stage2Generator":
        trunk = _trunk(d_z, 2, layers, node_width, edge_width, rng)
        return cls(trunk, Linear.init(node_width, vocab_size, rng))

    def logits(self, Z, A) -> DiffTensor:
        Z = as_tensor(Z)
        edges = skeleton_edge_features(A)
        if Z.ndim == 2:
            edges = reshape(edges, edges.shape[1:])
        state = interaction_stack(Z, edges, A, self.trunk)
        return self.out(state.H)

    def probabilities(self, Z, A) -> DiffTensor:
        return softmax(self.logits(Z, A), axis=-1)

    def relaxed(self, Z, batch, tau: float, rng: np.random.Generator, noise: bool = True) -> DiffTensor:
        logits = self.logits(Z, batch.A)
        if noise:
            logits = add(logits, gumbel_noise(logits.shape, rng))
        soft = softmax(mul(logits, 1.0 / tau), axis=-1)
        return straight_through(one_hot_argmax(soft.values), soft)

    def named_parameters(self) -> Dict[str, DiffTensor]:
        return {**_trunk_parameters(self.trunk, "trunk"), **self.out.named_parameters("out")}


@dataclass
class Stage3Generator:
    """Edge attributes: interaction stack over ([Z, X], A), symmetric bond-type logits masked by A"""
    trunk: List[LayerParams]
    out: Linear

    @classmethod
    def init(cls, d_z: int, vocab_size: int, layers: int, node_width: int, edge_width: int,
             rng: np.random.Generator) -> "Stage3Generator":
        trunk = _trunk(d_z + vocab_size, 2, layers, node_width, edge_width, rng)
        return cls(trunk, Linear.init(edge_width, N_BOND_TYPES, rng))

    def logits(self, Z, X, A) -> DiffTensor:
        """(B, n, n, 4) logits, symmetric in (i, j)"""
        Z, X = as_tensor(Z), as_tensor(X)
        squeeze = Z.ndim == 2
        if squeeze:
            Z, X = expand_dims(Z, 0), expand_dims(X, 0)
        A = _as_array(A)
        if A.ndim == 2:
            A = A[None]
        state = interaction_stack(concat([Z, X], axis=-1), skeleton_edge_features(A), A, self.trunk)
        L = self.out(state.R)
        L = mul(add(L, swapaxes(L, 1, 2)), 0.5)
        return reshape(L, L.shape[1:]) if squeeze else L

    def probabilities(self, Z, X, A) -> DiffTensor:
        A = _as_array(A)
        return mul(softmax(self.logits(Z, X, A), axis=-1), A[..., None])

    def relaxed(self, Z, batch, tau: float, rng: np.random.Generator, noise: bool = True) -> DiffTensor:
        A = batch.A
        logits = self.logits(Z, batch.X, A)
        if noise:
            logits = add(logits, gumbel_noise(logits.shape, rng, symmetric=True))
        soft = mul(softmax(mul(logits, 1.0 / tau), axis=-1), A[..., None])
        hard = one_hot_argmax(soft.values) * A[..., None]
        return straight_through(hard, soft)

    def named_parameters(self) -> Dict[str, DiffTensor]:
        return {**_trunk_parameters(self.trunk, "trunk"), **self.out.named_parameters("out")}


# Critics

@dataclass
class Critic:
    """
    Invariant critic: interaction stack then sum readout.

    Stage 1 sees only A (constant node features); stage 2 sees (X, A);
    stage 3 sees (W, X, A) with W appended to the edge features.
    """
    stage: StageId
    trunk: List[LayerParams]
    head: HeadParams

    @classmethod
    def init(cls, stage: StageId, vocab_size: int, layers: int, node_width: int, edge_width: int,
             rng: np.random.Generator) -> "Critic":
        node_in = 1 if stage == StageId.SKELETON else vocab_size
        edge_in = 2 + (N_BOND_TYPES if stage == StageId.EDGE_ATTRS else 0)
        trunk = _trunk(node_in, edge_in, layers, node_width, edge_width, rng)
        return cls(stage, trunk, HeadParams.init([node_width, node_width, 1], rng))

    def score(self, varying, batch) -> DiffTensor:
        """(B,) scores; `varying` replaces the batch field this stage generates"""
        varying = as_tensor(varying)
        if self.stage == StageId.SKELETON:
            A = varying
            b, n, _ = A.shape
            H = np.ones((b, n, 1))
            edges = skeleton_edge_features(A)
        elif self.stage == StageId.NODE_ATTRS:
            A = batch.A
            H = varying
            edges = skeleton_edge_features(A)
        else:
            A = batch.A
            H = batch.X
            edges = concat([skeleton_edge_features(A), varying], axis=-1)
        state = interaction_stack(H, edges, A, self.trunk)
        out = invariant_readout(state.H, self.head)
        return reshape(out, out.shape[:-1])

    def named_parameters(self) -> Dict[str, DiffTensor]:
        return {**_trunk_parameters(self.trunk, "trunk"), **self.head.named_parameters("head")}


Generator = Union[Stage1Generator, Stage2Generator, Stage3Generator]


@dataclass
class ModelParams:
    """Generator and critic of one stage"""
    stage: StageId
    generator: Generator
    critic: Critic
    vocab_size: int
    latent_dim: int

    def named_parameters(self) -> Dict[str, DiffTensor]:
        out = {f"generator.{k}": v for k, v in self.generator.named_parameters().items()}
        out.update({f"critic.{k}": v for k, v in self.critic.named_parameters().items()})
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())


def build_model(stage: StageId, config, vocab_size: int, rng: Optional[np.random.Generator] = None) -> ModelParams:
    """Freshly initialized generator and critic for `stage`"""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if stage == StageId.SKELETON:
        generator = Stage1Generator.init(config.latent_dim, config.layers, config.node_width,
                                         config.edge_width, rng, config.pair_form)
    elif stage == StageId.NODE_ATTRS:
        generator = Stage2Generator.init(config.latent_dim, vocab_size, config.layers,
                                         config.node_width, config.edge_width, rng)
    else:
        generator = Stage3Generator.init(config.latent_dim, vocab_size, config.layers,
                                         config.node_width, config.edge_width, rng)
    critic = Critic.init(stage, vocab_size, config.layers, config.node_width, config.edge_width, rng)
    return ModelParams(stage, generator, critic, vocab_size, config.latent_dim)


# Inference entry points

@dataclass
class GeneratorOutput:
    probs: np.ndarray
    sample: np.ndarray


def stage1_generator(Z, params: Stage1Generator, sample: bool = False,
                     rng: Optional[np.random.Generator] = None) -> GeneratorOutput:
    """Edge probabilities and a binary skeleton (threshold 0.5, or symmetric Bernoulli draws)"""
    with no_record():
        probs = params.probabilities(Z).values
    batched = probs.ndim == 3
    P = probs if batched else probs[None]
    if sample:
        draws = _upper_mirror(rng.random(P.shape))
        A = (draws < P).astype(np.float64)
    else:
        A = (P > 0.5).astype(np.float64)
    A = A * off_diagonal(P.shape[-1])
    return GeneratorOutput(probs, A if batched else A[0])


def stage2_generator(Z, A, params: Stage2Generator, sample: bool = False,
                     rng: Optional[np.random.Generator] = None) -> GeneratorOutput:
    """Per-node distributions over the vocabulary and a one-hot X"""
    with no_record():
        probs = params.probabilities(Z, A).values
    X = categorical_sample(probs, rng) if sample else one_hot_argmax(probs)
    return GeneratorOutput(probs, X)


def stage3_generator(Z, X, A, params: Stage3Generator, sample: bool = False,
                     rng: Optional[np.random.Generator] = None) -> GeneratorOutput:
    """Bond-type distributions on existing edges and a symmetric one-hot W (zero off the skeleton)"""
    A = _as_array(A)
    with no_record():
        probs = params.probabilities(Z, X, A).values
    batched = probs.ndim == 4
    P = probs if batched else probs[None]
    mask = (A if batched else A[None])[..., None]
    if sample:
        W = _upper_mirror(categorical_sample(P, rng))
    else:
        W = _upper_mirror(one_hot_argmax(P))
    W = W * mask
    return GeneratorOutput(probs, W if batched else W[0])
