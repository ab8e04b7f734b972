"""
Equivariant Graph Layers
========================

Permutation-equivariant building blocks over batches of same-size graphs:

- interaction_layer: node/edge embedding update (pair message, edge update,
  neighbour sum, CELU node update)
- deepsets_pair_layer: out_i = g(z_i, sum_{j != i} h(z_i, z_j))
- pairwise_scores: symmetric pair logits for skeleton generation
- invariant_readout: sum-pool then feed-forward head

Shapes are batched, (B, n, d) for nodes and (B, n, n, d) for pairs; every
function also accepts a single unbatched graph. Sums over nodes run in
index order.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from autodiff import (DiffTensor, ShapeMismatch, add, as_tensor, broadcast_to, celu, concat,
                      expand_dims, matmul, mul, parameter, reduce_sum, reshape)


Params = Dict[str, DiffTensor]


@dataclass
class Linear:
    """x @ weight + bias"""
    weight: DiffTensor
    bias: DiffTensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeMismatch("Linear", self.weight.shape, self.bias.shape)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, gain: float = 1.0) -> "Linear":
        """Glorot-uniform weights, zero bias"""
        limit = gain * np.sqrt(6.0 / (in_dim + out_dim))
        return cls(parameter(rng.uniform(-limit, limit, size=(in_dim, out_dim))), parameter(np.zeros(out_dim)))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> "Linear":
        return cls(parameter(np.zeros((in_dim, out_dim))), parameter(np.zeros(out_dim)))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x) -> DiffTensor:
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch("Linear input", x.shape, self.weight.shape)
        return add(matmul(x, self.weight), self.bias)

    def named_parameters(self, prefix: str) -> Params:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class LayerParams:
    """f_r' (pair message), f_r (edge update), f_h (node update)"""
    f_rp: Linear
    f_r: Linear
    f_h: Linear

    def __post_init__(self):
        if self.f_rp.in_dim % 2:
            raise ShapeMismatch("f_r' takes [h_i, h_j]", self.f_rp.weight.shape)
        d_h = self.f_rp.in_dim // 2
        if self.f_r.in_dim <= self.f_rp.out_dim:
            raise ShapeMismatch("f_r takes [r, r']", self.f_r.weight.shape, self.f_rp.weight.shape)
        if self.f_h.in_dim != d_h + self.f_r.out_dim:
            raise ShapeMismatch("f_h takes [h, sum r]", self.f_h.weight.shape, self.f_r.weight.shape)

    @classmethod
    def init(cls, d_h: int, d_r: int, out_h: int, out_r: int, rng: np.random.Generator) -> "LayerParams":
        return cls(f_rp=Linear.init(2 * d_h, out_r, rng),
                   f_r=Linear.init(d_r + out_r, out_r, rng),
                   f_h=Linear.init(d_h + out_r, out_h, rng))

    @property
    def node_in(self) -> int:
        return self.f_rp.in_dim // 2

    @property
    def edge_in(self) -> int:
        return self.f_r.in_dim - self.f_rp.out_dim

    @property
    def node_out(self) -> int:
        return self.f_h.out_dim

    @property
    def edge_out(self) -> int:
        return self.f_r.out_dim

    def named_parameters(self, prefix: str) -> Params:
        return {**self.f_rp.named_parameters(f"{prefix}.f_rp"),
                **self.f_r.named_parameters(f"{prefix}.f_r"),
                **self.f_h.named_parameters(f"{prefix}.f_h")}


@dataclass
class NodeEdgeState:
    H: DiffTensor   # (B, n, d_h)
    R: DiffTensor   # (B, n, n, d_r)

    def __post_init__(self):
        self.H, self.R = as_tensor(self.H), as_tensor(self.R)
        if self.H.ndim not in (2, 3) or self.R.ndim != self.H.ndim + 1 \
                or self.R.shape[:-1] != self.H.shape[:-1] + (self.H.shape[-2],):
            raise ShapeMismatch("NodeEdgeState", self.H.shape, self.R.shape)

    @property
    def batched(self) -> bool:
        return self.H.ndim == 3

    @property
    def n(self) -> int:
        return self.H.shape[-2]


@dataclass
class DeepSetsParams:
    """
    Pair network h and combiner g.

    pair_form "literal" feeds h with [z_i, z_j]; "classic" feeds it z_j only.
    """
    h: Linear
    g: Linear
    pair_form: str = "literal"
    activation: str = "celu"

    def __post_init__(self):
        if self.pair_form not in ("literal", "classic"):
            raise ValueError(f"Unknown pair_form {self.pair_form!r}")
        if self.activation not in ("celu", "none"):
            raise ValueError(f"Unknown activation {self.activation!r}")
        d_z = self.h.in_dim // 2 if self.pair_form == "literal" else self.h.in_dim
        if self.g.in_dim != d_z + self.h.out_dim:
            raise ShapeMismatch("g takes [z_i, sum h]", self.g.weight.shape, self.h.weight.shape)

    @classmethod
    def init(cls, d_z: int, d_pair: int, d_out: int, rng: np.random.Generator,
             pair_form: str = "literal", activation: str = "celu") -> "DeepSetsParams":
        h_in = 2 * d_z if pair_form == "literal" else d_z
        return cls(Linear.init(h_in, d_pair, rng), Linear.init(d_z + d_pair, d_out, rng), pair_form, activation)

    def named_parameters(self, prefix: str) -> Params:
        return {**self.h.named_parameters(f"{prefix}.h"), **self.g.named_parameters(f"{prefix}.g")}


@dataclass
class PairScoreParams:
    """s_ij = u(celu(m([z_i, z_j])) + celu(m([z_j, z_i])))"""
    m: Linear
    u: Linear

    def __post_init__(self):
        if self.u.in_dim != self.m.out_dim or self.u.out_dim != 1 or self.m.in_dim % 2:
            raise ShapeMismatch("PairScoreParams", self.m.weight.shape, self.u.weight.shape)

    @classmethod
    def init(cls, d_z: int, d_m: int, rng: np.random.Generator) -> "PairScoreParams":
        return cls(Linear.init(2 * d_z, d_m, rng), Linear.init(d_m, 1, rng))

    def named_parameters(self, prefix: str) -> Params:
        return {**self.m.named_parameters(f"{prefix}.m"), **self.u.named_parameters(f"{prefix}.u")}


@dataclass
class HeadParams:
    """Feed-forward head, CELU between layers"""
    layers: List[Linear] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeMismatch("HeadParams", a.weight.shape, b.weight.shape)

    @classmethod
    def init(cls, widths: List[int], rng: np.random.Generator) -> "HeadParams":
        return cls([Linear.init(a, b, rng) for a, b in zip(widths, widths[1:])])

    def __call__(self, x) -> DiffTensor:
        x = as_tensor(x)
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = celu(x)
        return x

    def named_parameters(self, prefix: str) -> Params:
        out: Params = {}
        for k, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{prefix}.{k}"))
        return out


# Helpers

def _batched(x, rank: int) -> Tuple[DiffTensor, bool]:
    x = as_tensor(x)
    if x.ndim == rank - 1:
        return expand_dims(x, 0), True
    if x.ndim != rank:
        raise ShapeMismatch(f"expected rank {rank - 1} or {rank}", x.shape)
    return x, False


def _batched_matrix(A, batch: int, n: int) -> DiffTensor:
    A = as_tensor(A)
    if A.ndim == 2:
        A = expand_dims(A, 0)
    if A.ndim != 3 or A.shape[1:] != (n, n) or A.shape[0] not in (1, batch):
        raise ShapeMismatch("skeleton", A.shape, (batch, n, n))
    return A if A.shape[0] == batch else broadcast_to(A, (batch, n, n))


def pair_concat(Z: DiffTensor) -> Tuple[DiffTensor, DiffTensor]:
    """([z_i, z_j], [z_j, z_i]) for every ordered pair: (B, n, n, 2d) each"""
    b, n, d = Z.shape
    zi = broadcast_to(expand_dims(Z, 2), (b, n, n, d))
    zj = broadcast_to(expand_dims(Z, 1), (b, n, n, d))
    return concat([zi, zj], axis=-1), concat([zj, zi], axis=-1)


def off_diagonal(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def skeleton_edge_features(A) -> DiffTensor:
    """(B, n, n, 2): adjacency channel plus identity channel; differentiable in A"""
    A = as_tensor(A)
    if A.ndim == 2:
        A = expand_dims(A, 0)
    b, n, _ = A.shape
    eye = np.broadcast_to(np.eye(n)[None, :, :, None], (b, n, n, 1))
    return concat([expand_dims(A, -1), eye], axis=-1)


# Layers

def interaction_layer(state: NodeEdgeState, A, params: LayerParams) -> NodeEdgeState:
    """
    One node/edge update:
        r'_ij = mean(f_r'([h_i, h_j]), f_r'([h_j, h_i]))
        r_ij  = f_r([r_ij, r'_ij])
        h_i   = celu(f_h([h_i, sum_{j in N(i)} r_ij]))
    """
    H, squeeze = _batched(state.H, 3)
    R, _ = _batched(state.R, 4)
    b, n, d_h = H.shape
    if d_h != params.node_in or R.shape[-1] != params.edge_in:
        raise ShapeMismatch("interaction_layer", H.shape, R.shape, params.f_rp.weight.shape)
    mask = _batched_matrix(A, b, n)

    forward_pair, reverse_pair = pair_concat(H)
    r_prime = mul(add(params.f_rp(forward_pair), params.f_rp(reverse_pair)), 0.5)
    R_new = params.f_r(concat([R, r_prime], axis=-1))
    aggregated = reduce_sum(mul(R_new, expand_dims(mask, -1)), axis=2)
    H_new = celu(params.f_h(concat([H, aggregated], axis=-1)))
    if squeeze:
        return NodeEdgeState(_squeeze(H_new), _squeeze(R_new))
    return NodeEdgeState(H_new, R_new)


def interaction_stack(H, R, A, layers: List[LayerParams]) -> NodeEdgeState:
    state = NodeEdgeState(H, R)
    for layer in layers:
        state = interaction_layer(state, A, layer)
    return state


def deepsets_pair_layer(Z, params: DeepSetsParams) -> DiffTensor:
    """out_i = g([z_i, sum_{j != i} h(z_i, z_j)])"""
    Z, squeeze = _batched(Z, 3)
    b, n, d = Z.shape
    if n < 1:
        raise ShapeMismatch("deepsets_pair_layer needs n >= 1", Z.shape)
    if params.pair_form == "literal":
        pairs, _ = pair_concat(Z)
    else:
        pairs = broadcast_to(expand_dims(Z, 1), (b, n, n, d))
    messages = params.h(pairs)
    if params.activation == "celu":
        messages = celu(messages)
    aggregated = reduce_sum(mul(messages, off_diagonal(n)[None, :, :, None]), axis=2)
    out = params.g(concat([Z, aggregated], axis=-1))
    if params.activation == "celu":
        out = celu(out)
    return _squeeze(out) if squeeze else out


def pairwise_scores(Z, params: PairScoreParams) -> DiffTensor:
    """(B, n, n) symmetric logits with zero diagonal"""
    Z, squeeze = _batched(Z, 3)
    n = Z.shape[1]
    forward_pair, reverse_pair = pair_concat(Z)
    scores = params.u(add(celu(params.m(forward_pair)), celu(params.m(reverse_pair))))
    scores = mul(reshape(scores, scores.shape[:-1]), off_diagonal(n))
    return _squeeze(scores) if squeeze else scores


def invariant_readout(H, head: HeadParams) -> DiffTensor:
    """head(sum_i h_i): (B, d_out), or (d_out,) for one graph"""
    H, squeeze = _batched(H, 3)
    if H.shape[1] < 1:
        raise ShapeMismatch("invariant_readout needs n >= 1", H.shape)
    if head.layers and H.shape[-1] != head.layers[0].in_dim:
        raise ShapeMismatch("invariant_readout", H.shape, head.layers[0].weight.shape)
    out = head(reduce_sum(H, axis=1))
    return _squeeze(out) if squeeze else out


def _squeeze(x: DiffTensor) -> DiffTensor:
    return reshape(x, x.shape[1:])
