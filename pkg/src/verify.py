"""
Verification Suite
==================

Executable checks of the structural claims:

- check_equivariance: ||f(Z^pi) - f(Z)^pi||_inf over random permutations
- check_decomposition_invariance: row functions must not depend on the
  order of the other rows
- equiprobability_test: every distinct labelling of an isomorphism class
  is generated equally often (chi-square against uniform)

Plus builtin counterexamples that these checks must catch.
"""

from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2

from autodiff import DiffTensor, no_record
from canonical import certificate_from_labels
from gnn import DeepSetsParams, deepsets_pair_layer
from graph_core import MolecularGraph, Permutation


class VerifyError(Exception):
    pass


class TooFewSamples(VerifyError):
    pass


MAX_EQUIPROBABILITY_N = 5
MIN_EXPECTED_COUNT = 5.0
SIGNIFICANCE = 0.01


def _array(x) -> np.ndarray:
    if isinstance(x, DiffTensor):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _render(pairs: Sequence[Tuple[str, object]]) -> str:
    lines = []
    for key, value in pairs:
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key}: {value}")
    return "\n".join(lines)


# Equivariance

@dataclass
class EquivarianceReport:
    max_deviation: float
    worst_permutation: Optional[Permutation]
    trials: int

    def passed(self, tolerance: float = 1e-9) -> bool:
        return self.max_deviation <= tolerance

    def render(self) -> str:
        worst = list(self.worst_permutation.mapping) if self.worst_permutation else None
        return _render([("check", "equivariance"), ("trials", self.trials),
                        ("max_deviation", float(self.max_deviation)), ("worst_permutation", worst)])


def check_equivariance(f: Callable, inputs, trials: int, rng: np.random.Generator,
                       input_axes: Optional[Sequence[int]] = None, output_axes: int = 1) -> EquivarianceReport:
    """
    Max deviation between f applied to permuted inputs and permuted f outputs

    Args:
        f: Function of one or more unbatched node-indexed arrays
        inputs: One array or a tuple of arrays
        trials: Number of random permutations
        input_axes: Leading node axes per input (1 for Z or X, 2 for A or W)
        output_axes: Leading node axes of the output; 0 checks invariance
    """
    if not isinstance(inputs, (tuple, list)):
        inputs = (inputs,)
    inputs = tuple(_array(x) for x in inputs)
    input_axes = tuple(input_axes) if input_axes is not None else (1,) * len(inputs)
    n = inputs[0].shape[0]

    with no_record():
        reference = _array(f(*inputs))
        worst, worst_pi = 0.0, None
        for _ in range(trials):
            pi = Permutation.random(n, rng)
            permuted = [pi.permute_axes(x, axes) for x, axes in zip(inputs, input_axes)]
            out = _array(f(*permuted))
            expected = pi.permute_axes(reference, output_axes) if output_axes else reference
            deviation = float(np.max(np.abs(out - expected))) if out.size else 0.0
            if worst_pi is None or deviation > worst:
                worst, worst_pi = deviation, pi
    return EquivarianceReport(worst, worst_pi, trials)


@dataclass
class DecompositionReport:
    max_deviation: float
    trials: int

    def passed(self, tolerance: float = 1e-9) -> bool:
        return self.max_deviation <= tolerance

    def render(self) -> str:
        return _render([("check", "decomposition"), ("trials", self.trials),
                        ("max_deviation", float(self.max_deviation))])


def check_decomposition_invariance(f_row: Callable[[np.ndarray, np.ndarray], np.ndarray], Z,
                                   trials: int, rng: np.random.Generator) -> DecompositionReport:
    """Max change of f_row(z_i, Z_{-i}) over random orderings of Z_{-i}, for every i"""
    Z = _array(Z)
    n = Z.shape[0]
    worst = 0.0
    with no_record():
        for i in range(n):
            rest = np.delete(Z, i, axis=0)
            reference = _array(f_row(Z[i], rest))
            if len(rest) < 2:
                continue
            for _ in range(trials):
                shuffled = rest[rng.permutation(len(rest))]
                worst = max(worst, float(np.max(np.abs(_array(f_row(Z[i], shuffled)) - reference))))
    return DecompositionReport(worst, trials)


# Equiprobability

LabelledGraph = Tuple[Tuple, np.ndarray]


def _as_labelled(output) -> LabelledGraph:
    if isinstance(output, MolecularGraph):
        return tuple(a.label for a in output.atoms()), output.bond_type_matrix()
    if isinstance(output, tuple) and len(output) == 2:
        labels, edges = output
        return tuple(labels), np.asarray(edges, dtype=np.int64)
    edges = np.rint(_array(output)).astype(np.int64)
    return tuple([0] * edges.shape[0]), edges


def _key(labels: Tuple, edges: np.ndarray) -> Tuple:
    return labels, edges.astype(np.int64).tobytes()


def _labelings(labels: Tuple, edges: np.ndarray) -> List[Tuple]:
    """Every distinct labelled graph isomorphic to (labels, edges)"""
    n = len(labels)
    seen = {}
    for mapping in permutations(range(n)):
        pi = Permutation(mapping)
        key = _key(tuple(pi.permute_axes(np.array(labels, dtype=object), 1)), pi.permute_axes(edges, 2))
        seen[key] = None
    return list(seen)


@dataclass
class ClassCount:
    certificate: str
    total: int
    labelings: int
    counts: List[int]
    expected: float


@dataclass
class EquiprobabilityReport:
    statistic: float
    dof: int
    p_value: float
    samples: int
    classes: List[ClassCount] = field(default_factory=list)
    excluded: List[ClassCount] = field(default_factory=list)

    def passed(self, alpha: float = SIGNIFICANCE) -> bool:
        return self.p_value > alpha

    def render(self) -> str:
        pairs = [("check", "equiprobability"), ("samples", self.samples), ("classes", len(self.classes)),
                 ("excluded_classes", len(self.excluded)), ("chi_square", float(self.statistic)),
                 ("dof", self.dof), ("p_value", float(self.p_value))]
        for k, cls in enumerate(self.classes):
            pairs.append((f"class_{k}", f"total={cls.total} labelings={cls.labelings} counts={cls.counts}"))
        return _render(pairs)


def equiprobability_test(generator: Callable, n: int, samples: int, rng: np.random.Generator,
                         latent_dim: int = 16, batched: bool = False,
                         chunk: int = 1024) -> EquiprobabilityReport:
    """
    Chi-square test of uniformity over the distinct labellings of each
    generated isomorphism class

    Args:
        generator: Latent set (n, latent_dim) -> MolecularGraph, (labels, edge matrix)
            or skeleton matrix; with `batched`, (B, n, latent_dim) -> sequence of those
        n: Node count (at most 5, all n! relabellings are enumerated)
        samples: Number of latent draws

    Classes whose expected count per labelling is below 5 are excluded and
    listed in the report. With no degrees of freedom left the p-value is 1.
    """
    if samples < 1:
        raise TooFewSamples(f"Need at least one sample, got {samples}")
    if not 1 <= n <= MAX_EQUIPROBABILITY_N:
        raise VerifyError(f"n must lie in [1, {MAX_EQUIPROBABILITY_N}], got {n}")

    counts: Dict[Tuple, int] = {}
    examples: Dict[Tuple, LabelledGraph] = {}
    with no_record():
        remaining = samples
        while remaining > 0:
            if batched:
                size = min(chunk, remaining)
                outputs = generator(rng.standard_normal((size, n, latent_dim)))
            else:
                size = 1
                outputs = [generator(rng.standard_normal((n, latent_dim)))]
            for output in outputs:
                labels, edges = _as_labelled(output)
                key = _key(labels, edges)
                counts[key] = counts.get(key, 0) + 1
                examples.setdefault(key, (labels, edges))
            remaining -= size

    by_class: Dict[bytes, List[Tuple]] = {}
    for key, (labels, edges) in examples.items():
        by_class.setdefault(certificate_from_labels(labels, edges).data, []).append(key)

    report = EquiprobabilityReport(statistic=0.0, dof=0, p_value=1.0, samples=samples)
    for cert, keys in sorted(by_class.items()):
        labels, edges = examples[keys[0]]
        every = _labelings(labels, edges)
        observed = [counts.get(k, 0) for k in every]
        total = sum(observed)
        expected = total / len(every)
        entry = ClassCount(cert.hex(), total, len(every), observed, expected)
        if len(every) > 1 and expected < MIN_EXPECTED_COUNT:
            report.excluded.append(entry)
            continue
        report.classes.append(entry)
        if len(every) > 1:
            report.statistic += sum((o - expected) ** 2 / expected for o in observed)
            report.dof += len(every) - 1
    if report.dof > 0:
        report.p_value = float(chi2.sf(report.statistic, report.dof))
    return report


# Builtin counterexamples

def positional_id_generator(d_z: int, n_max: int, rng: np.random.Generator,
                            width: int = 8) -> Callable[[np.ndarray], np.ndarray]:
    """Appends fixed one-hot position ids to each z_i before an equivariant layer"""
    layer = DeepSetsParams.init(d_z + n_max, width, width, rng)

    def f(Z):
        Z = _array(Z)
        n = Z.shape[0]
        ids = np.eye(n_max)[:n]
        return deepsets_pair_layer(np.concatenate([Z, ids], axis=1), layer).values

    return f


def recurrent_row_function(d_z: int, rng: np.random.Generator,
                           width: int = 8) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Reads Z_{-i} in the given order through a tanh recurrence"""
    U = rng.standard_normal((width, width)) / np.sqrt(width)
    V = rng.standard_normal((d_z, width))
    S = rng.standard_normal((d_z, width))

    def f_row(z_i, rest):
        state = np.tanh(np.asarray(z_i) @ S)
        for z in np.asarray(rest):
            state = np.tanh(state @ U + z @ V)
        return state

    return f_row


def sum_row_function(layer: DeepSetsParams) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Row i of deepsets_pair_layer written as f_row(z_i, Z_{-i})"""

    def f_row(z_i, rest):
        Z = np.concatenate([np.asarray(z_i)[None], np.asarray(rest)], axis=0)
        return deepsets_pair_layer(Z, layer).values[0]

    return f_row


def fixed_output_generator(edges: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Ignores Z and always returns the same labelled skeleton"""
    edges = np.asarray(edges)

    def g(Z):
        return edges.copy()

    return g
