"""
Per-stage Wasserstein objectives.

    V(d, g) = E[d(fake)] - E[d(real)]

The critic maximizes V (it minimizes -V plus the Lipschitz penalty), the
generator minimizes E[d(fake)]. The penalty is taken on per-sample random
interpolates of the field the stage generates.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from autodiff import DiffTensor, add, as_tensor, detach, grad, mean, mul, power, reduce_sum, sub

from .models import EmptyBatch, StageId


ScoreFn = Callable[[DiffTensor, object], DiffTensor]

GRADIENT_PENALTY = "gradient_penalty"
WEIGHT_CLIPPING = "weight_clipping"


@dataclass
class StageLoss:
    value: DiffTensor                   # V, maximized by the critic
    g_objective: DiffTensor             # E[d(fake)], minimized by the generator
    penalty: Optional[DiffTensor] = None
    penalty_weight: float = 0.0

    @property
    def d_loss(self) -> DiffTensor:
        """Quantity the critic minimizes"""
        loss = mul(self.value, -1.0)
        if self.penalty is not None:
            loss = add(loss, mul(self.penalty, self.penalty_weight))
        return loss

    @property
    def wasserstein_estimate(self) -> float:
        return self.value.item()


def gradient_penalty(score_fn: ScoreFn, real: np.ndarray, fake: np.ndarray, batch,
                     rng: np.random.Generator) -> DiffTensor:
    """mean over samples of (||grad_x d(x)|| - 1)^2 at x = eps * real + (1 - eps) * fake"""
    b = real.shape[0]
    eps = rng.random((b,) + (1,) * (real.ndim - 1))
    interpolates = DiffTensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    scores = score_fn(interpolates, batch)
    gradients = grad(reduce_sum(scores), [interpolates], create_graph=True)[0]
    axes = tuple(range(1, real.ndim))
    norms = power(add(reduce_sum(mul(gradients, gradients), axis=axes), 1e-12), 0.5)
    return mean(power(sub(norms, 1.0), 2.0))


def wgan_stage_loss(stage: StageId, real, fake, score_fn: ScoreFn, batch=None,
                    rng: Optional[np.random.Generator] = None, lipschitz: str = GRADIENT_PENALTY,
                    penalty_weight: float = 10.0) -> StageLoss:
    """
    Critic and generator objectives of one stage

    Args:
        stage: Which field (A, X or W) real and fake hold
        real: Data value of that field, (B, ...)
        fake: Generated value, (B, ...); differentiable for the generator step
        score_fn: Critic, (field, batch) -> (B,) scores
        batch: Conditioning data handed to the critic (teacher forcing)
        rng: Source of interpolation weights; no penalty without it
        lipschitz: "gradient_penalty" adds the penalty term; "weight_clipping" leaves it out

    Raises:
        EmptyBatch when either batch has no samples
    """
    real, fake = as_tensor(real), as_tensor(fake)
    if real.size == 0 or fake.size == 0 or real.shape[0] == 0 or fake.shape[0] == 0:
        raise EmptyBatch(f"Stage {stage.value} loss on an empty batch")

    d_real = mean(score_fn(real, batch))
    d_fake = mean(score_fn(fake, batch))
    value = sub(d_fake, d_real)

    penalty = None
    if lipschitz == GRADIENT_PENALTY and rng is not None:
        penalty = gradient_penalty(score_fn, real.values, detach(fake).values, batch, rng)
    return StageLoss(value=value, g_objective=d_fake, penalty=penalty, penalty_weight=penalty_weight)


def clip_weights(parameters: Dict[str, DiffTensor], clip_value: float) -> None:
    for tensor in parameters.values():
        np.clip(tensor.values, -clip_value, clip_value, out=tensor.values)
