"""
Stage Training
==============

Alternating critic/generator updates for one stage with teacher forcing:
the conditioning inputs (A for stage 2; A and X for stage 3) always come
from the sampled data batch, never from another stage's generator.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import math
from pathlib import Path

import numpy as np
from tqdm import tqdm

from autodiff import DiffTensor, Tape, backward, detach, mean, no_record
from config import StageConfig

from . import models
from .checkpoint import save_checkpoint
from .losses import WEIGHT_CLIPPING, clip_weights, wgan_stage_loss
from .models import DivergedLoss, EmptyDataset, ModelParams, StageId


class Adam:
    """Adaptive-moment gradient descent over named DiffTensor leaves"""

    def __init__(self, parameters: Dict[str, DiffTensor], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.5, 0.9), eps: float = 1e-8):
        self.parameters = parameters
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in parameters.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in parameters.items()}

    def zero_grad(self) -> None:
        for p in self.parameters.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.parameters.items():
            if p.grad is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad ** 2
            p.values -= self.lr * (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + self.eps)


@dataclass
class LogRecord:
    step: int
    d_loss: float
    g_loss: float
    wasserstein_estimate: float


@dataclass
class TrainingLog:
    """Per-step losses; written as step<TAB>d_loss<TAB>g_loss<TAB>wasserstein_estimate"""
    records: List[LogRecord] = field(default_factory=list)

    HEADER = "step\td_loss\tg_loss\twasserstein_estimate"

    def record(self, step: int, d_loss: float, g_loss: float, estimate: float) -> LogRecord:
        entry = LogRecord(step, d_loss, g_loss, estimate)
        self.records.append(entry)
        return entry

    @staticmethod
    def format(entry: LogRecord) -> str:
        return f"{entry.step}\t{entry.d_loss:.10g}\t{entry.g_loss:.10g}\t{entry.wasserstein_estimate:.10g}"

    def save(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.HEADER + "\n")
            for entry in self.records:
                f.write(self.format(entry) + "\n")

    @classmethod
    def load(cls, path: Path) -> "TrainingLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip() or line.startswith("step"):
                    continue
                step, d_loss, g_loss, estimate = line.rstrip("\n").split("\t")
                log.record(int(step), float(d_loss), float(g_loss), float(estimate))
        return log

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class TrainingResult:
    model: ModelParams
    log: TrainingLog
    steps: int


def _critic_step(model: ModelParams, optimizer: Adam, dataset, config: StageConfig, tau: float,
                 rng: np.random.Generator):
    batch = dataset.sample_batch(config.batch_size, rng)
    Z = models.sample_latent(batch.n, config.latent_dim, rng, batch=batch.size)
    with no_record():
        fake = model.generator.relaxed(Z, batch, tau, rng, config.gumbel_noise)
    real = getattr(batch, model.stage.field)

    optimizer.zero_grad()
    with Tape():
        loss = wgan_stage_loss(model.stage, real, detach(fake), model.critic.score, batch, rng,
                               config.lipschitz, config.penalty_weight)
        d_loss = loss.d_loss
    backward(d_loss)
    optimizer.step()
    if config.lipschitz == WEIGHT_CLIPPING:
        clip_weights(optimizer.parameters, config.clip_value)
    return d_loss.item(), loss.wasserstein_estimate


def _generator_step(model: ModelParams, optimizer: Adam, dataset, config: StageConfig, tau: float,
                    rng: np.random.Generator) -> float:
    batch = dataset.sample_batch(config.batch_size, rng)
    Z = models.sample_latent(batch.n, config.latent_dim, rng, batch=batch.size)
    optimizer.zero_grad()
    with Tape():
        fake = model.generator.relaxed(Z, batch, tau, rng, config.gumbel_noise)
        g_loss = mean(model.critic.score(fake, batch))
    backward(g_loss)
    optimizer.step()
    return g_loss.item()


def train_stage(stage: StageId, dataset, config: StageConfig, model: Optional[ModelParams] = None,
                log_path: Optional[Path] = None, verbose: bool = False,
                checkpoint_path: Optional[Path] = None) -> TrainingResult:
    """
    Train one stage on `dataset` (a MoleculeDataset)

    Args:
        stage: Stage to train; stages are trained independently
        dataset: Training molecules
        config: Hyperparameters; `max_steps` generator updates, `critic_steps` critic updates each
        model: Parameters to continue from (fresh ones otherwise)
        log_path: Step log written at the end (and at every checkpoint)
        checkpoint_path: Written every `checkpoint_every` steps and at the end

    Raises:
        EmptyDataset, DivergedLoss
    """
    if len(dataset) == 0:
        raise EmptyDataset("Cannot train on an empty dataset")

    rng = np.random.default_rng(config.seed)
    if model is None:
        model = models.build_model(stage, config, len(dataset.vocab), rng)
    critic_params = {f"critic.{k}": v for k, v in model.critic.named_parameters().items()}
    generator_params = {f"generator.{k}": v for k, v in model.generator.named_parameters().items()}
    critic_opt = Adam(critic_params, config.learning_rate, (config.beta1, config.beta2))
    generator_opt = Adam(generator_params, config.learning_rate, (config.beta1, config.beta2))

    log = TrainingLog()
    steps = range(config.max_steps)
    if verbose:
        steps = tqdm(steps, desc=f"stage {stage.value}", unit="step")

    for step in steps:
        tau = config.temperature(step)
        d_loss, estimate = math.nan, math.nan
        for _ in range(config.critic_steps):
            d_loss, estimate = _critic_step(model, critic_opt, dataset, config, tau, rng)
        g_loss = _generator_step(model, generator_opt, dataset, config, tau, rng)

        if not (math.isfinite(d_loss) and math.isfinite(g_loss)):
            raise DivergedLoss(step, d_loss, g_loss)
        log.record(step, d_loss, g_loss, estimate)
        if verbose:
            steps.set_postfix(d=f"{d_loss:.3f}", g=f"{g_loss:.3f}", w=f"{estimate:.3f}")

        if checkpoint_path is not None and (step + 1) % config.checkpoint_every == 0:
            _save(model, config, dataset.vocab, checkpoint_path, log, log_path)

    if checkpoint_path is not None:
        _save(model, config, dataset.vocab, checkpoint_path, log, log_path)
    elif log_path is not None:
        log.save(log_path)
    return TrainingResult(model, log, config.max_steps)


def _save(model, config, vocab, checkpoint_path, log, log_path) -> None:
    save_checkpoint(model, config, vocab, checkpoint_path)
    if log_path is not None:
        log.save(log_path)
