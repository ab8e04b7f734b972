"""
Stage Training Tests
====================

Smoke runs of every stage, teacher forcing, Lipschitz modes, logs,
checkpoints and the optimizer.
"""

import pytest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import math

import numpy as np

from autodiff import Tape, backward, mul, parameter, reduce_sum, sub
from dataset import MoleculeDataset
from gan_stages import (Adam, DivergedLoss, EmptyDataset, StageId, TrainingLog, load_checkpoint,
                        train_stage)
from gan_stages import models, training


# SUITE 1: Smoke runs

class TestTrainStage:
    """A couple of steps per stage on a tiny model"""

    @pytest.mark.parametrize("stage", list(StageId))
    def test_runs_and_logs(self, stage, small_dataset, tiny_config):
        """Every step is logged with finite losses"""
        result = train_stage(stage, small_dataset, tiny_config)
        assert result.steps == tiny_config.max_steps
        assert [r.step for r in result.log.records] == list(range(tiny_config.max_steps))
        for record in result.log.records:
            assert math.isfinite(record.d_loss) and math.isfinite(record.g_loss)
            assert math.isfinite(record.wasserstein_estimate)

    def test_parameters_change(self, small_dataset, tiny_config):
        """Training moves the weights it was given"""
        model = models.build_model(StageId.NODE_ATTRS, tiny_config, len(small_dataset.vocab))
        before = {k: v.values.copy() for k, v in model.named_parameters().items()}
        train_stage(StageId.NODE_ATTRS, small_dataset, tiny_config, model=model)
        after = model.named_parameters()
        assert any(not np.array_equal(before[k], after[k].values) for k in before)

    def test_deterministic(self, small_dataset, tiny_config):
        """Same seed, same log"""
        first = train_stage(StageId.EDGE_ATTRS, small_dataset, tiny_config).log.records
        second = train_stage(StageId.EDGE_ATTRS, small_dataset, tiny_config).log.records
        assert first == second

    def test_empty_dataset(self, small_dataset, tiny_config):
        with pytest.raises(EmptyDataset):
            train_stage(StageId.NODE_ATTRS, MoleculeDataset(small_dataset.vocab, []), tiny_config)

    def test_diverged_loss(self, small_dataset, tiny_config, monkeypatch):
        """A non-finite critic loss stops training"""
        monkeypatch.setattr(training, "_critic_step", lambda *args: (float("nan"), 0.0))
        with pytest.raises(DivergedLoss) as e:
            train_stage(StageId.NODE_ATTRS, small_dataset, tiny_config)
        assert e.value.step == 0


# SUITE 2: Teacher forcing

class TestTeacherForcing:
    """Conditioning inputs come from the data, never from another stage"""

    def test_stage3_never_runs_stage2(self, small_dataset, tiny_config, monkeypatch):
        """Stage-2 generator calls fail loudly during stage-3 training"""
        def forbidden(*args, **kwargs):
            raise AssertionError("stage-2 generator used while training stage 3")

        monkeypatch.setattr(models.Stage2Generator, "logits", forbidden)
        monkeypatch.setattr(models, "stage2_generator", forbidden)
        train_stage(StageId.EDGE_ATTRS, small_dataset, tiny_config.replace(max_steps=1))

    def test_stage3_conditions_on_data_atoms(self, small_dataset, tiny_config, monkeypatch):
        """Every X seen by the stage-3 generator is a batch of training molecules"""
        seen = []
        original = models.Stage3Generator.logits

        def recording(self, Z, X, A):
            seen.append((np.array(getattr(X, "values", X)), np.array(getattr(A, "values", A))))
            return original(self, Z, X, A)

        monkeypatch.setattr(models.Stage3Generator, "logits", recording)
        train_stage(StageId.EDGE_ATTRS, small_dataset, tiny_config.replace(max_steps=1))
        known = {(g.X.astype(np.float64).tobytes(), g.A.astype(np.float64).tobytes()) for g in small_dataset}
        assert seen
        for X, A in seen:
            for x, a in zip(X, A):
                assert (x.tobytes(), a.tobytes()) in known


# SUITE 3: Lipschitz modes

class TestLipschitz:
    """Gradient penalty by default, clipping on request"""

    def test_weight_clipping_bounds_critic(self, small_dataset, tiny_config):
        config = tiny_config.replace(lipschitz="weight_clipping", clip_value=0.01)
        result = train_stage(StageId.NODE_ATTRS, small_dataset, config)
        for tensor in result.model.critic.named_parameters().values():
            assert np.abs(tensor.values).max() <= 0.01

    def test_penalty_mode_does_not_clip(self, small_dataset, tiny_config):
        """Glorot-initialized weights exceed the clip range and stay there"""
        result = train_stage(StageId.NODE_ATTRS, small_dataset, tiny_config)
        largest = max(np.abs(t.values).max() for t in result.model.critic.named_parameters().values())
        assert largest > 0.01


# SUITE 4: Logs and checkpoints

class TestPersistence:
    """Step logs and periodic checkpoints"""

    def test_log_file(self, small_dataset, tiny_config, tmp_path):
        """Tab-separated step log with a header"""
        path = tmp_path / "stage2.log"
        result = train_stage(StageId.NODE_ATTRS, small_dataset, tiny_config, log_path=path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step\td_loss\tg_loss\twasserstein_estimate"
        assert len(lines) == tiny_config.max_steps + 1
        loaded = TrainingLog.load(path)
        assert len(loaded) == len(result.log)
        for a, b in zip(loaded.records, result.log.records):
            assert a.step == b.step
            assert a.d_loss == pytest.approx(b.d_loss, rel=1e-9)

    def test_checkpoint_written(self, small_dataset, tiny_config, tmp_path):
        """The final checkpoint holds the trained parameters"""
        path = tmp_path / "stage3.ckpt"
        result = train_stage(StageId.EDGE_ATTRS, small_dataset, tiny_config, checkpoint_path=path)
        model, config, vocab = load_checkpoint(path)
        assert model.stage == StageId.EDGE_ATTRS
        assert vocab == small_dataset.vocab
        trained = result.model.named_parameters()
        for name, tensor in model.named_parameters().items():
            assert np.array_equal(tensor.values, trained[name].values)

    def test_resume_from_checkpoint(self, small_dataset, tiny_config, tmp_path):
        """A loaded model continues training"""
        path = tmp_path / "stage2.ckpt"
        train_stage(StageId.NODE_ATTRS, small_dataset, tiny_config, checkpoint_path=path)
        model, config, _ = load_checkpoint(path)
        result = train_stage(StageId.NODE_ATTRS, small_dataset, config, model=model)
        assert result.model is model


# SUITE 5: Optimizer

class TestAdam:
    """Bias-corrected first step and convergence"""

    def test_first_step_moves_by_learning_rate(self):
        """m / sqrt(v) is the gradient sign after one step"""
        x = parameter(np.array([2.0, -3.0]))
        opt = Adam({"x": x}, lr=0.1)
        with Tape():
            y = reduce_sum(mul(x, x))
        backward(y)
        opt.step()
        assert np.allclose(x.values, [1.9, -2.9])

    def test_minimizes_quadratic(self):
        x = parameter(np.array([0.0]))
        opt = Adam({"x": x}, lr=0.05)
        for _ in range(2000):
            opt.zero_grad()
            with Tape():
                y = reduce_sum(mul(sub(x, 3.0), sub(x, 3.0)))
            backward(y)
            opt.step()
        assert abs(x.values[0] - 3.0) < 0.2

    def test_skips_parameters_without_gradient(self):
        x = parameter(np.array([1.0]))
        Adam({"x": x}, lr=0.1).step()
        assert x.values[0] == 1.0
