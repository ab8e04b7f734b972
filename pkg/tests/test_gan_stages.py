"""
Stage Model Tests
=================

Generators (equivariance, masks, symmetry), critics (invariance),
Wasserstein objectives, checkpoints and the generation pipeline.
"""

import pytest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np

from autodiff import Tape, backward, gradient_check, mul, reduce_sum, softmax
from config import StageConfig
from gan_stages import (CheckpointError, EmptyBatch, GenerationPipeline, NEmpty, StageId, UntrainedStage,
                        build_model, clip_weights, gradient_penalty, load_checkpoint, sample_latent,
                        save_checkpoint, stage1_generator, stage2_generator, stage3_generator,
                        wgan_stage_loss)
from gan_stages.models import categorical_sample, gumbel_noise, one_hot_argmax
from dataset import GraphBatch
from graph_core import Permutation, apply_permutation, validate
from verify import check_equivariance


TOLERANCE = 1e-9


def ring(n: int) -> np.ndarray:
    shift = np.roll(np.eye(n), 1, axis=1)
    return shift + shift.T


@pytest.fixture
def models(tiny_config, small_dataset):
    """Freshly initialized models of every stage over the small vocabulary"""
    k = len(small_dataset.vocab)
    rng = np.random.default_rng(3)
    return {stage: build_model(stage, tiny_config, k, rng) for stage in StageId}


# SUITE 1: Stage identifiers and latents

class TestStageId:
    """Parsing and ordering"""

    @pytest.mark.parametrize("text, stage", [("1", StageId.SKELETON), ("node_attrs", StageId.NODE_ATTRS),
                                             ("w", StageId.EDGE_ATTRS), (3, StageId.EDGE_ATTRS)])
    def test_parse(self, text, stage):
        assert StageId.parse(text) == stage

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            StageId.parse("4")

    def test_order(self):
        """Skeleton before node attributes before edge attributes"""
        assert sorted([StageId.EDGE_ATTRS, StageId.SKELETON, StageId.NODE_ATTRS]) == list(StageId)

    def test_empty_latent_set(self, rng):
        """n = 0 is rejected"""
        with pytest.raises(NEmpty):
            sample_latent(0, 4, rng)

    def test_latent_shapes(self, rng):
        assert sample_latent(3, 4, rng).shape == (3, 4)
        assert sample_latent(3, 4, rng, batch=2).shape == (2, 3, 4)


# SUITE 2: Generators

class TestGenerators:
    """Outputs are equivariant, symmetric and masked by the skeleton"""

    def test_stage1_equivariant(self, models, rng):
        """Edge probabilities move as a matrix"""
        generator = models[StageId.SKELETON].generator
        report = check_equivariance(lambda Z: generator.probabilities(Z), rng.standard_normal((5, 4)), 10, rng,
                                    output_axes=2)
        assert report.passed(TOLERANCE), report.render()

    def test_stage1_skeleton(self, models, rng):
        """Binary, symmetric, empty diagonal"""
        out = stage1_generator(rng.standard_normal((6, 4)), models[StageId.SKELETON].generator)
        A = out.sample
        assert set(np.unique(A)) <= {0.0, 1.0}
        assert np.array_equal(A, A.T)
        assert np.all(np.diag(A) == 0)
        assert np.array_equal(A, (out.probs > 0.5) * (1 - np.eye(6)))

    def test_stage1_sampled_skeleton_symmetric(self, models, rng):
        """Bernoulli draws are mirrored across the diagonal"""
        A = stage1_generator(rng.standard_normal((2, 6, 4)), models[StageId.SKELETON].generator,
                             sample=True, rng=rng).sample
        assert np.array_equal(A, np.swapaxes(A, 1, 2))

    def test_stage2_equivariant(self, models, rng):
        """P(X | Z, A) moves with its nodes"""
        generator = models[StageId.NODE_ATTRS].generator
        report = check_equivariance(lambda Z, A: generator.probabilities(Z, A),
                                    (rng.standard_normal((6, 4)), ring(6)), 10, rng, input_axes=(1, 2))
        assert report.passed(TOLERANCE), report.render()

    def test_stage2_distributions(self, models, small_dataset, rng):
        """Rows are distributions over the vocabulary; the sample is one-hot"""
        out = stage2_generator(rng.standard_normal((5, 4)), ring(5), models[StageId.NODE_ATTRS].generator)
        assert out.probs.shape == (5, len(small_dataset.vocab))
        assert np.allclose(out.probs.sum(axis=1), 1.0)
        assert np.array_equal(out.sample.sum(axis=1), np.ones(5))

    def test_zero_weights_give_uniform_distribution(self, tiny_config, small_dataset, rng):
        """All-zero parameters put equal mass on every atom type"""
        k = len(small_dataset.vocab)
        model = build_model(StageId.NODE_ATTRS, tiny_config, k, rng)
        for p in model.generator.named_parameters().values():
            p.values[...] = 0.0
        probs = stage2_generator(rng.standard_normal((4, 4)), ring(4), model.generator).probs
        assert np.allclose(probs, 1.0 / k)

    def test_stage3_equivariant(self, models, small_dataset, rng):
        """P(W | Z, X, A) moves as a matrix"""
        generator = models[StageId.EDGE_ATTRS].generator
        k = len(small_dataset.vocab)
        X = np.eye(k)[rng.integers(k, size=5)]
        report = check_equivariance(lambda Z, X, A: generator.probabilities(Z, X, A),
                                    (rng.standard_normal((5, 4)), X, ring(5)), 10, rng,
                                    input_axes=(1, 1, 2), output_axes=2)
        assert report.passed(TOLERANCE), report.render()

    def test_stage3_symmetric_and_masked(self, models, small_dataset, rng):
        """W is symmetric, one-hot on edges and zero elsewhere"""
        k = len(small_dataset.vocab)
        A = ring(5)
        X = np.eye(k)[rng.integers(k, size=5)]
        out = stage3_generator(rng.standard_normal((5, 4)), X, A, models[StageId.EDGE_ATTRS].generator)
        assert np.allclose(out.probs, np.swapaxes(out.probs, 0, 1))
        assert np.array_equal(out.sample, np.swapaxes(out.sample, 0, 1))
        assert np.array_equal(out.sample.sum(axis=-1), A)

    def test_stage3_empty_skeleton(self, models, small_dataset, rng):
        """No edges, no bond types"""
        k = len(small_dataset.vocab)
        X = np.eye(k)[np.zeros(4, dtype=int)]
        out = stage3_generator(rng.standard_normal((4, 4)), X, np.zeros((4, 4)), models[StageId.EDGE_ATTRS].generator)
        assert not out.sample.any()
        assert not out.probs.any()

    def test_discretization_helpers(self, rng):
        """argmax keeps the first maximum; symmetric noise mirrors the upper triangle"""
        assert np.array_equal(one_hot_argmax(np.array([[0.4, 0.4, 0.2]])), [[1.0, 0.0, 0.0]])
        draws = categorical_sample(np.array([[0.0, 1.0, 0.0]] * 5), rng)
        assert np.array_equal(draws, [[0.0, 1.0, 0.0]] * 5)
        noise = gumbel_noise((2, 4, 4, 3), rng, symmetric=True)
        assert np.array_equal(noise, np.swapaxes(noise, 1, 2))


# SUITE 3: Critics

class TestCritics:
    """Scores ignore node order"""

    @pytest.mark.parametrize("stage", list(StageId))
    def test_invariant(self, stage, models, small_dataset, rng):
        """d(G^pi) = d(G) on data batches"""
        graph = small_dataset[0]
        critic = models[stage].critic
        pi = Permutation.random(graph.n, rng)
        batch = GraphBatch.from_graphs([graph])
        moved = GraphBatch.from_graphs([apply_permutation(graph, pi)])
        field = stage.field
        original = critic.score(getattr(batch, field), batch).values
        permuted = critic.score(getattr(moved, field), moved).values
        assert original.shape == (1,)
        assert np.allclose(original, permuted, atol=TOLERANCE)


# SUITE 4: Objectives

class TestLosses:
    """V = E[d(fake)] - E[d(real)] and the Lipschitz terms"""

    def test_empty_batch(self, models):
        critic = models[StageId.SKELETON].critic
        with pytest.raises(EmptyBatch):
            wgan_stage_loss(StageId.SKELETON, np.zeros((0, 3, 3)), np.zeros((0, 3, 3)), critic.score)

    def test_value_and_generator_objective(self):
        """A critic returning the sum of the field"""
        score = lambda x, batch: reduce_sum(x, axis=(1, 2))
        real, fake = np.ones((2, 3, 3)), np.zeros((2, 3, 3))
        loss = wgan_stage_loss(StageId.SKELETON, real, fake, score)
        assert loss.wasserstein_estimate == -9.0
        assert loss.g_objective.item() == 0.0
        assert loss.d_loss.item() == 9.0
        assert loss.penalty is None

    @pytest.mark.parametrize("scale, expected", [(0.5, 0.0), (1.0, 1.0)])
    def test_gradient_penalty_of_linear_critic(self, scale, expected, rng):
        """For d(x) = <c, x> the penalty is (||c|| - 1)^2"""
        c = np.full((2, 2), scale)
        score = lambda x, batch: reduce_sum(mul(x, c), axis=(1, 2))
        with Tape():
            penalty = gradient_penalty(score, np.ones((3, 2, 2)), np.zeros((3, 2, 2)), None, rng)
        assert penalty.item() == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("stage", list(StageId))
    def test_stage_loss_gradient(self, stage, models, small_dataset, rng):
        """d V / d fake matches finite differences through each stage's critic"""
        batch = small_dataset.sample_batch(2, rng)
        critic = models[stage].critic
        real = getattr(batch, stage.field)
        if stage == StageId.SKELETON:
            upper = np.triu(rng.uniform(0.1, 0.9, real.shape), k=1)
            fake = upper + np.swapaxes(upper, 1, 2)
        elif stage == StageId.NODE_ATTRS:
            fake = softmax(rng.standard_normal(real.shape)).values
        else:
            logits = rng.standard_normal(real.shape)
            fake = softmax(logits + np.swapaxes(logits, 1, 2)).values * batch.A[..., None]
        report = gradient_check(lambda t: wgan_stage_loss(stage, real, t, critic.score, batch).value, fake,
                                step=1e-5)
        assert report.passed(1e-4), report
        assert report.checked > 0

    def test_penalty_gradient_reaches_critic(self, models, small_dataset, rng):
        """Double backward: penalty gradient in a critic weight matches finite differences"""
        batch = small_dataset.sample_batch(2, rng)
        critic = models[StageId.EDGE_ATTRS].critic
        fake = softmax(rng.standard_normal(batch.W.shape)).values * batch.A[..., None]
        weight = critic.head.layers[0].weight

        def penalty():
            with Tape():
                return gradient_penalty(critic.score, batch.W, fake, batch, np.random.default_rng(7))

        root = penalty()
        backward(root)
        step = 1e-6
        for index in [(0, 0), (1, 2), (3, 1)]:
            original = weight.values[index]
            weight.values[index] = original + step
            up = penalty().item()
            weight.values[index] = original - step
            down = penalty().item()
            weight.values[index] = original
            numeric = (up - down) / (2 * step)
            assert weight.grad[index] == pytest.approx(numeric, rel=1e-4, abs=1e-7)

    def test_clip_weights(self, models):
        """Every critic value lands in [-c, c]"""
        params = models[StageId.NODE_ATTRS].critic.named_parameters()
        clip_weights(params, 0.01)
        assert all(np.abs(p.values).max() <= 0.01 for p in params.values())


# SUITE 5: Checkpoints

class TestCheckpoint:
    """Bit-exact persistence with integrity checks"""

    @pytest.mark.parametrize("stage", list(StageId))
    def test_round_trip(self, stage, models, tiny_config, small_dataset, tmp_path):
        """Saved then loaded parameters are bit-identical"""
        path = tmp_path / f"stage{stage.value}.ckpt"
        save_checkpoint(models[stage], tiny_config, small_dataset.vocab, path)
        model, config, vocab = load_checkpoint(path)
        assert model.stage == stage
        assert config == tiny_config
        assert vocab == small_dataset.vocab
        original = models[stage].named_parameters()
        for name, tensor in model.named_parameters().items():
            assert original[name].values.tobytes() == tensor.values.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_digest_mismatch(self, models, tiny_config, small_dataset, tmp_path):
        """A corrupted config digest is detected"""
        path = tmp_path / "stage2.ckpt"
        save_checkpoint(models[StageId.NODE_ATTRS], tiny_config, small_dataset.vocab, path)
        data = bytearray(path.read_bytes())
        data[7] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, models, tiny_config, small_dataset, tmp_path):
        path = tmp_path / "stage3.ckpt"
        save_checkpoint(models[StageId.EDGE_ATTRS], tiny_config, small_dataset.vocab, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


# SUITE 6: Generation pipeline

class TestPipeline:
    """Skeleton, then X, then W"""

    def test_missing_stage(self, models, small_dataset, rng):
        """Generation without a stage-3 model is refused"""
        pipeline = GenerationPipeline(small_dataset.vocab, models[StageId.NODE_ATTRS], None)
        with pytest.raises(UntrainedStage):
            pipeline.generate(1, rng, skeletons=small_dataset.skeletons())

    def test_stage1_source_needs_model(self, models, small_dataset, rng):
        pipeline = GenerationPipeline(small_dataset.vocab, models[StageId.NODE_ATTRS], models[StageId.EDGE_ATTRS])
        with pytest.raises(UntrainedStage):
            pipeline.generate(1, rng, source="stage1", node_counts=[4])

    def test_wrong_stage_slot(self, models, small_dataset):
        with pytest.raises(ValueError):
            GenerationPipeline(small_dataset.vocab, models[StageId.EDGE_ATTRS], models[StageId.NODE_ATTRS])

    def test_fixed_skeleton(self, models, small_dataset, rng):
        """Every output keeps the skeleton it was given and is a valid encoding"""
        pipeline = GenerationPipeline(small_dataset.vocab, models[StageId.NODE_ATTRS], models[StageId.EDGE_ATTRS])
        graphs = pipeline.generate(5, rng, skeletons=[ring(6)])
        assert len(graphs) == 5
        for graph in graphs:
            validate(graph)
            assert np.array_equal(graph.A, ring(6))

    def test_deterministic(self, models, small_dataset):
        """Same seed, same molecules"""
        pipeline = GenerationPipeline(small_dataset.vocab, models[StageId.NODE_ATTRS], models[StageId.EDGE_ATTRS],
                                      models[StageId.SKELETON])
        runs = []
        for _ in range(2):
            graphs = pipeline.generate(4, np.random.default_rng(11), source="stage1", node_counts=[3, 4, 5])
            runs.append([(g.A.tobytes(), g.X.tobytes(), g.W.tobytes()) for g in graphs])
        assert runs[0] == runs[1]

    def test_shared_latent(self, models, small_dataset, rng):
        """shared_latent reuses the stage-2 latent set for stage 3"""
        config = StageConfig(latent_dim=4, shared_latent=True)
        pipeline = GenerationPipeline(small_dataset.vocab, models[StageId.NODE_ATTRS], models[StageId.EDGE_ATTRS],
                                      config=config)
        graph = pipeline.complete(ring(4), rng)
        assert graph.n == 4
