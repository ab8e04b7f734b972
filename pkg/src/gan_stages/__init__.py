"""Three-stage permutation-equivariant GAN"""
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from .models import (CheckpointError, Critic, DivergedLoss, EmptyBatch, EmptyDataset, GeneratorOutput,
                     ModelParams, NEmpty, Stage1Generator, Stage2Generator, Stage3Generator, StageError,
                     StageId, UntrainedStage, build_model, sample_latent, stage1_generator,
                     stage2_generator, stage3_generator)
from .losses import StageLoss, clip_weights, gradient_penalty, wgan_stage_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .training import Adam, TrainingLog, TrainingResult, train_stage
from .pipeline import GenerationPipeline, generate

__all__ = ['CheckpointError', 'Critic', 'DivergedLoss', 'EmptyBatch', 'EmptyDataset', 'GeneratorOutput',
           'ModelParams', 'NEmpty', 'Stage1Generator', 'Stage2Generator', 'Stage3Generator', 'StageError',
           'StageId', 'UntrainedStage', 'build_model', 'sample_latent', 'stage1_generator',
           'stage2_generator', 'stage3_generator', 'StageLoss', 'clip_weights', 'gradient_penalty',
           'wgan_stage_loss', 'load_checkpoint', 'save_checkpoint', 'Adam', 'TrainingLog',
           'TrainingResult', 'train_stage', 'GenerationPipeline', 'generate']
