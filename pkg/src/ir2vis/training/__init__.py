"""Losses, training recipes and evaluation."""
from .config import REFERENCE_DEFAULTS, RECIPE_FILTER, RECIPES, TrainConfig, stage_boundaries
from .evaluation import evaluate, run_predictor, score_predictions, worker_count
from .log import TrainLog
from .losses import (
    composite_generator_loss,
    discriminator_loss,
    gan_losses,
    generator_adversarial_loss,
    l1_loss,
    ssim_loss,
)
from .recipes import score_model, train_cgan, train_unet, train_unetpp

__all__ = [
    "REFERENCE_DEFAULTS", "RECIPES", "RECIPE_FILTER", "TrainConfig", "TrainLog", "composite_generator_loss",
    "discriminator_loss", "evaluate", "gan_losses", "generator_adversarial_loss", "l1_loss", "run_predictor",
    "score_model", "score_predictions", "ssim_loss", "stage_boundaries", "train_cgan", "train_unet",
    "train_unetpp", "worker_count",
]
