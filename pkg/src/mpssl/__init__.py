"""Semi-supervised training with synthetic unlabeled data meta-searched from a frozen
conditional generator, plus the baselines, ablations and oracle checks around it."""
from __future__ import annotations

from .classifier import Classifier
from .foundation import (FoundationGenerator, FoundationSpec, TaskSpec, generate, make_foundation_domain,
                         make_generator, make_target_task, sample_latent)
from .latent_search import ConditionalMapper, LabelConverter, synthesize_unlabeled
from .lmo import InnerStepConfig, OuterStepConfig, lmo_step
from .trainer import TrainLoopConfig, train, train_baseline, train_mpssl

__version__ = "0.1.0"

__all__ = [
    "Classifier", "ConditionalMapper", "FoundationGenerator", "FoundationSpec", "InnerStepConfig", "LabelConverter",
    "OuterStepConfig", "TaskSpec", "TrainLoopConfig", "generate", "lmo_step", "make_foundation_domain",
    "make_generator", "make_target_task", "sample_latent", "synthesize_unlabeled", "train", "train_baseline",
    "train_mpssl",
]
