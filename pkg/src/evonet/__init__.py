"""Evolutionary architecture search for dense fault-diagnosis classifiers."""

from .core_nn import (
    Architecture,
    DnnModel,
    TrainConfig,
    classification_accuracy,
    cross_entropy,
    forward,
    param_count,
    quasi_newton_minimize,
    train_source_model,
)
from .data import LabeledDataset
from .domain_adapt import AdaptConfig, classwise_mmd, combined_cost, finetune
from .evo import EvoConfig, FitnessRecord, evolve
from .net2net import deepen, transform_to_architecture, widen_layer

__version__ = "0.1.0"
