"""Sparse-moment optimization toolkit.

A self-contained numpy implementation of a sparse first/second-moment
optimizer with dynamic support selection, its dense Adam limit, low-rank
training baselines (LoRA, ReLoRA, GaLore), a two-layer MLP with manual
backprop, IDX/flat dataset loading with few-shot sampling, closed-form
memory accounting, and a reproducible experiment harness with CLI.
"""

from .data import Dataset, FewShotTask, load_flat, load_idx, sample_few_shot
from .estimator import SparseMlpClassifier
from .harness import ExperimentConfig, aggregate, run_experiment, run_seed
from .linalg import numerical_rank
from .lowrank import GaloreOptimizer, LoraOptimizer
from .membudget import LayerShape, MemoryRow, MethodSpec, budget, budget_model
from .mlp import Mlp, backward, cross_entropy, forward, init_mlp
from .optim import AdamOptimizer, SparseAdam, SparseBuffer, SparseHyper
from .rng import Rng
from .selection import random_m, top_m_indices

__version__ = "0.1.0"

__all__ = [
    "AdamOptimizer", "Dataset", "ExperimentConfig", "FewShotTask",
    "GaloreOptimizer", "LayerShape", "LoraOptimizer", "MemoryRow",
    "MethodSpec", "Mlp", "Rng", "SparseAdam", "SparseBuffer", "SparseHyper",
    "SparseMlpClassifier", "aggregate", "backward", "budget", "budget_model",
    "cross_entropy", "forward", "init_mlp", "load_flat", "load_idx",
    "numerical_rank", "random_m", "run_experiment", "run_seed",
    "sample_few_shot", "top_m_indices",
]
