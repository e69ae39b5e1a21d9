"""Adversarial feature stacking: a bank of extractors adversarially trained at
different budgets, frozen, concatenated, and merged by a linear layer trained
on a mix of clean and adversarial loss.

Everything runs on a small numpy reverse-mode autodiff engine (``afs.tensor``).
"""
from .attacks import AttackConfig, fgsm, pgd_attack, project
from .checkpoint import MergerCheckpoint, load_bank, load_checkpoint, save_bank, save_checkpoint
from .config import ExperimentConfig, load_config, parse_config
from .data import Dataset, gen_synthetic, load_idx, split_dataset
from .stacking import BankManifest, Merger, MergerTrainConfig, StackedModel, train_merger
from .training import BankSpec, TrainConfig, train_bank, train_extractor

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "fgsm", "pgd_attack", "project",
    "MergerCheckpoint", "load_bank", "load_checkpoint", "save_bank", "save_checkpoint",
    "ExperimentConfig", "load_config", "parse_config",
    "Dataset", "gen_synthetic", "load_idx", "split_dataset",
    "BankManifest", "Merger", "MergerTrainConfig", "StackedModel", "train_merger",
    "BankSpec", "TrainConfig", "train_bank", "train_extractor",
]
