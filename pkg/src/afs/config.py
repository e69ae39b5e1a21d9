"""Experiment configuration: a line-oriented ``key = value`` file.

Blank lines and ``#`` comments are ignored. Budgets and other reals may be
written as fractions (``8/255``), which are converted to input units when
the file is parsed. Lists are comma separated.

Key schema (defaults in parentheses):

    seed                   global seed (0); per-component seeds are derived from it
    output                 output directory (runs/default)
    data.source            synthetic | idx (synthetic)
    data.kind              gaussians | rings | tradeoff (tradeoff)
    data.n                 synthetic sample count (5000)
    data.margin            synthetic margin (0.15)
    data.dim               synthetic input dimension (20)
    data.sigma             synthetic noise (0.1)
    data.robust_dims       tradeoff: number of robust coordinates (8)
    data.robust_p          tradeoff: robust-coordinate agreement probability (0.8)
    data.levels            tradeoff: number of margin levels of the accurate coordinates (3)
    data.label_noise       fraction of flipped labels (0.05)
    data.images            idx: image file
    data.labels            idx: label file
    data.limit             idx: keep the first N samples (all)
    data.test_frac         test fraction (0.2)
    data.val_frac          validation fraction of the remaining training data (0.1)
    bank.budgets           training budgets, strictly increasing (0, 0.05, 0.1, 0.2, 0.3)
    train.*                any TrainConfig field except budget/seed (epochs, lr, hidden, ...);
                           train.eval_budget (early-stopping budget) defaults to eval.budget
    merger.*               any MergerTrainConfig field except seed (alpha, epsilon, epochs, ...)
    eval.budget            evaluation / Delta_z budget (0.2)
    eval.deltaz_samples    size of the Delta_z evaluation subset (512)
    eval.curve_budgets     budgets of the robustness curve (0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    eval.alphas            alpha sweep of the report (0, 0.25, 0.5, 0.75, 1)

Component seeds are ``derive_seed(seed, name)`` for the names "data",
"split", "bank", "merger" and "eval": the component name is hashed into the
seed sequence, so adding a component never changes another's stream.
"""
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import List, Optional

from .rng import derive_seed
from .stacking import MergerTrainConfig
from .training import TrainConfig

COMPONENTS = ("data", "split", "bank", "merger", "eval")


class ConfigError(ValueError):
    pass


def parse_real(text):
    """Decimal or fraction (``8/255``) to float."""
    text = text.strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {text!r}") from None


def parse_list(text):
    return [parse_real(t) for t in text.split(",") if t.strip()]


def parse_lines(text):
    """``key = value`` pairs in file order; later duplicates override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


@dataclass
class DataSpec:
    source: str = "synthetic"
    kind: str = "tradeoff"
    n: int = 5000
    margin: float = 0.15
    dim: int = 20
    sigma: float = 0.1
    robust_dims: int = 8
    robust_p: float = 0.8
    levels: int = 3
    label_noise: float = 0.05
    images: Optional[str] = None
    labels: Optional[str] = None
    limit: Optional[int] = None
    test_frac: float = 0.2
    val_frac: float = 0.1


@dataclass
class ExperimentConfig:
    seed: int = 0
    output: str = "runs/default"
    data: DataSpec = field(default_factory=DataSpec)
    budgets: List[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.3])
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15, hidden=64, feature_dim=32))
    merger: MergerTrainConfig = field(default_factory=lambda: MergerTrainConfig(epsilon=0.2, epochs=10, attack_steps=20))
    eval_budget: float = 0.2
    deltaz_samples: int = 512
    curve_budgets: List[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
    alphas: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])

    def component_seed(self, name):
        if name not in COMPONENTS:
            raise KeyError(f"unknown component {name!r}")
        return derive_seed(self.seed, name)

    def train_template(self):
        # early stopping watches robust validation accuracy at the evaluation budget
        stop = self.eval_budget if self.train.eval_budget is None else self.train.eval_budget
        return replace(self.train, seed=self.component_seed("bank"), eval_budget=stop)

    def merger_config(self, alpha=None):
        cfg = replace(self.merger, seed=self.component_seed("merger"))
        return cfg if alpha is None else replace(cfg, alpha=alpha)


def _coerce(kind, text):
    """Convert ``text`` to the type named by a dataclass field annotation."""
    kind = str(kind)
    if "int" in kind and "float" not in kind:
        value = parse_real(text)
        if value != int(value):
            raise ConfigError(f"expected an integer, got {text!r}")
        return int(value)
    if "float" in kind:
        return parse_real(text)
    if "bool" in kind:
        if text.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"expected true/false, got {text!r}")
        return text.lower() in ("true", "1")
    return text


def _set_fields(obj, prefix, pairs, skip=()):
    types = {f.name: f.type for f in fields(obj)}
    updates = {}
    for key, value in pairs.items():
        name = key[len(prefix):]
        if name in skip or name not in types:
            raise ConfigError(f"unknown key {key!r}")
        updates[name] = None if value.lower() == "none" else _coerce(types[name], value)
    return replace(obj, **updates)


def parse_config(text):
    pairs = parse_lines(text)
    cfg = ExperimentConfig()
    grouped = {"data.": {}, "train.": {}, "merger.": {}}
    for key, value in pairs.items():
        prefix = next((p for p in grouped if key.startswith(p)), None)
        if prefix:
            grouped[prefix][key] = value
        elif key == "seed":
            cfg.seed = _coerce("int", value)
        elif key == "output":
            cfg.output = value
        elif key == "bank.budgets":
            cfg.budgets = parse_list(value)
        elif key == "eval.budget":
            cfg.eval_budget = parse_real(value)
        elif key == "eval.deltaz_samples":
            cfg.deltaz_samples = _coerce("int", value)
        elif key == "eval.curve_budgets":
            cfg.curve_budgets = parse_list(value)
        elif key == "eval.alphas":
            cfg.alphas = parse_list(value)
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        cfg.data = _set_fields(cfg.data, "data.", grouped["data."])
        cfg.train = _set_fields(cfg.train, "train.", grouped["train."], skip=("budget", "seed", "lr_decay"))
        cfg.merger = _set_fields(cfg.merger, "merger.", grouped["merger."], skip=("seed",))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
