"""PGD adversarial training of single extractors and of budget-spaced banks."""
import copy
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .attacks import AttackConfig, attack_loss_for, pgd_attack, robust_correct
from .models import ExtractorNet, LinearHead, SingleNetwork, frozen, init_extractor, init_head
from .optim import SGD
from .rng import SeededRng, derive_seed
from .stacking import BankEntry, BankManifest
from .tensor import Tensor, cross_entropy


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    lr_decay: Optional[Dict[int, float]] = None  # epoch -> factor; None -> x0.1 at 75% of epochs
    budget: float = 0.0
    budget_mode: str = "fixed"  # or "uniform"
    budget_lo: float = 0.0
    budget_hi: float = 0.0
    attack_steps: int = 10
    step_size: Optional[float] = None
    eval_budget: Optional[float] = None  # early-stopping budget; None -> the training budget
    eval_steps: int = 10
    seed: int = 0
    hidden: int = 256
    depth: int = 2
    feature_dim: int = 64

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError(f"TrainConfig: budget must be >= 0, got {self.budget}")
        if self.budget_mode not in ("fixed", "uniform"):
            raise ValueError(f"TrainConfig: unknown budget_mode {self.budget_mode!r}")
        if self.budget_mode == "uniform" and not (0 <= self.budget_lo < self.budget_hi):
            raise ValueError("TrainConfig: uniform budgets need 0 <= budget_lo < budget_hi")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("TrainConfig: epochs and batch_size must be positive")

    @property
    def nominal_budget(self):
        return self.budget if self.budget_mode == "fixed" else self.budget_hi

    @property
    def stop_budget(self):
        return self.nominal_budget if self.eval_budget is None else self.eval_budget

    def decay_schedule(self):
        if self.lr_decay is not None:
            return {int(k): float(v) for k, v in self.lr_decay.items()}
        return {int(0.75 * self.epochs): 0.1}

    def lr_at(self, epoch):
        lr = self.lr
        for e, factor in self.decay_schedule().items():
            if epoch >= e:
                lr *= factor
        return lr


@dataclass
class ExtractorCheckpoint:
    net: ExtractorNet
    head: LinearHead
    budget: float
    seed: int
    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def model(self):
        return SingleNetwork(self.net, self.head)


def budget_for_batch(cfg, epoch, batch):
    if cfg.budget_mode == "fixed":
        return cfg.budget
    return float(SeededRng(cfg.seed).child("budget", epoch, batch).uniform(cfg.budget_lo, cfg.budget_hi, None))


def accuracy(model, x, y, cfg=None, rng=None, ids=None):
    """Percent of samples classified correctly, clean or under the attack ``cfg``."""
    if not len(y):
        raise ValueError("accuracy: empty evaluation set")
    if cfg is None:
        cfg = AttackConfig(0.0, 0)
    return 100.0 * robust_correct(model, x, y, cfg, rng, ids).mean()


def _snapshot(net, head):
    return copy.deepcopy(net), copy.deepcopy(head)


def train_extractor(cfg, data, verbose=False, out=None):
    """PGD-AT of one extractor+head; returns the epoch with the best robust validation accuracy.

    Each batch is attacked against the network's own head at the batch's
    budget, then one SGD step is taken on the perturbed batch. With
    ``verbose``, one ``epoch<TAB>clean_val<TAB>robust_val`` line per epoch is
    written to ``out`` (stdout by default).
    """
    x_tr, y_tr, idx_tr = data.part("train")
    x_val, y_val, idx_val = data.part("val")
    if not len(idx_tr):
        raise ValueError("train_extractor: empty training split")
    if not len(idx_val):
        x_val, y_val, idx_val = x_tr, y_tr, idx_tr
    out = out or sys.stdout

    net = init_extractor(cfg.seed, data.input_dim, cfg.feature_dim, cfg.hidden, cfg.depth)
    head = init_head(cfg.seed, cfg.feature_dim, data.num_classes)
    model = SingleNetwork(net, head)
    params = model.parameters()
    opt = SGD(params, cfg.lr, cfg.momentum)
    rng = SeededRng(cfg.seed)
    loss_fn = attack_loss_for("head-loss", model)
    val_attack = AttackConfig(cfg.stop_budget, cfg.eval_steps, None, True, "head-loss")
    val_rng = rng.child("val-attack")

    best = None
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.child("epoch", epoch).permutation(len(idx_tr))
        attack_rng = rng.child("attack", epoch)
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            sel = order[lo:lo + cfg.batch_size]
            xb, yb = x_tr[sel], y_tr[sel]
            eps = budget_for_batch(cfg, epoch, b)
            if eps > 0:
                attack = AttackConfig(eps, cfg.attack_steps, cfg.step_size, True, "head-loss")
                with frozen(params):
                    xb = pgd_attack(loss_fn, xb, yb, attack, attack_rng, idx_tr[sel])
            opt.zero_grad()
            loss = cross_entropy(model.logits(Tensor(xb)), yb).mean()
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"train_extractor: loss became non-finite in epoch {epoch}")
            loss.backward()
            opt.step()

        clean = accuracy(model, x_val, y_val)
        robust = accuracy(model, x_val, y_val, val_attack, val_rng, idx_val)
        if verbose:
            print(f"{epoch}\t{clean:.6f}\t{robust:.6f}", file=out, flush=True)
        if best is None or robust > best[0]:
            best = (robust, clean, epoch, _snapshot(net, head))

    robust, clean, epoch, (best_net, best_head) = best
    return ExtractorCheckpoint(
        best_net,
        best_head,
        cfg.nominal_budget,
        cfg.seed,
        metrics={"best_epoch": epoch, "val_clean": clean, "val_robust": robust},
        config=asdict(cfg),
    )


@dataclass
class BankSpec:
    budgets: List[float]
    template: TrainConfig = field(default_factory=TrainConfig)
    seeds: Optional[List[int]] = None  # None -> derived from template.seed and the member index

    def __post_init__(self):
        if not self.budgets:
            raise ValueError("BankSpec: no budgets")
        if any(b >= c for b, c in zip(self.budgets[:-1], self.budgets[1:])):
            raise ValueError(f"BankSpec: budgets must be strictly increasing, got {self.budgets}")
        if self.seeds is None:
            self.seeds = [derive_seed(self.template.seed, "extractor", i) for i in range(len(self.budgets))]
        if len(self.seeds) != len(self.budgets):
            raise ValueError("BankSpec: one seed per budget required")

    def member_config(self, i):
        return replace(self.template, budget=self.budgets[i], budget_mode="fixed", seed=self.seeds[i])


def evaluate_single(model, data, eval_budget, seed, split="test", steps=(10, 20)):
    """Clean and PGD-k accuracies (percent) on one split: {"clean": .., "pgd10": .., ...}."""
    x, y, idx = data.part(split)
    rng = SeededRng(seed).child("eval")
    row = {"clean": accuracy(model, x, y)}
    for k in steps:
        cfg = AttackConfig(eval_budget, k, None, True, "merger-loss" if hasattr(model, "merger") else "head-loss")
        row[f"pgd{k}"] = accuracy(model, x, y, cfg, rng.child(k), idx)
    return row


def train_bank(spec, data, eval_budget=None, eval_seed=0, verbose=False, order=None):
    """Train every member independently and record clean/PGD-10/PGD-20 test accuracy.

    ``order`` permutes the training sequence only; the manifest is always
    in budget order.
    """
    eval_budget = spec.template.stop_budget if eval_budget is None else eval_budget
    order = range(len(spec.budgets)) if order is None else order
    entries = [None] * len(spec.budgets)
    for i in order:
        ckpt = train_extractor(spec.member_config(i), data, verbose=verbose)
        ckpt.metrics.update(evaluate_single(ckpt.model(), data, eval_budget, eval_seed))
        entries[i] = BankEntry(spec.budgets[i], ckpt, None, spec.seeds[i], dict(ckpt.metrics))
    return BankManifest(entries)
