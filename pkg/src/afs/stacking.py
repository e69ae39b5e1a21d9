"""Feature stacking: frozen extractors, concatenated features and a trainable linear merger."""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .attacks import AttackConfig, attack_loss_for, pgd_attack
from .models import SingleNetwork, freeze, frozen
from .optim import SGD
from .rng import SeededRng
from .tensor import ShapeError, Tensor, concat, cross_entropy


@dataclass
class BankEntry:
    budget: float
    checkpoint: Optional[object] = None  # ExtractorCheckpoint once loaded
    path: Optional[str] = None
    seed: Optional[int] = None
    metrics: dict = field(default_factory=dict)


@dataclass
class BankManifest:
    entries: List[BankEntry]
    mask: Optional[List[bool]] = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = [True] * len(self.entries)
        self.mask = [bool(m) for m in self.mask]
        if len(self.mask) != len(self.entries):
            raise ValueError(f"BankManifest: mask length {len(self.mask)} != {len(self.entries)} entries")

    @property
    def mask_string(self):
        return "".join("1" if m else "0" for m in self.mask)

    def with_mask(self, mask):
        if isinstance(mask, str):
            if set(mask) - {"0", "1"}:
                raise ValueError(f"mask must be a binary string, got {mask!r}")
            mask = [c == "1" for c in mask]
        return BankManifest(self.entries, list(mask))

    def selected(self):
        chosen = [e for e, m in zip(self.entries, self.mask) if m]
        if not chosen:
            raise ValueError("BankManifest: mask selects no extractor")
        return chosen

    def selected_indices(self):
        return [i for i, m in enumerate(self.mask) if m]

    def networks(self):
        """(net, head) pairs of the selected entries, in manifest order."""
        out = []
        for i, e in zip(self.selected_indices(), self.selected()):
            if e.checkpoint is None:
                raise ValueError(f"BankManifest: checkpoint of entry {i} (budget {e.budget}) is not loaded")
            out.append((e.checkpoint.net, e.checkpoint.head))
        return out


def concat_features(bank, x):
    """(batch, sum of feature widths) features of the selected extractors, blocks in manifest order."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    return concat([net.features(x) for net, _ in bank.networks()], axis=1)


class Merger:
    def __init__(self, weight, bias):
        self.weight = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)
        if self.weight.data.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"Merger: weight {self.weight.shape} / bias {self.bias.shape}")

    @classmethod
    def zeros(cls, in_dim, num_classes):
        return cls(np.zeros((in_dim, num_classes)), np.zeros(num_classes))

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def num_classes(self):
        return self.weight.shape[1]

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def parameters(self):
        return [self.weight, self.bias]


def merger_forward(merger, features):
    if features.data.ndim != 2 or features.shape[1] != merger.in_dim:
        raise ShapeError(f"merger_forward: merger expects width {merger.in_dim}, features have shape {features.shape}")
    return features @ merger.weight + merger.bias


def merger_from_heads(bank, block=None):
    """Merger that places the selected heads' weights on their own blocks.

    With ``block`` set, only that selected member's head is copied (bias
    included) and every other block stays zero.
    """
    nets = bank.networks()
    widths = [net.feature_dim for net, _ in nets]
    num_classes = nets[0][1].num_classes
    weight = np.zeros((sum(widths), num_classes))
    bias = np.zeros(num_classes)
    lo = 0
    for k, ((_, head), w) in enumerate(zip(nets, widths)):
        if block is None or block == k:
            weight[lo:lo + w] = head.weight.data
            bias += head.bias.data
        lo += w
    return Merger(weight, bias)


class StackedModel:
    """Frozen extractors of the selected bank members followed by a linear merger."""

    def __init__(self, bank, merger):
        self.bank = bank
        self.merger = merger
        width = sum(net.feature_dim for net, _ in bank.networks())
        if merger.in_dim != width:
            raise ShapeError(f"StackedModel: merger width {merger.in_dim} != concatenated feature width {width}")
        freeze(self.extractor_parameters())

    @property
    def num_classes(self):
        return self.merger.num_classes

    def extractor_parameters(self):
        return [p for net, _ in self.bank.networks() for p in net.parameters()]

    def parameters(self):
        return self.extractor_parameters() + self.merger.parameters()

    def features(self, x):
        return concat_features(self.bank, x)

    def logits(self, x):
        return merger_forward(self.merger, self.features(x))


@dataclass
class MergerTrainConfig:
    alpha: float = 0.5
    epsilon: float = 8 / 255
    attack_steps: int = 10
    step_size: Optional[float] = None
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    lr_decay: Optional[float] = 0.1  # lr factor applied from 75% of the epochs on; None -> constant

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"MergerTrainConfig: alpha must lie in [0, 1], got {self.alpha}")
        if self.epsilon < 0 or self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("MergerTrainConfig: epsilon/epochs must be >= 0 and batch_size > 0")

    def lr_at(self, epoch):
        if self.lr_decay is not None and epoch >= int(0.75 * self.epochs):
            return self.lr * self.lr_decay
        return self.lr


def train_merger(bank, cfg, data, on_attack=None):
    """Fit a zero-initialised merger on ``alpha * CE(clean) + (1 - alpha) * CE(adversarial)``.

    Adversarial inputs are PGD examples against the whole stacked model,
    recomputed every batch with the current merger; clean and adversarial
    terms share the minibatch. Extractor parameters are never updated.
    ``on_attack`` (optional) is called once per crafted batch.
    """
    nets = bank.networks()
    width = sum(net.feature_dim for net, _ in nets)
    merger = Merger.zeros(width, nets[0][1].num_classes)
    model = StackedModel(bank, merger)
    x_all, y_all, idx_all = data.part("train")
    if not len(idx_all):
        raise ValueError("train_merger: empty training split")

    rng = SeededRng(cfg.seed)
    opt = SGD(merger.parameters(), cfg.lr, cfg.momentum)
    attack = AttackConfig(cfg.epsilon, cfg.attack_steps, cfg.step_size, True, "merger-loss")
    loss_fn = attack_loss_for("merger-loss", model)
    clean_cache = model.features(Tensor(x_all)).data  # extractors are frozen

    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.child("epoch", epoch).permutation(len(idx_all))
        attack_rng = rng.child("attack", epoch)
        for lo in range(0, len(order), cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            xb, yb = x_all[sel], y_all[sel]
            opt.zero_grad()
            loss = None
            if cfg.alpha > 0:
                clean = cross_entropy(merger_forward(merger, Tensor(clean_cache[sel])), yb).mean()
                loss = clean * cfg.alpha
            if cfg.alpha < 1:
                with frozen(merger.parameters()):
                    x_adv = pgd_attack(loss_fn, xb, yb, attack, attack_rng, idx_all[sel])
                if on_attack is not None:
                    on_attack(x_adv)
                adv = cross_entropy(model.logits(Tensor(x_adv)), yb).mean() * (1.0 - cfg.alpha)
                loss = adv if loss is None else loss + adv
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"train_merger: non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
    return merger


def logit_average(networks, lambdas, x):
    """Sum_i lambda_i * logits_i for (net, head) pairs; lambdas must be a positive simplex point."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if len(lambdas) != len(networks) or not len(lambdas):
        raise ValueError(f"logit_average: {len(lambdas)} weights for {len(networks)} networks")
    if np.any(lambdas < 0) or abs(lambdas.sum() - 1.0) > 1e-12:
        raise ValueError(f"logit_average: weights must be non-negative and sum to 1, got {lambdas.tolist()}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    out = None
    for lam, (net, head) in zip(lambdas, networks):
        term = SingleNetwork(net, head).logits(x) * float(lam)
        out = term if out is None else out + term
    return out


class LogitAverage:
    """Classifier wrapper around ``logit_average`` for attacks and evaluation."""

    def __init__(self, networks, lambdas):
        self.networks = list(networks)
        self.lambdas = list(lambdas)

    @property
    def num_classes(self):
        return self.networks[0][1].num_classes

    def parameters(self):
        return [p for net, head in self.networks for p in net.parameters() + head.parameters()]

    def logits(self, x):
        return logit_average(self.networks, self.lambdas, x)
