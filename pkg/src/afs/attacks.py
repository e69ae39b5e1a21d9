"""L-infinity attacks: sign-gradient PGD with random start, and FGSM as its one-step case."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import Tensor, cross_entropy, mul, grad_of

LOSS_TARGETS = ("head-loss", "merger-loss", "logit-deviation")


@dataclass
class AttackConfig:
    epsilon: float
    steps: int = 10
    step_size: Optional[float] = None  # None -> epsilon / 4
    random_init: bool = True
    loss_target: str = "head-loss"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"AttackConfig: epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 0:
            raise ValueError(f"AttackConfig: steps must be >= 0, got {self.steps}")
        if self.step_size is not None and self.steps > 0 and self.step_size <= 0:
            raise ValueError(f"AttackConfig: step_size must be > 0, got {self.step_size}")
        if self.loss_target not in LOSS_TARGETS:
            raise ValueError(f"AttackConfig: unknown loss_target {self.loss_target!r}")

    @property
    def eta(self):
        return self.epsilon / 4 if self.step_size is None else self.step_size

    def with_epsilon(self, epsilon, step_size=None):
        return AttackConfig(epsilon, self.steps, step_size, self.random_init, self.loss_target)


def project(x_hat, x, epsilon):
    """Nearest point (coordinatewise) of [x - eps, x + eps] intersected with [0, 1]."""
    lo = np.maximum(x - epsilon, 0.0)
    hi = np.minimum(x + epsilon, 1.0)
    return np.minimum(np.maximum(x_hat, lo), hi)


def pgd_attack(loss_fn, x, y, cfg, rng=None, ids=None):
    """Maximise ``loss_fn(x_hat, y)`` over the feasible set by projected sign-gradient ascent.

    ``loss_fn`` must return a scalar Tensor that is a sum of per-sample
    terms. When ``ids`` is given, the random start of row k is drawn from
    ``rng``'s child stream ``ids[k]``, which makes the result independent
    of how samples are batched.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = float(cfg.epsilon)
    if eps == 0.0:
        return x.copy()
    if cfg.random_init:
        if rng is None:
            raise ValueError("pgd_attack: random_init needs an rng")
        if ids is not None:
            noise = rng.uniform_rows(ids, x.shape[1], -eps, eps)
        else:
            noise = rng.uniform(-eps, eps, x.shape)
        x_hat = project(x + noise, x, eps)
    else:
        x_hat = x.copy()
    eta = cfg.eta
    for _ in range(cfg.steps):
        g, _ = grad_of(lambda t: loss_fn(t, y), x_hat)
        x_hat = project(x_hat + eta * np.sign(g), x, eps)
    return x_hat


def fgsm(loss_fn, x, y, epsilon):
    return pgd_attack(loss_fn, x, y, AttackConfig(epsilon, steps=1, step_size=epsilon, random_init=False))


def classification_loss(logits, y):
    """Summed cross-entropy; single-logit models use the margin loss ``-y * z`` with y in {-1, +1}."""
    if logits.shape[1] == 1:
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        return -mul(logits, Tensor(y)).sum()
    return cross_entropy(logits, y).sum()


def logit_deviation(logits, clean_logits):
    """Summed per-sample L-inf norm of ``logits - clean_logits``.

    At zero deviation the subgradient of |d| is taken as +1, so ascent
    can leave the starting point.
    """
    d = logits - Tensor(clean_logits)
    s = np.where(d.data >= 0, 1.0, -1.0)
    return mul(d, Tensor(s)).max(axis=1).sum()


def attack_loss_for(target, model, x=None):
    """Differentiable map ``(x_hat, y) -> scalar`` for the requested attack objective.

    head-loss: classification loss of a single network (or any classifier).
    merger-loss: classification loss of a stacked model, through its frozen extractors.
    logit-deviation: L-inf logit shift relative to the clean input ``x``.
    """
    if target == "head-loss":
        return lambda xt, y: classification_loss(model.logits(xt), y)
    if target == "merger-loss":
        if getattr(model, "merger", None) is None:
            raise ValueError("merger-loss requires a stacked model with a merger")
        return lambda xt, y: classification_loss(model.logits(xt), y)
    if target == "logit-deviation":
        if x is None:
            raise ValueError("logit-deviation needs the clean input x")
        clean = model.logits(Tensor(x)).data
        return lambda xt, y: logit_deviation(model.logits(xt), clean)
    raise ValueError(f"unknown attack loss target {target!r}")


def robust_correct(model, x, y, cfg, rng=None, ids=None, batch_size=256):
    """Per-sample correctness after attacking ``model`` with ``cfg`` (clean if epsilon is 0).

    Single-logit models count a sample correct when ``sign(z) * y > 0``.
    """
    from .models import frozen

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    ids = np.arange(len(x)) if ids is None else np.asarray(ids)
    out = np.zeros(len(x), dtype=bool)
    with frozen(model.parameters()):
        for lo in range(0, len(x), batch_size):
            sl = slice(lo, lo + batch_size)
            xb, yb = x[sl], y[sl]
            if cfg.epsilon > 0 and (cfg.steps > 0 or cfg.random_init):
                if cfg.loss_target == "logit-deviation":
                    loss = attack_loss_for(cfg.loss_target, model, x=xb)
                else:
                    loss = attack_loss_for(cfg.loss_target, model)
                xb = pgd_attack(loss, xb, yb, cfg, rng, ids[sl])
            z = model.logits(Tensor(xb)).data
            if z.shape[1] == 1:
                out[sl] = np.sign(z[:, 0]) * yb > 0
            else:
                out[sl] = z.argmax(axis=1) == yb
    return out
