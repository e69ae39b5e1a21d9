"""Logit-perturbation analysis, extractor selection and trade-off diagnostics."""
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import stats

from .attacks import AttackConfig, attack_loss_for, pgd_attack, robust_correct
from .models import frozen
from .rng import SeededRng
from .tensor import Tensor


# logit deviation ------------------------------------------------------------

def delta_z_attack(Delta, steps=20):
    """Deterministic ascent on the L-inf logit shift: ``steps`` steps of Delta/8, no random start."""
    return AttackConfig(Delta, steps, Delta / 8 if Delta > 0 else None, False, "logit-deviation")


def delta_z_samples(model, x, Delta, cfg=None, batch_size=256):
    """Per-sample PGD estimate of max ||z(x_hat) - z(x)||_inf over the Delta-ball."""
    x = np.asarray(x, dtype=np.float64)
    if not len(x):
        raise ValueError("delta_z: empty dataset")
    if Delta < 0:
        raise ValueError(f"delta_z: Delta must be >= 0, got {Delta}")
    if Delta == 0:
        return np.zeros(len(x))
    cfg = delta_z_attack(Delta) if cfg is None else cfg.with_epsilon(Delta, cfg.step_size)
    out = np.empty(len(x))
    with frozen(model.parameters()):
        for lo in range(0, len(x), batch_size):
            xb = x[lo:lo + batch_size]
            loss = attack_loss_for("logit-deviation", model, x=xb)
            x_hat = pgd_attack(loss, xb, None, cfg, SeededRng(0), np.arange(lo, lo + len(xb)))
            dz = model.logits(Tensor(x_hat)).data - model.logits(Tensor(xb)).data
            out[lo:lo + len(xb)] = np.abs(dz).max(axis=1)
    return out


def delta_z(model, x, Delta, cfg=None, reduce="mean"):
    """Mean (or max) over ``x`` of the per-sample logit deviation under a Delta-bounded attack."""
    d = delta_z_samples(model, x, Delta, cfg)
    if reduce == "mean":
        return float(d.mean())
    if reduce == "max":
        return float(d.max())
    raise ValueError(f"delta_z: unknown reduce {reduce!r}")


@dataclass
class DeltaZTable:
    budgets: List[float]
    delta_z: List[float]
    Delta: float

    def __post_init__(self):
        if len(self.budgets) != len(self.delta_z):
            raise ValueError("DeltaZTable: budgets and delta_z lengths differ")
        if any(a >= b for a, b in zip(self.budgets[:-1], self.budgets[1:])):
            raise ValueError(f"DeltaZTable: budgets must be strictly increasing, got {self.budgets}")
        if any(v < 0 for v in self.delta_z):
            raise ValueError("DeltaZTable: delta_z values must be non-negative")

    def rows(self):
        return [(b, v, self.Delta) for b, v in zip(self.budgets, self.delta_z)]


def delta_z_table(bank, x, Delta, reduce="mean"):
    """Delta_z of every bank member (single network with its own head), manifest order."""
    values = [delta_z(e.checkpoint.model(), x, Delta, reduce=reduce) for e in bank.entries]
    return DeltaZTable([e.budget for e in bank.entries], values, Delta)


# selection ------------------------------------------------------------------

@dataclass
class ConcavitySelection:
    second_differences: List[float]  # one per interior point
    concave: List[bool]
    start: int  # first index of the longest all-concave suffix
    valid: bool  # suffix has at least 3 members
    tol: float
    mask: List[bool] = field(default_factory=list)

    @property
    def message(self):
        if self.valid:
            return f"selected {sum(self.mask)} of {len(self.mask)} extractors"
        return "no valid concave suffix >= 3"


def second_differences(values):
    """d2[i] = z[i+1] - 2 z[i] + z[i-1] for each interior index (budget spacing is ignored)."""
    z = np.asarray(values, dtype=np.float64)
    return z[2:] - 2.0 * z[1:-1] + z[:-2]


def concavity_select(table, tol=None):
    """Keep the longest suffix of budgets on which Delta_z is concave.

    An interior point is concave when its second difference is <= tol
    (default 1e-3 * max Delta_z). The suffix must hold at least three
    members; otherwise the selection is reported invalid and selects nothing.
    """
    values = list(table.delta_z)
    n = len(values)
    if n < 3:
        raise ValueError(f"concavity_select: need at least 3 entries, got {n}")
    if tol is None:
        tol = 1e-3 * max(values)
    d2 = second_differences(values)
    concave = [bool(v <= tol) for v in d2]
    # interior point i (1..n-2) is concave[i-1]; walk back from the end
    start = n - 2
    while start > 0 and concave[start - 1]:
        start -= 1
    valid = n - start >= 3
    mask = [valid and i >= start for i in range(n)]
    return ConcavitySelection([float(v) for v in d2], concave, start, valid, float(tol), mask)


def sufficient_condition(lambdas, deltas, reference_index):
    """Check sum_i lambda_i * Delta_i < Delta_ref; ``reference_index`` is 1-based.

    Returns (holds, margin) with margin = Delta_ref - sum_i lambda_i * Delta_i.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if lambdas.shape != deltas.shape:
        raise ValueError(f"sufficient_condition: {len(lambdas)} weights for {len(deltas)} deltas")
    if np.any(lambdas < 0) or abs(lambdas.sum() - 1.0) > 1e-12:
        raise ValueError("sufficient_condition: weights must be non-negative and sum to 1")
    if not 1 <= reference_index <= len(deltas):
        raise IndexError(f"sufficient_condition: reference_index {reference_index} outside 1..{len(deltas)}")
    weighted = float(np.dot(lambdas, deltas))
    margin = float(deltas[reference_index - 1]) - weighted
    return weighted < deltas[reference_index - 1], margin


# accuracy-type measurements --------------------------------------------------

def _attack_for(model, Delta, steps, random_init=True):
    target = "merger-loss" if getattr(model, "merger", None) is not None else "head-loss"
    return AttackConfig(Delta, steps, None, random_init, target)


def error_rate(model, x, y, Delta, cfg=None, seed=0):
    """Fraction misclassified under a Delta-bounded PGD attack (clean when Delta is 0).

    Single-logit models follow the sign convention: (1 - sgn(z) * y) / 2 per sample.
    """
    if not len(y):
        raise ValueError("error_rate: empty dataset")
    cfg = _attack_for(model, Delta, 20) if cfg is None else cfg.with_epsilon(Delta, cfg.step_size)
    correct = robust_correct(model, x, y, cfg, SeededRng(seed).child("error-rate"))
    return 1.0 - correct.mean()


def robustness_curve(model, x, y, budgets, steps=20, seed=0):
    """Robust accuracy (percent) at each budget, budgets ascending.

    A sample broken at some budget stays broken at every larger one, since
    the same perturbation is feasible there; the curve is therefore
    non-increasing by construction. Budget 0 gives clean accuracy.
    """
    budgets = [float(b) for b in budgets]
    if any(b < 0 for b in budgets) or budgets != sorted(budgets):
        raise ValueError(f"robustness_curve: budgets must be non-negative and ascending, got {budgets}")
    rng = SeededRng(seed).child("curve")
    alive = np.ones(len(y), dtype=bool)
    curve = []
    for b in budgets:
        alive &= robust_correct(model, x, y, _attack_for(model, b, steps), rng)
        curve.append(100.0 * alive.mean())
    return curve


def importance_ratios(merger, bank):
    """Share of the merger's total absolute weight owned by each selected extractor's block."""
    widths = [net.feature_dim for net, _ in bank.networks()]
    w = np.abs(merger.weight.data)
    if w.shape[0] != sum(widths):
        raise ValueError(f"importance_ratios: merger width {w.shape[0]} != bank width {sum(widths)}")
    total = w.sum()
    if total == 0:
        raise ValueError("importance_ratios: all-zero merger weight, undefined ratios")
    edges = np.cumsum([0] + widths)
    return [float(w[lo:hi].sum() / total) for lo, hi in zip(edges[:-1], edges[1:])]


def tradeoff(clean, robust):
    for name, v in (("clean", clean), ("robust", robust)):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"tradeoff: {name} accuracy {v} outside [0, 100]")
    return (clean + robust) / 2.0


@dataclass
class WeightHistogram:
    edges: np.ndarray  # 102 bin edges
    counts: np.ndarray  # 101 counts
    sparsity: float  # fraction of |w| below 1e-3 * max|w|
    excess_kurtosis: float

    def rows(self):
        return [(lo, hi, int(c)) for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def weight_histogram(matrix, bins=101):
    w = np.asarray(matrix.data if isinstance(matrix, Tensor) else matrix, dtype=np.float64).ravel()
    if not w.size:
        raise ValueError("weight_histogram: empty matrix")
    lo, hi = float(w.min()), float(w.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(w, bins=bins, range=(lo, hi))
    peak = np.abs(w).max()
    sparsity = float(np.mean(np.abs(w) < 1e-3 * peak)) if peak > 0 else 1.0
    kurt = float(stats.kurtosis(w, fisher=True)) if w.std() > 0 else float("nan")
    return WeightHistogram(edges, counts, sparsity, kurt)
