"""Sanity checks that need no training: on a linear model every quantity has a closed form.

    python3 demos/linear_oracles.py
"""
import numpy as np

from afs.analysis import concavity_select, delta_z, sufficient_condition, DeltaZTable
from afs.attacks import AttackConfig, attack_loss_for, pgd_attack
from afs.models import LinearModel
from afs.rng import SeededRng

rng = np.random.default_rng(0)
w = rng.normal(size=6)
model = LinearModel(w, 0.0)
x = rng.uniform(0.3, 0.7, size=(1, 6))

print("PGD on the logit deviation vs the closed form eps * ||w||_1")
for eps in (0.05, 0.1, 0.3):
    cfg = AttackConfig(eps, steps=10, loss_target="logit-deviation")
    x_hat = pgd_attack(attack_loss_for("logit-deviation", model, x=x), x, None, cfg, SeededRng(1))
    print(f"  eps {eps:.2f}: PGD {abs(((x_hat - x) @ w)[0]):.6f}  exact {eps * np.abs(w).sum():.6f}")

print("\nDelta_z over 32 interior points, Delta = 0.2")
xs = rng.uniform(0.25, 0.75, size=(32, 6))
print(f"  {delta_z(model, xs, 0.2):.6f} (exact {0.2 * np.abs(w).sum():.6f})")

print("\nConcavity selection")
for values in ([10, 8, 5, 1], [10, 6, 3, 1], [9, 9, 8, 6, 3]):
    sel = concavity_select(DeltaZTable(list(range(len(values))), values, 0.2))
    print(f"  {values}: d2 {sel.second_differences} -> {sel.message}")

print("\nSufficient condition sum(lambda_i * Delta_i) < Delta_ref, reference 2 (1-based)")
for lam in ([0.1, 0.4, 0.5], [0.2, 0.5, 0.3]):
    holds, margin = sufficient_condition(lam, [6, 4, 3], 2)
    print(f"  lambda {lam}: holds={holds} margin {margin:+.2f}")
