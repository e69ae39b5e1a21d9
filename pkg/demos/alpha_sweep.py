"""Library-level walk through the experiment, printing the tables as it goes.

Trains the default bank, computes Delta_z and the concavity selection, then
sweeps the merger's clean-loss weight alpha and prints accuracy and the
per-extractor importance ratios. A few minutes on a laptop CPU.

    python3 demos/alpha_sweep.py [--seed 0]
"""
import argparse

import numpy as np

from afs import analysis, pipeline
from afs.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/alpha_sweep")
    args = ap.parse_args()

    cfg = ExperimentConfig(seed=args.seed, output=args.out)
    data = pipeline.build_dataset(cfg)
    bank = pipeline.stage_train_bank(cfg, data, f"{args.out}/bank")
    print("budget   clean   pgd20")
    for e in bank.entries:
        print(f"{e.budget:6.2f}  {e.metrics['clean']:6.1f}  {e.metrics['pgd20']:6.1f}")

    table, sel = pipeline.stage_select(cfg, data, bank, f"{args.out}/bank")
    print("\nDelta_z:", np.round(table.delta_z, 3).tolist())
    print("second differences:", np.round(sel.second_differences, 3).tolist(), "->", sel.message)
    if sel.valid:
        bank = bank.with_mask(sel.mask)

    print(f"\nmask {bank.mask_string}")
    print("alpha   clean   pgd20   ratios")
    for alpha in cfg.alphas:
        m = pipeline.stage_train_merger(cfg, data, bank, alpha=alpha)
        ratios = analysis.importance_ratios(m.merger, bank)
        print(f"{alpha:5.2f}  {m.metrics['clean']:6.1f}  {m.metrics['pgd20']:6.1f}   "
              + " ".join(f"{r:.3f}" for r in ratios))


if __name__ == "__main__":
    main()
