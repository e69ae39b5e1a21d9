"""Experiment stages shared by the CLI and the demos.

Each stage reads what earlier stages wrote (bank directory, merger
checkpoints) and writes its own artifacts; extractor training and merger
training are separate stages.
"""
import os
import shutil

from . import analysis, checkpoint, reports
from .data import export_digits_idx, gen_synthetic, load_idx, split_dataset
from .stacking import StackedModel, train_merger
from .training import BankSpec, evaluate_single, train_bank

CONFIG_COPY = "config.txt"


def build_dataset(cfg):
    """Dataset described by ``cfg.data``, split into train/val/test with the "split" seed."""
    d = cfg.data
    if d.source == "synthetic":
        kwargs = dict(margin=d.margin, dim=d.dim, sigma=d.sigma, label_noise=d.label_noise)
        if d.kind == "tradeoff":
            kwargs.update(robust_dims=d.robust_dims, robust_p=d.robust_p, levels=d.levels)
        raw = gen_synthetic(d.kind, d.n, cfg.component_seed("data"), **kwargs)
    elif d.source == "idx":
        if not (d.images and d.labels):
            raise ValueError("data.source = idx needs data.images and data.labels")
        raw = load_idx(d.images, d.labels, limit=d.limit)
    elif d.source == "digits":
        # scikit-learn's bundled digits, routed through the IDX reader
        images, labels = export_digits_idx(os.path.join(cfg.output, "digits-idx"))
        raw = load_idx(images, labels, limit=d.limit)
    else:
        raise ValueError(f"unknown data.source {d.source!r}")
    return split_dataset(raw.x, raw.y, cfg.component_seed("split"), d.test_frac, d.val_frac)


def eval_subset(data, cfg):
    return data.part("test", cfg.deltaz_samples)[0]


# stages ---------------------------------------------------------------------

def stage_train_bank(cfg, data, out_dir, config_path=None, verbose=False):
    """Train the budget-spaced bank, save checkpoints + bank.json + bank_table.csv."""
    spec = BankSpec(list(cfg.budgets), cfg.train_template())
    bank = train_bank(spec, data, eval_budget=cfg.eval_budget, eval_seed=cfg.component_seed("eval"), verbose=verbose)
    checkpoint.save_bank(bank, out_dir)
    reports.write_report(out_dir, "bank_table.csv", reports.bank_rows(bank))
    if config_path is not None and os.path.abspath(config_path) != os.path.abspath(os.path.join(out_dir, CONFIG_COPY)):
        shutil.copyfile(config_path, os.path.join(out_dir, CONFIG_COPY))
    return bank


def stage_select(cfg, data, bank, out_dir):
    """Delta_z table over every member, concavity selection; writes deltaz.csv and the mask."""
    table = analysis.delta_z_table(bank, eval_subset(data, cfg), cfg.eval_budget)
    reports.write_report(out_dir, "deltaz.csv", table.rows())
    sel = analysis.concavity_select(table)
    if sel.valid:
        checkpoint.update_bank_mask(out_dir, "".join("1" if m else "0" for m in sel.mask))
    return table, sel


def evaluate_model(model, data, cfg, steps=(10, 20), budget=None):
    budget = cfg.eval_budget if budget is None else budget
    return evaluate_single(model, data, budget, cfg.component_seed("eval"), steps=tuple(steps))


def stage_train_merger(cfg, data, bank, alpha=None, on_attack=None):
    """Fit a merger on the masked bank and attach its test metrics."""
    mcfg = cfg.merger_config(alpha)
    merger = train_merger(bank, mcfg, data, on_attack=on_attack)
    metrics = evaluate_model(StackedModel(bank, merger), data, cfg)
    config = {k: getattr(mcfg, k) for k in ("alpha", "epsilon", "attack_steps", "epochs", "batch_size", "lr", "momentum", "seed")}
    return checkpoint.MergerCheckpoint(merger, bank.mask_string, metrics, config)


def stacked(bank, merger_ckpt):
    """StackedModel over the members recorded in the merger checkpoint's mask."""
    if merger_ckpt.mask is not None:
        bank = bank.with_mask(merger_ckpt.mask)
    return StackedModel(bank, merger_ckpt.merger)


def _member_id(i, entry):
    return f"ext{i}_b{entry.budget:g}"


def _merger_id(m):
    return f"afs_a{m.config.get('alpha', 0):g}_m{m.mask}"


def stage_report(cfg, data, bank, mergers, out_dir, curve_steps=20):
    """Aggregate the CSV reports over the masked members and the given mergers."""
    os.makedirs(out_dir, exist_ok=True)
    x, y, _ = data.part("test")
    members = [(i, e) for i, e in enumerate(bank.entries) if bank.mask[i]]
    if not members:
        raise ValueError("report: mask selects no extractor")
    seed = cfg.component_seed("eval")

    reports.write_report(out_dir, "bank_table.csv",
                         [(e.budget, e.metrics["clean"], e.metrics["pgd10"], e.metrics["pgd20"]) for _, e in members])
    sub = analysis.DeltaZTable(
        [e.budget for _, e in members],
        [analysis.delta_z(e.checkpoint.model(), eval_subset(data, cfg), cfg.eval_budget) for _, e in members],
        cfg.eval_budget)
    reports.write_report(out_dir, "deltaz.csv", sub.rows())

    models = [(_member_id(i, e), e.checkpoint.model(), e.metrics) for i, e in members]
    models += [(_merger_id(m), stacked(bank, m), m.metrics) for m in mergers]

    curve_rows, trade_rows = [], []
    for model_id, model, metrics in models:
        for b, acc in zip(cfg.curve_budgets, analysis.robustness_curve(model, x, y, cfg.curve_budgets, curve_steps, seed)):
            curve_rows.append((b, acc, model_id))
        trade_rows.append((model_id, metrics["clean"], metrics["pgd20"],
                           analysis.tradeoff(metrics["clean"], metrics["pgd20"])))
    reports.write_report(out_dir, "curve.csv", curve_rows)
    reports.write_report(out_dir, "tradeoff.csv", trade_rows)

    ordered = sorted(mergers, key=lambda m: m.config.get("alpha", 0))
    reports.write_report(out_dir, "alpha_sweep.csv",
                         [(m.config.get("alpha"), m.metrics["clean"], m.metrics["pgd10"], m.metrics["pgd20"]) for m in ordered])
    ratio_rows = []
    for m in ordered:
        sel = bank.with_mask(m.mask) if m.mask else bank
        for k, r in zip(sel.selected_indices(), analysis.importance_ratios(m.merger, sel)):
            ratio_rows.append((k, r, m.config.get("alpha")))
    reports.write_report(out_dir, "ratios.csv", ratio_rows)
    if ordered:
        # weight histogram of the merger closest to alpha = 0.5
        m = min(ordered, key=lambda m: abs(m.config.get("alpha", 0) - 0.5))
        reports.write_report(out_dir, "histogram.csv", analysis.weight_histogram(m.merger.weight).rows())
    return out_dir
