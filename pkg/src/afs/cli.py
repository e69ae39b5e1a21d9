"""Command-line entry point: ``afs <subcommand> [flags]`` (or ``python -m afs``).

Exit status: 0 success, 1 usage error, 2 data error (missing or malformed
inputs), 3 numeric failure (divergence, or no valid concave suffix in select).
"""
import argparse
import os
import sys
from dataclasses import replace

from . import checkpoint, pipeline, reports
from .config import ConfigError, ExperimentConfig, load_config, parse_real
from .data import DataError
from .training import TrainingDiverged, train_extractor

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _real(text):
    try:
        return parse_real(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _config(args):
    """Config from --config, else the copy stored next to the bank, else defaults; --seed overrides."""
    path = args.config
    if path is None and getattr(args, "bank", None):
        stored = os.path.join(os.path.dirname(checkpoint.bank_path(args.bank)), pipeline.CONFIG_COPY)
        path = stored if os.path.exists(stored) else None
    cfg = load_config(path) if path else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg, path


def _load_bank(args, mask=None):
    bank = checkpoint.load_bank(args.bank)
    if mask:
        bank = bank.with_mask(mask)
    return bank


# subcommands ----------------------------------------------------------------

def cmd_train_extractor(args):
    cfg, _ = _config(args)
    data = pipeline.build_dataset(cfg)
    tcfg = cfg.train_template()
    if args.budget_range:
        lo, hi = args.budget_range
        tcfg = replace(tcfg, budget_mode="uniform", budget_lo=lo, budget_hi=hi)
    else:
        tcfg = replace(tcfg, budget=args.budget)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    ckpt = train_extractor(tcfg, data, verbose=args.verbose)
    ckpt.metrics.update(pipeline.evaluate_model(ckpt.model(), data, cfg))
    checkpoint.save_checkpoint(ckpt, args.out)
    print(f"saved {args.out}: clean {ckpt.metrics['clean']:.2f} pgd20 {ckpt.metrics['pgd20']:.2f}")


def cmd_train_bank(args):
    cfg, path = _config(args)
    if args.budgets:
        cfg.budgets = args.budgets
    data = pipeline.build_dataset(cfg)
    bank = pipeline.stage_train_bank(cfg, data, args.out, config_path=path, verbose=args.verbose)
    for e in bank.entries:
        print(f"budget {e.budget:g}: clean {e.metrics['clean']:.2f} pgd10 {e.metrics['pgd10']:.2f} pgd20 {e.metrics['pgd20']:.2f}")


def cmd_select(args):
    cfg, _ = _config(args)
    if args.delta is not None:
        cfg.eval_budget = args.delta
    bank = _load_bank(args)
    out = os.path.dirname(checkpoint.bank_path(args.bank))
    table, sel = pipeline.stage_select(cfg, pipeline.build_dataset(cfg), bank, out)
    for b, v, _ in table.rows():
        print(f"budget {b:g}: delta_z {v:.6f}")
    if not sel.valid:
        raise NumericFailure(sel.message)
    print(f"{sel.message}; mask {''.join('1' if m else '0' for m in sel.mask)}")


def cmd_train_merger(args):
    cfg, _ = _config(args)
    if args.epsilon is not None:
        cfg.merger = replace(cfg.merger, epsilon=args.epsilon)
    if args.epochs is not None:
        cfg.merger = replace(cfg.merger, epochs=args.epochs)
    bank = _load_bank(args, args.mask)
    ckpt = pipeline.stage_train_merger(cfg, pipeline.build_dataset(cfg), bank, alpha=args.alpha)
    checkpoint.save_checkpoint(ckpt, args.out)
    m = ckpt.metrics
    print(f"saved {args.out}: mask {ckpt.mask} alpha {ckpt.config['alpha']:g} clean {m['clean']:.2f} pgd20 {m['pgd20']:.2f}")


def cmd_evaluate(args):
    cfg, _ = _config(args)
    budget = cfg.eval_budget if args.budget is None else args.budget
    data = pipeline.build_dataset(cfg)
    if args.checkpoint:
        ckpt = checkpoint.load_checkpoint(args.checkpoint)
        if not hasattr(ckpt, "net"):
            raise UsageError("evaluate: --checkpoint must be an extractor checkpoint (use --bank/--merger for a stack)")
        model, model_id = ckpt.model(), os.path.basename(args.checkpoint)
    elif args.bank and args.merger:
        mckpt = checkpoint.load_checkpoint(args.merger)
        model, model_id = pipeline.stacked(_load_bank(args), mckpt), os.path.basename(args.merger)
    else:
        raise UsageError("evaluate: give --checkpoint, or --bank together with --merger")
    steps = sorted(set(args.pgd_steps))
    row = pipeline.evaluate_model(model, data, cfg, steps=steps, budget=budget)
    header = ("model_id", "budget", "clean") + tuple(f"pgd{k}" for k in steps)
    reports.write_csv(args.out, header, [(model_id, budget, row["clean"]) + tuple(row[f"pgd{k}"] for k in steps)])
    print(" ".join(f"{k} {v:.2f}" for k, v in row.items()))


def cmd_report(args):
    cfg, _ = _config(args)
    bank = _load_bank(args, args.mask)
    mergers = [checkpoint.load_checkpoint(p) for p in args.merger or []]
    for p, m in zip(args.merger or [], mergers):
        if not isinstance(m, checkpoint.MergerCheckpoint):
            raise UsageError(f"report: {p} is not a merger checkpoint")
    pipeline.stage_report(cfg, pipeline.build_dataset(cfg), bank, mergers, args.out)
    print(f"reports written to {args.out}")


def build_parser():
    p = _Parser(prog="afs", description="Adversarial feature stacking experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="experiment config file (key = value)")
        sp.add_argument("--seed", type=int, help="override the global seed")
        sp.set_defaults(func=func)
        return sp

    sp = add("train-extractor", cmd_train_extractor, "adversarially train one extractor")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--budget", type=_real, default=0.0, help="fixed training budget (fractions like 8/255 allowed)")
    g.add_argument("--budget-range", type=_real, nargs=2, metavar=("LO", "HI"), help="sample budgets uniformly per batch")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--verbose", action="store_true", help="print epoch, clean and robust validation accuracy per epoch")
    sp.add_argument("--out", required=True, help="checkpoint path")

    sp = add("train-bank", cmd_train_bank, "train the budget-spaced extractor bank")
    sp.add_argument("--budgets", type=_real, nargs="+", help="override bank.budgets")
    sp.add_argument("--verbose", action="store_true")
    sp.add_argument("--out", required=True, help="bank directory")

    sp = add("select", cmd_select, "Delta_z table and concavity-based selection")
    sp.add_argument("--bank", required=True, help="bank directory or bank.json")
    sp.add_argument("--delta", type=_real, help="evaluation strength (default eval.budget)")

    sp = add("train-merger", cmd_train_merger, "fit the linear merger on a frozen bank")
    sp.add_argument("--bank", required=True)
    sp.add_argument("--alpha", type=_real, help="clean-loss weight (default merger.alpha)")
    sp.add_argument("--epsilon", type=_real)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--mask", help="binary inclusion mask, e.g. 00111 (default: the manifest's)")
    sp.add_argument("--out", required=True, help="merger checkpoint path")

    sp = add("evaluate", cmd_evaluate, "clean and PGD-k accuracy of one extractor or a stack")
    sp.add_argument("--checkpoint", help="single extractor checkpoint")
    sp.add_argument("--bank")
    sp.add_argument("--merger", help="merger checkpoint (with --bank)")
    sp.add_argument("--budget", type=_real)
    sp.add_argument("--pgd-steps", type=int, nargs="+", default=[10, 20])
    sp.add_argument("--out", required=True, help="CSV path")

    sp = add("report", cmd_report, "aggregate CSV reports")
    sp.add_argument("--bank", required=True)
    sp.add_argument("--merger", action="append", help="merger checkpoint (repeatable)")
    sp.add_argument("--mask", help="restrict to these members, e.g. 100000001")
    sp.add_argument("--out", required=True, help="report directory")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError, NumericFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
