"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also repeated in the pytest terminal summary (see conftest.py).
Criteria 5-7 and 13 share one benchmark run with the default experiment
configuration; its wall-clock times are checked against the budgets.
"""
import glob
import os
import time

import numpy as np
import pytest

from afs import analysis, checkpoint, pipeline
from afs.attacks import AttackConfig, attack_loss_for, pgd_attack
from afs.checkpoint import CheckpointVersionError, CorruptCheckpointError
from afs.cli import EXIT_NUMERIC, EXIT_OK, main
from afs.config import ExperimentConfig
from afs.models import LinearModel
from afs.rng import SeededRng
from afs.stacking import Merger, StackedModel
from afs.tensor import (Tensor, add, clamp, concat, cross_entropy, matmul, mean, mul, relu, row_max, scale,
                        sum_all)
from helpers import away_from_kinks, check_grads
from oracles import concave_suffix_direct, corner_max_deviation, sufficient_condition_direct

RESULTS = {}


def record(number, title, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return passed


def _pairwise_ok(values, increasing, slack):
    """Every ordered pair (i < j) respects the direction up to ``slack``."""
    worst = 0.0
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            gap = values[i] - values[j] if increasing else values[j] - values[i]
            worst = max(worst, gap)
    return worst <= slack, worst


def _trend_ok(values, increasing, slack=1.0):
    """At most one adjacent inversion, of at most ``slack`` points."""
    steps = np.diff(values) if increasing else -np.diff(values)
    inversions = [-s for s in steps if s < 0]
    return len(inversions) <= 1 and all(v <= slack for v in inversions), inversions


# 1. gradients -------------------------------------------------------------------

def test_c01_gradient_correctness(tiny_bank):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    primitives = {
        "matmul": lambda: ([rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
                           lambda t: sum_all(mul(matmul(*t), matmul(*t)))),
        "add": lambda: ([rng.normal(size=(3, 4)), rng.normal(size=4)], lambda t: sum_all(mul(add(*t), add(*t)))),
        "mul": lambda: ([rng.normal(size=(3, 4)), rng.normal(size=(3, 4))], lambda t: sum_all(mul(*t))),
        "scale": lambda: ([rng.normal(size=(2, 3))], lambda t: sum_all(mul(scale(t[0], 2.5), t[0]))),
        "relu": lambda: ([away_from_kinks(rng, (3, 5))], lambda t: sum_all(mul(relu(t[0]), t[0]))),
        "clamp": lambda: ([rng.uniform(-1, 2, size=(3, 4))], lambda t: sum_all(mul(clamp(t[0], 0.0, 1.0), t[0]))),
        "concat": lambda: ([rng.normal(size=(2, 3)), rng.normal(size=(2, 2))],
                           lambda t: sum_all(mul(concat(t), concat(t)))),
        "mean": lambda: ([rng.normal(size=(4, 3))], lambda t: mean(mul(t[0], t[0]))),
        "row_max": lambda: ([rng.normal(size=(4, 5))], lambda t: sum_all(row_max(t[0]))),
        "cross_entropy": lambda: ([rng.normal(size=(5, 3))],
                                  lambda t, y=rng.integers(0, 3, 5): mean(cross_entropy(t[0], y))),
    }
    worst = {}
    for name, make in primitives.items():
        worst[name] = max(check_grads(build, inputs) for inputs, build in (make() for _ in range(20)))

    # full stacked-model loss: alpha-mixed clean/adversarial CE through the frozen bank,
    # differentiated w.r.t. the input, the adversarial input and the merger parameters
    width = sum(net.feature_dim for net, _ in tiny_bank.networks())
    stacked = []
    for _ in range(20):
        x = rng.uniform(0.2, 0.8, size=(4, 8))
        x_adv = np.clip(x + rng.uniform(-0.1, 0.1, size=x.shape), 0, 1)
        y = rng.integers(0, 2, 4)
        w, b = rng.normal(size=(width, 2)), rng.normal(size=2)
        alpha = rng.uniform()

        def build(t, y=y, alpha=alpha):
            merger = Merger(t[2], t[3])
            model = StackedModel(tiny_bank, merger)
            clean = mean(cross_entropy(model.logits(t[0]), y))
            adv = mean(cross_entropy(model.logits(t[1]), y))
            return add(scale(clean, alpha), scale(adv, 1.0 - alpha))

        stacked.append(check_grads(build, [x, x_adv, w, b]))
    worst["stacked_loss"] = max(stacked)
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    ok = not bad and elapsed < 60
    record(1, "gradient correctness", ok,
           f"max rel err {max(worst.values()):.2e} over {len(worst)} checks x 20 instances, {elapsed:.1f}s"
           + (f"; failing {sorted(bad)}" if bad else ""))
    assert ok


# 2-4. attack and Delta_z oracles ---------------------------------------------

def test_c02_pgd_optimality_oracle():
    start = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(7)
    for eps in (0.05, 0.1, 0.3):
        for trial in range(30):
            dim = int(rng.integers(1, 11))
            w = rng.normal(size=dim)
            x = rng.uniform(eps, 1 - eps, size=(1, dim))
            model = LinearModel(w, rng.normal())
            cfg = AttackConfig(eps, steps=10, step_size=eps / 4, loss_target="logit-deviation")
            x_hat = pgd_attack(attack_loss_for("logit-deviation", model, x=x), x, None, cfg, SeededRng(trial))
            achieved = abs(float(((x_hat - x) @ w)[0]))
            exact = corner_max_deviation(w, x[0], eps)
            worst = max(worst, abs(achieved - exact), abs(exact - eps * np.abs(w).sum()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 60
    record(2, "PGD optimality oracle", ok, f"max |PGD - corner optimum| {worst:.1e} over 90 models, {elapsed:.1f}s")
    assert ok


def test_c03_feasibility_suite():
    rng = np.random.default_rng(11)
    violations, identity_failures, zero_calls = 0, 0, 0
    for k in range(10_000):
        dim = int(rng.integers(1, 7))
        n = int(rng.integers(1, 4))
        x = rng.uniform(size=(n, dim))
        x[rng.uniform(size=x.shape) < 0.2] = rng.choice([0.0, 1.0])
        eps = 0.0 if k % 10 == 0 else float(rng.uniform(0, 0.7))
        model = LinearModel(rng.normal(size=dim), rng.normal())
        y = rng.choice([-1.0, 1.0], n)
        cfg = AttackConfig(eps, int(rng.integers(0, 4)), None, bool(rng.integers(0, 2)))
        out = pgd_attack(attack_loss_for("head-loss", model), x, y, cfg, SeededRng(k))
        if (out < 0).any() or (out > 1).any() or (np.abs(out - x) > eps + 1e-12).any():
            violations += 1
        if eps == 0:
            zero_calls += 1
            identity_failures += out.tobytes() != x.tobytes()
    ok = violations == 0 and identity_failures == 0
    record(3, "feasibility suite", ok,
           f"10000 calls, {violations} infeasible, {identity_failures}/{zero_calls} eps=0 calls not bitwise identical")
    assert ok


def test_c04_delta_z_oracle():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(1, 9))
        Delta = float(rng.uniform(0.01, 0.3))
        w = rng.normal(size=dim)
        x = rng.uniform(Delta, 1 - Delta, size=(int(rng.integers(1, 5)), dim))
        model = LinearModel(w, rng.normal())
        got = analysis.delta_z(model, x, Delta)
        oracle = np.mean([corner_max_deviation(w, row, Delta) for row in x])
        worst = max(worst, abs(got - oracle), abs(got - Delta * np.abs(w).sum()))
    zero = analysis.delta_z(LinearModel(rng.normal(size=4), 0.3), rng.uniform(size=(6, 4)), 0.0)
    ok = worst <= 1e-6 and zero == 0.0
    record(4, "Delta_z oracle", ok, f"max |delta_z - Delta*||w||_1| {worst:.1e} over 50 models; Delta=0 -> {zero!r}")
    assert ok


# 5-7, 13. desk-scale benchmark -------------------------------------------------

@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """Default experiment: bank, Delta_z selection, alpha = 0.5 stack, alpha sweep."""
    out = tmp_path_factory.mktemp("benchmark")
    cfg = ExperimentConfig()
    cfg.output = str(out)
    t0 = time.perf_counter()
    data = pipeline.build_dataset(cfg)
    bank = pipeline.stage_train_bank(cfg, data, str(out / "bank"))
    t_bank = time.perf_counter() - t0

    t1 = time.perf_counter()
    table, sel = pipeline.stage_select(cfg, data, bank, str(out / "bank"))
    selected = bank.with_mask(sel.mask) if sel.valid else None
    afs = pipeline.stage_train_merger(cfg, data, selected, alpha=0.5) if selected is not None else None
    t_afs = time.perf_counter() - t1

    # the alpha sweep and the ratios use the selected bank when there is one, else the full bank
    sweep_bank = selected if selected is not None else bank
    sweep = [pipeline.stage_train_merger(cfg, data, sweep_bank, alpha=a) for a in cfg.alphas]
    full_afs = next(m for a, m in zip(cfg.alphas, sweep) if a == 0.5) if selected is None else None
    return dict(cfg=cfg, bank=bank, table=table, sel=sel, selected=selected, afs=afs, full_afs=full_afs,
                sweep_bank=sweep_bank, sweep=sweep, t_bank=t_bank, t_afs=t_afs)


def test_c05_bank_trend(benchmark):
    entries = benchmark["bank"].entries
    clean = [e.metrics["clean"] for e in entries]
    robust = [e.metrics["pgd20"] for e in entries]
    clean_ok, clean_inv = _trend_ok(clean, increasing=False)
    robust_ok, robust_inv = _trend_ok(robust, increasing=True)
    ok = clean_ok and robust_ok and benchmark["t_bank"] < 20 * 60
    record(5, "bank trend", ok,
           f"budgets {[e.budget for e in entries]} clean {np.round(clean, 1).tolist()} "
           f"PGD-20@{benchmark['cfg'].eval_budget:g} {np.round(robust, 1).tolist()} "
           f"(inversions clean {np.round(clean_inv, 2).tolist()}, robust {np.round(robust_inv, 2).tolist()}), "
           f"{benchmark['t_bank']:.0f}s")
    assert ok


def _c6_check(m, entries):
    scores = [analysis.tradeoff(e.metrics["clean"], e.metrics["pgd20"]) for e in entries]
    best = max(scores)
    most_robust = max(entries, key=lambda e: (e.metrics["pgd20"], e.budget))
    clean, robust = m.metrics["clean"], m.metrics["pgd20"]
    parts = (analysis.tradeoff(clean, robust) >= best - 0.5,
             clean >= most_robust.metrics["clean"] + 2.0,
             abs(robust - most_robust.metrics["pgd20"]) <= 2.0)
    detail = (f"AFS clean {clean:.1f} robust {robust:.1f} score {analysis.tradeoff(clean, robust):.2f}; "
              f"best single score {best:.2f}; most robust (budget {most_robust.budget:g}) "
              f"clean {most_robust.metrics['clean']:.1f} robust {most_robust.metrics['pgd20']:.1f}")
    return all(parts), detail


def test_c06_tradeoff_improvement(benchmark):
    sel, entries = benchmark["sel"], benchmark["bank"].entries
    d2 = np.round(sel.second_differences, 3).tolist()
    z = np.round(benchmark["table"].delta_z, 3).tolist()
    if benchmark["afs"] is None:
        _, diag = _c6_check(benchmark["full_afs"], entries)
        record(6, "trade-off improvement", False,
               f"no valid concave suffix (Delta_z {z}, d2 {d2}); nothing to stack. "
               f"Full-bank diagnostic: {diag}")
        pytest.fail("concavity selection is invalid on the benchmark bank; see the decisions ledger")
    ok, detail = _c6_check(benchmark["afs"], entries)
    ok = ok and benchmark["t_afs"] < 10 * 60
    record(6, "trade-off improvement", ok, f"mask {benchmark['selected'].mask_string}; {detail}; {benchmark['t_afs']:.0f}s")
    assert ok


def test_c07_alpha_sweep(benchmark):
    alphas = benchmark["cfg"].alphas
    clean = [m.metrics["clean"] for m in benchmark["sweep"]]
    robust = [m.metrics["pgd20"] for m in benchmark["sweep"]]
    clean_ok, clean_gap = _pairwise_ok(clean, increasing=True, slack=0.5)
    robust_ok, robust_gap = _pairwise_ok(robust, increasing=False, slack=0.5)
    ok = clean_ok and robust_ok
    record(7, "alpha sweep", ok,
           f"mask {benchmark['sweep_bank'].mask_string} alpha {alphas} clean {np.round(clean, 1).tolist()} "
           f"PGD-20 {np.round(robust, 1).tolist()} (worst violation clean {clean_gap:.1f}, robust {robust_gap:.1f})")
    assert ok


def test_c13_importance_ratios(benchmark):
    bank, sweep, alphas = benchmark["sweep_bank"], benchmark["sweep"], benchmark["cfg"].alphas
    mergers = list(sweep) + ([benchmark["afs"]] if benchmark["afs"] is not None else [])
    sum_err, scale_err = 0.0, 0.0
    for m in mergers:
        r = analysis.importance_ratios(m.merger, bank)
        sum_err = max(sum_err, abs(sum(r) - 1.0))
        scaled = Merger(7.3 * m.merger.weight.data, m.merger.bias.data)
        scale_err = max(scale_err, float(np.abs(np.subtract(analysis.importance_ratios(scaled, bank), r)).max()))
    by_alpha = dict(zip(alphas, sweep))
    last0 = analysis.importance_ratios(by_alpha[0.0].merger, bank)[-1]
    last1 = analysis.importance_ratios(by_alpha[1.0].merger, bank)[-1]
    ok = sum_err <= 1e-12 and scale_err <= 1e-12 and last0 > last1
    record(13, "importance ratios", ok,
           f"{len(mergers)} mergers, max |sum - 1| {sum_err:.1e}, max scaling drift {scale_err:.1e}; "
           f"highest-budget mass alpha=0 {last0:.4f} vs alpha=1 {last1:.4f}")
    assert ok


# 8-10. checkers ----------------------------------------------------------------

def test_c08_sufficient_condition():
    h1 = analysis.sufficient_condition([0.1, 0.4, 0.5], [6, 4, 3], 2)
    h2 = analysis.sufficient_condition([0.2, 0.5, 0.3], [6, 4, 3], 2)
    hand = h1[0] and abs(h1[1] - 0.3) < 1e-12 and not h2[0]
    rng = np.random.default_rng(17)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        deltas = np.sort(rng.uniform(0.1, 10, n))[::-1]
        lambdas = rng.dirichlet(np.ones(n))
        ref = int(rng.integers(1, n + 1))
        holds, margin = analysis.sufficient_condition(lambdas, deltas, ref)
        d_holds, d_margin = sufficient_condition_direct(lambdas, deltas, ref)
        mismatches += holds != d_holds or abs(margin - d_margin) > 1e-9
    ok = hand and mismatches == 0
    record(8, "sufficient-condition checker", ok,
           f"hand cases margin {h1[1]:.3f} (holds) / {h2[1]:.3f} (fails); {mismatches}/1000 random mismatches")
    assert ok


def test_c09_concavity_selection():
    a = analysis.concavity_select(analysis.DeltaZTable([0, 1, 2, 3], [10, 8, 5, 1], 0.2))
    b = analysis.concavity_select(analysis.DeltaZTable([0, 1, 2, 3], [10, 6, 3, 1], 0.2))
    hand = (a.second_differences == [-1.0, -1.0] and a.valid and all(a.mask)
            and b.second_differences == [1.0, 1.0] and not b.valid and not any(b.mask))
    rng = np.random.default_rng(19)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(3, 10))
        values = rng.uniform(0, 10, n).round(int(rng.integers(0, 3)))
        if values.max() == 0:
            values[0] = 1.0
        sel = analysis.concavity_select(analysis.DeltaZTable(list(range(n)), values.tolist(), 0.2))
        start = concave_suffix_direct(values.tolist(), 1e-3 * values.max())
        mismatches += sel.start != start or sel.valid != (n - start >= 3)
    ok = hand and mismatches == 0
    record(9, "concavity selection", ok,
           f"[10,8,5,1] d2 {a.second_differences} valid={a.valid}; [10,6,3,1] d2 {b.second_differences} "
           f"valid={b.valid}; {mismatches}/1000 random mismatches")
    assert ok


def test_c10_tradeoff_means():
    a = round(analysis.tradeoff(90.93, 53.05), 2)
    b = round(analysis.tradeoff(60.43, 29.34), 2)
    ok = a == 71.99 and b == 44.88
    record(10, "trade-off score", ok, f"(90.93, 53.05) -> {a:.2f}, (60.43, 29.34) -> {b:.2f}")
    assert ok


# 11. persistence -----------------------------------------------------------------

def test_c11_persistence(tiny_bank, tmp_path):
    exact = True
    for i, e in enumerate(tiny_bank.entries):
        path = str(tmp_path / f"e{i}.afsc")
        checkpoint.save_checkpoint(e.checkpoint, path)
        back = checkpoint.load_checkpoint(path)
        pairs = zip(e.checkpoint.net.parameters() + e.checkpoint.head.parameters(),
                    back.net.parameters() + back.head.parameters())
        for p, q in pairs:
            exact &= np.array_equal(p.data.astype(np.float32), q.data.astype(np.float32))
            exact &= np.array_equal(q.data, q.data.astype(np.float32).astype(np.float64))
    rng = np.random.default_rng(23)
    m = checkpoint.MergerCheckpoint(Merger(rng.normal(size=(6, 2)), rng.normal(size=2)), "011", {"clean": 1.0})
    mpath = str(tmp_path / "m.afsc")
    checkpoint.save_checkpoint(m, mpath)
    mb = checkpoint.load_checkpoint(mpath)
    exact &= np.array_equal(mb.merger.weight.data, m.merger.weight.data.astype(np.float32))
    exact &= mb.mask == "011"

    blob = open(mpath, "rb").read()
    rejected = []
    for name, bad, err in [("truncated", blob[:-3], CorruptCheckpointError),
                           ("trailing", blob + b"\0", CorruptCheckpointError),
                           ("magic", b"XXXX" + blob[4:], CorruptCheckpointError),
                           ("version", blob[:4] + (99).to_bytes(4, "little") + blob[8:], CheckpointVersionError),
                           ("empty", b"", CorruptCheckpointError)]:
        p = tmp_path / f"bad_{name}.afsc"
        p.write_bytes(bad)
        try:
            checkpoint.load_checkpoint(str(p))
            rejected.append(False)
        except err:
            rejected.append(True)
    ok = exact and all(rejected)
    record(11, "persistence", ok,
           f"round trip bit-exact at float32: {exact}; {sum(rejected)}/{len(rejected)} corrupt files rejected")
    assert ok


# 12. determinism -----------------------------------------------------------------

SMALL_RUN = """\
seed = 3
data.n = 600
data.dim = 8
data.robust_dims = 2
bank.budgets = 0, 0.05, 0.1, 0.2
train.epochs = 2
train.hidden = 8
train.feature_dim = 4
train.attack_steps = 3
train.eval_steps = 3
merger.epochs = 1
merger.attack_steps = 3
eval.deltaz_samples = 64
eval.curve_budgets = 0, 0.1, 0.2
"""


def _pipeline_run(root):
    os.makedirs(root)
    cfg = os.path.join(root, "config.txt")
    with open(cfg, "w") as f:
        f.write(SMALL_RUN)
    bank = os.path.join(root, "bank")
    codes = [main(["train-bank", "--config", cfg, "--out", bank])]
    codes.append(main(["select", "--bank", bank]))
    mergers = []
    for alpha in ("0", "0.5", "1"):
        path = os.path.join(root, f"merger_{alpha}.afsc")
        codes.append(main(["train-merger", "--bank", bank, "--alpha", alpha, "--out", path]))
        mergers += ["--merger", path]
    codes.append(main(["evaluate", "--bank", bank, "--merger", mergers[3], "--out", os.path.join(root, "eval.csv")]))
    codes.append(main(["report", "--bank", bank, *mergers, "--out", os.path.join(root, "report")]))
    csvs = sorted(glob.glob(os.path.join(root, "**", "*.csv"), recursive=True))
    return codes, {os.path.relpath(p, root): open(p, "rb").read() for p in csvs}


def test_c12_determinism(tmp_path):
    codes_a, a = _pipeline_run(str(tmp_path / "a"))
    codes_b, b = _pipeline_run(str(tmp_path / "b"))
    ran = all(c == EXIT_OK for i, c in enumerate(codes_a) if i != 1) and codes_a[1] in (EXIT_OK, EXIT_NUMERIC)
    same = codes_a == codes_b and a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    ok = ran and same and len(a) >= 9
    record(12, "determinism", ok, f"{len(a)} CSV files, byte-identical across two runs: {same}; exit codes {codes_a}")
    assert ok
