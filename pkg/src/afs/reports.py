"""CSV reports. Every file has a header row; reals use fixed 6-decimal formatting."""
import csv
import io
import os

import numpy as np

from .files import atomic_write

SCHEMAS = {
    "bank_table.csv": ("budget", "clean", "pgd10", "pgd20"),
    "deltaz.csv": ("budget", "delta_z", "Delta"),
    "alpha_sweep.csv": ("alpha", "clean", "pgd10", "pgd20"),
    "curve.csv": ("budget", "accuracy", "model_id"),
    "ratios.csv": ("extractor_index", "ratio", "alpha"),
    "histogram.csv": ("bin_lo", "bin_hi", "count"),
    "tradeoff.csv": ("model_id", "clean", "robust", "score"),
    "eval.csv": ("model_id", "budget", "clean", "pgd10", "pgd20"),
}


def fmt(value):
    """6-decimal text for reals, plain text for ints and strings."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "nan" if v != v else f"{v:.6f}"
    return str(value)


def render_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"CSV row {row!r} does not match header {header}")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write(path, render_csv(header, rows))
    return path


def write_report(directory, name, rows):
    """Write one of the named report files using its fixed header."""
    if name not in SCHEMAS:
        raise KeyError(f"unknown report {name!r}")
    return write_csv(os.path.join(directory, name), SCHEMAS[name], rows)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def bank_rows(bank):
    return [(e.budget, e.metrics["clean"], e.metrics["pgd10"], e.metrics["pgd20"]) for e in bank.entries]


def export_features(path, features, labels):
    """Raw penultimate features for external embedding tools: f0..f{k-1},label."""
    features = np.asarray(features, dtype=np.float64)
    header = tuple(f"f{j}" for j in range(features.shape[1])) + ("label",)
    rows = [tuple(row) + (int(y),) for row, y in zip(features, labels)]
    return write_csv(path, header, rows)
