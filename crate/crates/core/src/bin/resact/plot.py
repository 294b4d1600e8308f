"""Draws the tables written by `resact plot`. Run from the output directory."""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read(name):
    with open(name, newline="") as f:
        return list(csv.DictReader(f))


def num(row, key):
    v = row.get(key, "")
    return float(v) if v else float("nan")


def band(ax, rows, x, key, label):
    xs = [num(r, x) for r in rows]
    ys = [num(r, key + "_mean") for r in rows]
    lo = [num(r, key + "_ci_lo") for r in rows]
    hi = [num(r, key + "_ci_hi") for r in rows]
    pts = [(a, b, c, d) for a, b, c, d in zip(xs, ys, lo, hi) if b == b]
    if not pts:
        return
    xs, ys, lo, hi = map(list, zip(*pts))
    ax.plot(xs, ys, marker="o", label=label)
    ax.fill_between(xs, lo, hi, alpha=0.25)


if os.path.exists("curves.csv"):
    rows = read("curves.csv")
    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    band(axes[0], rows, "iteration", "val_ncis", "validation NCIS")
    band(axes[1], rows, "iteration", "rec", "reconstruction")
    band(axes[2], rows, "iteration", "td1", "TD (Q1)")
    for ax in axes:
        ax.set_xlabel("iteration")
        ax.legend()
    fig.tight_layout()
    fig.savefig("curves.png", dpi=120)

if os.path.exists("n_sweep.csv"):
    rows = read("n_sweep.csv")
    fig, ax = plt.subplots(figsize=(5, 4))
    band(ax, rows, "n_estimators", "ncis", "NCIS")
    ax.set_xlabel("number of estimators")
    ax.legend()
    fig.tight_layout()
    fig.savefig("n_sweep.png", dpi=120)
