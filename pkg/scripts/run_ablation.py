#!/usr/bin/env python3
"""Multi-seed ablation: run the variant grid per seed and average recalls.

Usage: python scripts/run_ablation.py [n_seeds] [k1,k2,...]
Writes per-seed reports under runs/ablation/seed<N>/ and prints a mean
summary across seeds.
"""

import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from hgmatch.cli import main
from hgmatch.config import ABLATION_ORDER

N_SEEDS = int(sys.argv[1]) if len(sys.argv) > 1 else 3
KS = sys.argv[2] if len(sys.argv) > 2 else "50,100,200"
ROOT = Path("runs/ablation")


def sh(args):
    rc = main(args)
    if rc != 0:
        sys.exit(rc)


means = defaultdict(list)
for seed in range(1, N_SEEDS + 1):
    data = ROOT / f"seed{seed}" / "data"
    out = ROOT / f"seed{seed}" / "grid"
    sh(["synth-gen", "--out-dir", str(data), "--seed", str(seed),
        "--set", "labels_per_view=2500"])
    sh(["ablate",
        "--edges", str(data / "edges.tsv"), "--nodes", str(data / "nodes.tsv"),
        "--labels", str(data / "labels.tsv"), "--features", str(data / "features.tsv"),
        "--task", str(data / "task.tsv"), "--ks", KS,
        "--seed", str(seed), "--set", "learning_rate=0.003",
        "--out-dir", str(out)])
    for line in (out / "report.tsv").read_text().splitlines()[1:]:
        variant, section, k, value = line.split("\t")
        if value != "-":
            means[(variant, section, int(k))].append(float(value))

print(f"\n== mean recall across {N_SEEDS} seeds ==")
ks = sorted({k for (_, _, k) in means})
print("variant".ljust(14) + "".join(f"K={k}".rjust(10) for k in ks))
for variant in ABLATION_ORDER:
    cells = []
    for k in ks:
        vals = means.get((variant, "recall@3k", k))
        cells.append(f"{np.mean(vals):.4f}".rjust(10) if vals else "-".rjust(10))
    print(variant.ljust(14) + "".join(cells))
