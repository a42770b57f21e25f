#!/usr/bin/env python3
"""End-to-end demo: generate data, train the full model, retrieve, score.

Writes everything under runs/demo. Usage: python scripts/run_pipeline.py
[seed].
"""

import sys
from pathlib import Path

from hgmatch.cli import main

SEED = sys.argv[1] if len(sys.argv) > 1 else "1"
ROOT = Path("runs/demo")
DATA = ROOT / "data"
RUN = ROOT / "full"


def sh(args):
    print("+ hgmatch " + " ".join(args))
    rc = main(args)
    if rc != 0:
        sys.exit(rc)


sh(["synth-gen", "--out-dir", str(DATA), "--seed", SEED,
    "--set", "labels_per_view=2500"])
sh(["build-graph", "--edges", str(DATA / "edges.tsv"),
    "--nodes", str(DATA / "nodes.tsv"), "--out", str(ROOT / "graph_stats.txt")])
sh(["train",
    "--edges", str(DATA / "edges.tsv"), "--nodes", str(DATA / "nodes.tsv"),
    "--labels", str(DATA / "labels.tsv"), "--features", str(DATA / "features.tsv"),
    "--seed", SEED, "--set", "learning_rate=0.003",
    "--out-dir", str(RUN)])
sh(["embed", "--checkpoint", str(RUN / "model.ckpt"),
    "--edges", str(DATA / "edges.tsv"), "--nodes", str(DATA / "nodes.tsv"),
    "--features", str(DATA / "features.tsv"),
    "--boundaries", str(RUN / "boundaries.tsv"),
    "--out", str(RUN / "embeddings.tsv")])
sh(["retrieve", "--embeddings", str(RUN / "embeddings.tsv"),
    "--edges", str(DATA / "edges.tsv"), "--nodes", str(DATA / "nodes.tsv"),
    "--task", str(DATA / "task.tsv"), "--k", "50",
    "--out", str(RUN / "retrieved.tsv")])
sh(["evaluate", "--retrieved", str(RUN / "retrieved.tsv"),
    "--task", str(DATA / "task.tsv"), "--out", str(RUN / "recall.txt")])
print(f"\nartifacts under {ROOT}/")
