"""End-to-end wiring: dataset loading, training runs, ablation grids."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ALL_VIEWS, TrainConfig, VariantSpec, VARIANTS, ABLATION_ORDER
from .errors import DataError
from .features import (
    FeatureEncoder,
    FeatureManifest,
    fit_graph_quantiles,
    load_boundaries,
    load_manifest,
    save_boundaries,
)
from .graph import HeteroGraph, load_graph
from .model import MatchingModel, active_paths
from .params import ModelParams, init_params, save_checkpoint
from .retrieval import EvalTask, RecallResult, cold_start_split, evaluate_store, export_embeddings, load_task
from .sampling import CategoryIndex
from .trainer import FitResult, Trainer


def load_labels(path) -> list:
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected `view ad_id kw_id`")
            view, ad_id, kw_id = parts
            if view not in ALL_VIEWS:
                raise DataError(f"{path}:{lineno}: unknown view {view!r}")
            try:
                labels.append((view, int(ad_id), int(kw_id)))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return labels


@dataclass
class Dataset:
    graph: HeteroGraph
    manifest: FeatureManifest
    boundaries: dict
    layouts: dict
    cat_index: CategoryIndex
    labels: list
    task: EvalTask


def load_dataset(edges, nodes, features, labels=None, task=None, boundaries=None) -> Dataset:
    graph = load_graph(edges, nodes)
    manifest = load_manifest(features)
    bounds = load_boundaries(boundaries) if boundaries else fit_graph_quantiles(graph, manifest)
    encoder = FeatureEncoder(manifest, bounds)
    layouts = encoder.encode_graph(graph)
    return Dataset(
        graph=graph,
        manifest=manifest,
        boundaries=bounds,
        layouts=layouts,
        cat_index=CategoryIndex.build(graph),
        labels=load_labels(labels) if labels else [],
        task=load_task(task) if task else None,
    )


def build_model(dataset: Dataset, cfg: TrainConfig, variant: VariantSpec,
                params: ModelParams = None) -> MatchingModel:
    if params is None:
        rng = np.random.default_rng((cfg.seed, 31))
        paths_by_tower = {t: active_paths(t, variant.groups) for t in ("ad", "kw")}
        params = init_params(dataset.manifest, cfg, variant, paths_by_tower, rng)
    return MatchingModel(dataset.graph, dataset.layouts, dataset.manifest, params, cfg, variant)


def train_variant(dataset: Dataset, cfg: TrainConfig, variant: VariantSpec,
                  out_dir=None, log=None) -> tuple:
    """Train one variant; optionally persist checkpoint + boundaries."""
    model = build_model(dataset, cfg, variant)
    trainer = Trainer(model, dataset.cat_index, dataset.labels)
    result = trainer.fit(log=log) if cfg.epochs > 0 else FitResult()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model.params, out_dir / "model.ckpt")
        save_boundaries(dataset.boundaries, out_dir / "boundaries.tsv")
    return model, result


def evaluate_variant(model: MatchingModel, dataset: Dataset, ks, cold=False) -> dict:
    """Recall at each K; returns {k: RecallResult}."""
    if dataset.task is None:
        raise DataError("dataset has no evaluation task")
    task = cold_start_split(dataset.graph, dataset.task) if cold else dataset.task
    store = export_embeddings(model)
    return {
        k: evaluate_store(store, dataset.graph, dataset.cat_index, task, k) for k in ks
    }


SECTION_OVERALL = "recall@3k"
SECTION_COLD = "cold-start recall@3k"


def view_section(view: str) -> str:
    return f"view {view} recall@k"


def run_ablation(dataset: Dataset, base_cfg: TrainConfig, ks,
                 variants=ABLATION_ORDER, out_dir=None, log=None) -> "AblationReport":
    from .report import AblationReport

    sections = [SECTION_OVERALL] + [view_section(v) for v in ALL_VIEWS] + [SECTION_COLD]
    report = AblationReport(ks=list(ks), sections=sections, variants=list(variants), values={})
    for name in variants:
        variant = VARIANTS[name]
        vdir = None if out_dir is None else Path(out_dir) / name
        model, fit_result = train_variant(dataset, base_cfg, variant, out_dir=vdir, log=log)
        results = evaluate_variant(model, dataset, ks)
        cold_results = evaluate_variant(model, dataset, ks, cold=True)
        for k in ks:
            r: RecallResult = results[k]
            report.values[(name, SECTION_OVERALL, k)] = r.overall
            for view in ALL_VIEWS:
                report.values[(name, view_section(view), k)] = r.per_view.get(view)
            report.values[(name, SECTION_COLD, k)] = cold_results[k].overall
        if log:
            at = {k: round(results[k].overall, 4) for k in ks}
            log(f"variant {name}: recall@3k {at}")
    return report
