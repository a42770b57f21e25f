"""Raw node features -> integer lookup indices for the embedding tables.

Numeric features are quantile-discretized (type-7 linear interpolation),
id/term features are vocabulary indices with stable-hash fallback for
out-of-range values. Features with the same name share one lookup table
across node types. Bucket/index 0 doubles as the reserved slot for
missing or NaN values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph import HeteroGraph, NodeType

KIND_ID = "id"
KIND_TERMS = "terms"
KIND_NUMERIC = "numeric"

DEFAULT_HASH_VOCAB = 50021
DEFAULT_BUCKETS = 16
DEFAULT_WIDTH = 8


def stable_hash(name: str, value) -> int:
    """FNV-1a on 'name:value'; independent of PYTHONHASHSEED."""
    h = 0xCBF29CE484222325
    for b in f"{name}:{value}".encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # id | terms | numeric
    size: int  # vocabulary size, or bucket count for numeric
    width: int

    def __post_init__(self):
        if self.kind not in (KIND_ID, KIND_TERMS, KIND_NUMERIC):
            raise DataError(f"unknown feature kind {self.kind!r}")
        if self.kind == KIND_NUMERIC and self.size < 2:
            raise DataError(f"numeric feature {self.name} needs >= 2 buckets")
        if self.size < 1 or self.width < 1:
            raise DataError(f"bad sizes for feature {self.name}")


@dataclass
class FeatureManifest:
    """Ordered feature lists per node type; same-name specs must agree."""

    per_type: dict  # {NodeType: [FeatureSpec, ...]}

    def __post_init__(self):
        seen = {}
        for specs in self.per_type.values():
            for s in specs:
                if s.name in seen and seen[s.name] != s:
                    raise DataError(
                        f"feature {s.name!r} declared with conflicting spec "
                        f"(shared tables require identical kind/size/width)"
                    )
                seen[s.name] = s
        self.tables = seen  # {name: FeatureSpec}

    def concat_width(self, node_type: NodeType) -> int:
        return sum(s.width for s in self.per_type.get(node_type, []))


def save_manifest(manifest: FeatureManifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# node_type\tfeature\tkind\tsize\twidth\n")
        for ntype in NodeType:
            for s in manifest.per_type.get(ntype, []):
                fh.write(f"{ntype.value}\t{s.name}\t{s.kind}\t{s.size}\t{s.width}\n")


def load_manifest(path) -> FeatureManifest:
    per_type = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields")
            ttok, name, kind, size, width = parts
            try:
                ntype = {t.value: t for t in NodeType}[ttok]
                vocab = DEFAULT_HASH_VOCAB if size == "-" else int(size)
                spec = FeatureSpec(name, kind, vocab, int(width))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            per_type.setdefault(ntype, []).append(spec)
    return FeatureManifest(per_type)


# --- quantile discretization ---------------------------------------------

@dataclass
class QuantileBoundaries:
    feature_name: str
    boundaries: np.ndarray  # strictly increasing, length <= bucket_count - 1
    degenerate: bool = False  # all inputs identical -> single bucket


def fit_quantiles(values, bucket_count: int, feature_name: str = "") -> QuantileBoundaries:
    """Boundaries at empirical quantiles k/bucket_count (linear interpolation)."""
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise DataError(f"cannot fit quantiles for {feature_name!r}: no values")
    vals = vals[~np.isnan(vals)]
    if vals.size == 0 or np.all(vals == vals[0]):
        return QuantileBoundaries(feature_name, np.empty(0), degenerate=True)
    qs = np.arange(1, bucket_count) / bucket_count
    bounds = np.quantile(vals, qs, method="linear")
    bounds = np.unique(bounds)  # collapse duplicates; fewer effective buckets
    return QuantileBoundaries(feature_name, bounds)


def discretize(x, q: QuantileBoundaries) -> int:
    """Bucket id = number of boundaries <= x; NaN maps to the reserved bucket 0."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return 0
    return int(np.searchsorted(q.boundaries, x, side="right"))


def save_boundaries(bounds_by_name: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# feature\tboundaries...\n")
        for name in sorted(bounds_by_name):
            q = bounds_by_name[name]
            vals = " ".join(repr(float(b)) for b in q.boundaries)
            fh.write(f"{name}\t{vals}\n".rstrip() + "\n")


def load_boundaries(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            name = parts[0]
            bounds = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            out[name] = QuantileBoundaries(name, bounds, degenerate=bounds.size == 0)
    return out


def fit_graph_quantiles(graph: HeteroGraph, manifest: FeatureManifest) -> dict:
    """Fit boundaries for every numeric feature from the ingested node records."""
    values = {}
    for ntype, specs in manifest.per_type.items():
        numeric = [s for s in specs if s.kind == KIND_NUMERIC]
        if not numeric:
            continue
        for rec in graph.nodes[ntype].values():
            for s in numeric:
                raw = rec.features.get(s.name)
                if raw is None:
                    continue
                try:
                    values.setdefault(s.name, []).append(float(raw))
                except ValueError as exc:
                    raise DataError(
                        f"bad numeric value {raw!r} for {s.name} on "
                        f"{ntype.value}:{rec.node_id}"
                    ) from exc
    out = {}
    for ntype, specs in manifest.per_type.items():
        for s in specs:
            if s.kind == KIND_NUMERIC and s.name not in out:
                out[s.name] = fit_quantiles(values.get(s.name, [0.0]), s.size, s.name)
    return out


# --- encoded layout --------------------------------------------------------

@dataclass
class TermSlot:
    name: str
    flat: np.ndarray     # table indices of all terms, CSR order
    offsets: np.ndarray  # (n_nodes + 1,)
    counts: np.ndarray   # (n_nodes,) float, 0 for empty term lists
    rows: np.ndarray = None  # node row of each flat entry

    def __post_init__(self):
        if self.rows is None:
            self.rows = np.repeat(
                np.arange(len(self.counts), dtype=np.int64),
                np.diff(self.offsets),
            )


@dataclass
class TypeLayout:
    node_type: NodeType
    specs: list
    single: dict  # {feature_name: (n_nodes,) int array}
    terms: dict   # {feature_name: TermSlot}


@dataclass
class EncodeStats:
    oov: int = 0
    nan: int = 0
    missing: int = 0


class FeatureEncoder:
    """Precomputes table indices for every node, in dense (sorted-id) order."""

    def __init__(self, manifest: FeatureManifest, boundaries: dict):
        self.manifest = manifest
        self.boundaries = boundaries
        self.stats = EncodeStats()

    def _index_value(self, spec: FeatureSpec, raw) -> int:
        if raw is None:
            self.stats.missing += 1
            return 0
        try:
            v = int(raw)
        except ValueError:
            self.stats.oov += 1
            return stable_hash(spec.name, raw) % spec.size
        if 0 <= v < spec.size:
            return v
        self.stats.oov += 1
        return stable_hash(spec.name, v) % spec.size

    def encode_graph(self, graph: HeteroGraph) -> dict:
        layouts = {}
        for ntype, specs in self.manifest.per_type.items():
            ids = graph.ids_of[ntype]
            records = [graph.nodes[ntype][int(i)] for i in ids]
            single, terms = {}, {}
            for spec in specs:
                if spec.kind == KIND_TERMS:
                    flat, offsets = [], [0]
                    for rec in records:
                        raw = rec.features.get(spec.name)
                        toks = [] if raw in (None, "") else raw.split(",")
                        flat.extend(self._index_value(spec, t) for t in toks)
                        offsets.append(len(flat))
                    offsets = np.array(offsets, dtype=np.int64)
                    counts = np.diff(offsets).astype(np.float64)
                    terms[spec.name] = TermSlot(
                        spec.name, np.array(flat, dtype=np.int64), offsets, counts
                    )
                elif spec.kind == KIND_NUMERIC:
                    q = self.boundaries.get(spec.name)
                    if q is None:
                        raise DataError(f"no quantile boundaries for {spec.name!r}")
                    col = np.zeros(len(records), dtype=np.int64)
                    for row, rec in enumerate(records):
                        raw = rec.features.get(spec.name)
                        if raw is None:
                            self.stats.missing += 1
                            continue
                        x = float(raw)
                        if math.isnan(x):
                            self.stats.nan += 1
                            continue
                        col[row] = discretize(x, q)
                    single[spec.name] = col
                else:  # id
                    col = np.array(
                        [self._index_value(spec, rec.features.get(spec.name)) for rec in records],
                        dtype=np.int64,
                    )
                    single[spec.name] = col
            layouts[ntype] = TypeLayout(ntype, list(specs), single, terms)
        return layouts
