"""Typed weighted heterogeneous graph: ingestion and neighbor queries.

The graph is built once from edge/node files and then frozen. Every
relation is indexed from both endpoints, adjacency lists are sorted by
descending weight (ties: ascending node id), and all query methods are
read-only, so concurrent lookups are safe.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


class NodeType(enum.Enum):
    AD = "ad"
    KEYWORD = "keyword"
    ITEM = "item"


class Relation(enum.Enum):
    AD_CLICK_KW = "ad_click_kw"
    AD_BID_KW = "ad_bid_kw"
    ITEM_CLICK_KW = "item_click_kw"
    AD_COCLICK_ITEM = "ad_coclick_item"


RELATION_SCHEMA = {
    Relation.AD_CLICK_KW: (NodeType.AD, NodeType.KEYWORD),
    Relation.AD_BID_KW: (NodeType.AD, NodeType.KEYWORD),
    Relation.ITEM_CLICK_KW: (NodeType.ITEM, NodeType.KEYWORD),
    Relation.AD_COCLICK_ITEM: (NodeType.AD, NodeType.ITEM),
}


@dataclass(frozen=True)
class NodeRef:
    node_type: NodeType
    node_id: int


@dataclass
class NodeRecord:
    node_type: NodeType
    node_id: int
    category_id: int  # -1 when unknown
    searched_count: float
    features: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EdgeRecord:
    src_type: NodeType
    src_id: int
    relation: Relation
    dst_type: NodeType
    dst_id: int
    weight: float
    location: str = ""


def other_endpoint(relation: Relation, node_type: NodeType) -> NodeType:
    src, dst = RELATION_SCHEMA[relation]
    if node_type == src:
        return dst
    if node_type == dst:
        return src
    raise ValueError(f"{relation.value} does not touch node type {node_type.value}")


@dataclass(frozen=True)
class Metapath:
    """A walk recipe: a relation per hop, starting from source_type.

    Hop direction is implied by the current node type (all relations here
    connect two distinct types, so each step has exactly one way forward).
    """

    name: str
    source_type: NodeType
    steps: tuple

    def __post_init__(self):
        if len(self.steps) < 1:
            raise ValueError("metapath needs at least one step")
        t = self.source_type
        for rel in self.steps:
            t = other_endpoint(rel, t)  # raises if incompatible

    def type_chain(self):
        """Node type at each depth, root first."""
        chain = [self.source_type]
        for rel in self.steps:
            chain.append(other_endpoint(rel, chain[-1]))
        return chain


class HeteroGraph:
    """Frozen typed graph with per-(node, relation) weight-sorted adjacency."""

    def __init__(self, nodes, adjacency, warnings=None):
        # nodes: {NodeType: {node_id: NodeRecord}}
        self.nodes = nodes
        self._adj = adjacency  # {(Relation, NodeType): {node_id: (ids, weights)}}
        self.warnings = warnings or []
        self.ids_of = {
            t: np.array(sorted(recs.keys()), dtype=np.int64) for t, recs in nodes.items()
        }
        self.index_of = {
            t: {int(i): pos for pos, i in enumerate(ids)} for t, ids in self.ids_of.items()
        }

    def num_nodes(self, node_type: NodeType) -> int:
        return len(self.nodes[node_type])

    def has_node(self, ref: NodeRef) -> bool:
        return ref.node_id in self.nodes[ref.node_type]

    def record(self, ref: NodeRef) -> NodeRecord:
        return self.nodes[ref.node_type][ref.node_id]

    def neighbors(self, ref: NodeRef, relation: Relation, m=None):
        """Top-m neighbors of ref under relation, by descending edge weight.

        m=None means the full neighborhood. Returns (ids, weights) arrays.
        """
        table = self._adj.get((relation, ref.node_type))
        entry = None if table is None else table.get(ref.node_id)
        if entry is None:
            empty = np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
            return empty
        ids, weights = entry
        if m is None or m >= len(ids):
            return ids, weights
        return ids[:m], weights[:m]

    def degree(self, ref: NodeRef, relation: Relation) -> int:
        return len(self.neighbors(ref, relation)[0])

    def edge_count(self, relation: Relation) -> int:
        """Distinct edges of one relation (counted from the source side)."""
        side = RELATION_SCHEMA[relation][0]
        table = self._adj.get((relation, side), {})
        return sum(len(ids) for ids, _ in table.values())

    def metapath_neighbors(self, v: NodeRef, path: Metapath, m=None):
        """Tree expansion along `path` with top-m truncation per parent.

        Returns one list per hop; each entry is (node_id, parent_index,
        edge_weight) where parent_index points into the previous hop
        (-1 for hop-1 entries, whose parent is the root). Nodes reached
        through different branches appear once per branch.
        """
        if v.node_type != path.source_type:
            raise ValueError(
                f"node type {v.node_type.value} does not match metapath source "
                f"{path.source_type.value}"
            )
        chain = path.type_chain()
        hops = []
        parents = [(v.node_id, -1, 0.0)]
        for depth, rel in enumerate(path.steps):
            layer = []
            ptype = chain[depth]
            for pidx, (pid, _, _) in enumerate(parents):
                ids, ws = self.neighbors(NodeRef(ptype, pid), rel, m)
                parent_mark = pidx if depth > 0 else -1
                layer.extend((int(i), parent_mark, float(w)) for i, w in zip(ids, ws))
            hops.append(layer)
            parents = layer
        return hops

    def influential_neighbors(self, v: NodeRef, kappa: int):
        """Top-kappa cross-type neighbors by bid-edge weight (ads <-> keywords)."""
        if v.node_type == NodeType.ITEM:
            raise ValueError("influential neighbors are defined for ads and keywords only")
        ids, _ = self.neighbors(v, Relation.AD_BID_KW, kappa)
        other = other_endpoint(Relation.AD_BID_KW, v.node_type)
        return [NodeRef(other, int(i)) for i in ids]

    def adjacency_items(self):
        """Iterate ((relation, node_type), node_id, ids, weights) for all lists."""
        for key, table in self._adj.items():
            for node_id, (ids, ws) in table.items():
                yield key, node_id, ids, ws


def ingest(edge_records, node_records) -> HeteroGraph:
    """Build a frozen HeteroGraph; duplicate (src, dst, rel) edges merge by weight sum."""
    nodes = {t: {} for t in NodeType}
    for rec in node_records:
        if rec.node_id in nodes[rec.node_type]:
            raise DataError(
                f"duplicate node record {rec.node_type.value}:{rec.node_id}"
            )
        nodes[rec.node_type][rec.node_id] = rec

    # accumulate merged weights per (relation, side) with dict-of-dict
    acc = {}
    for e in edge_records:
        schema = RELATION_SCHEMA[e.relation]
        if (e.src_type, e.dst_type) != schema:
            raise DataError(
                f"{e.location}: relation {e.relation.value} expects "
                f"{schema[0].value}->{schema[1].value}, got "
                f"{e.src_type.value}->{e.dst_type.value}"
            )
        if e.weight < 0:
            raise DataError(f"{e.location}: negative edge weight {e.weight}")
        if e.src_id not in nodes[e.src_type]:
            raise DataError(
                f"{e.location}: dangling endpoint {e.src_type.value}:{e.src_id}"
            )
        if e.dst_id not in nodes[e.dst_type]:
            raise DataError(
                f"{e.location}: dangling endpoint {e.dst_type.value}:{e.dst_id}"
            )
        fwd = acc.setdefault((e.relation, e.src_type), {})
        fwd.setdefault(e.src_id, {})
        fwd[e.src_id][e.dst_id] = fwd[e.src_id].get(e.dst_id, 0.0) + e.weight
        rev = acc.setdefault((e.relation, e.dst_type), {})
        rev.setdefault(e.dst_id, {})
        rev[e.dst_id][e.src_id] = rev[e.dst_id].get(e.src_id, 0.0) + e.weight

    adjacency = {}
    for key, table in acc.items():
        out = {}
        for node_id, nbrs in table.items():
            pairs = sorted(nbrs.items(), key=lambda kv: (-kv[1], kv[0]))
            ids = np.array([p[0] for p in pairs], dtype=np.int64)
            ws = np.array([p[1] for p in pairs], dtype=np.float64)
            ids.flags.writeable = False
            ws.flags.writeable = False
            out[node_id] = (ids, ws)
        adjacency[key] = out
    return HeteroGraph(nodes, adjacency)


_NODE_TYPE_BY_TOKEN = {t.value: t for t in NodeType}
_RELATION_BY_TOKEN = {r.value: r for r in Relation}


def parse_edge_line(line: str, location: str) -> EdgeRecord:
    parts = line.split()
    if len(parts) != 6:
        raise DataError(f"{location}: expected 6 fields, got {len(parts)}")
    st, sid, rel, dt, did, w = parts
    try:
        return EdgeRecord(
            src_type=_NODE_TYPE_BY_TOKEN[st],
            src_id=int(sid),
            relation=_RELATION_BY_TOKEN[rel],
            dst_type=_NODE_TYPE_BY_TOKEN[dt],
            dst_id=int(did),
            weight=float(w),
            location=location,
        )
    except KeyError as exc:
        raise DataError(f"{location}: unknown token {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise DataError(f"{location}: {exc}") from exc


def parse_node_line(line: str, location: str) -> NodeRecord:
    parts = line.split()
    if len(parts) < 4:
        raise DataError(f"{location}: expected at least 4 fields, got {len(parts)}")
    ttok, nid, cat, searched = parts[:4]
    try:
        ntype = _NODE_TYPE_BY_TOKEN[ttok]
        node_id = int(nid)
        category = int(cat)
        searched_count = float(searched)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{location}: {exc}") from exc
    features = {}
    for kv in parts[4:]:
        if "=" not in kv:
            raise DataError(f"{location}: feature field {kv!r} is not name=value")
        name, value = kv.split("=", 1)
        features[name] = value
    return NodeRecord(ntype, node_id, category, searched_count, features)


def iter_file_records(path, parser):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield parser(line, f"{path}:{lineno}")


def load_graph(edge_path, node_path) -> HeteroGraph:
    nodes = list(iter_file_records(node_path, parse_node_line))
    edges = list(iter_file_records(edge_path, parse_edge_line))
    return ingest(edges, nodes)
