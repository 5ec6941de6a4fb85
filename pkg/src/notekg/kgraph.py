"""Directed knowledge graph assembly and export.

Disease nodes point at entity nodes through edges labeled treatment, factor,
or coexists_with. Entities are unique per graph by their normalized label;
the display label is the highest-scored surface form seen for that entity.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable

from .extraction import Relation
from .postprocess import normalize
from .prompting import EntityCategory

GRAPH_SCHEMA_VERSION = 1


class GraphError(ValueError):
    """Graph invariant violation or malformed import data."""


@dataclass(frozen=True)
class Node:
    label: str
    kind: str  # "disease" | "entity"


@dataclass(frozen=True)
class Edge:
    source: str  # disease label
    target: str  # entity display label
    category: EntityCategory
    avg_score: float
    count: int


@dataclass(frozen=True)
class KnowledgeGraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    def node_labels(self, kind: str) -> set[str]:
        return {n.label for n in self.nodes if n.kind == kind}


def build_graph(relations: Iterable[Relation]) -> KnowledgeGraph:
    """Assemble a graph from relations (one edge per (disease, entity) pair).

    Identical duplicate relations collapse; a (disease, entity) pair arriving
    with conflicting categories or stats is an upstream argmax bug and
    raises.
    """
    diseases: dict[str, str] = {}
    entity_display: dict[str, tuple[float, str]] = {}
    edge_map: dict[tuple[str, str], Relation] = {}

    for rel in relations:
        entity_key = rel.entity_key or normalize(rel.entity)
        if not entity_key:
            raise GraphError(f"relation entity normalizes to nothing: {rel.entity!r}")
        diseases.setdefault(rel.disease, rel.disease)
        best = entity_display.get(entity_key)
        if best is None or rel.avg_score > best[0]:
            entity_display[entity_key] = (rel.avg_score, rel.entity)
        pair = (rel.disease, entity_key)
        existing = edge_map.get(pair)
        if existing is not None:
            if (existing.category, existing.avg_score, existing.count) != (
                rel.category,
                rel.avg_score,
                rel.count,
            ):
                raise GraphError(
                    f"conflicting relations for ({rel.disease!r}, {entity_key!r}): "
                    f"{existing.category.value} vs {rel.category.value}"
                )
            continue
        edge_map[pair] = rel

    nodes = [Node(label, "disease") for label in sorted(diseases)]
    nodes.extend(
        Node(display, "entity")
        for _, display in sorted(
            ((key, disp) for key, (_, disp) in entity_display.items())
        )
    )
    edges = tuple(
        Edge(
            source=rel.disease,
            target=entity_display[key][1],
            category=rel.category,
            avg_score=rel.avg_score,
            count=rel.count,
        )
        for (disease, key), rel in sorted(edge_map.items())
    )
    return KnowledgeGraph(tuple(nodes), edges)


def _to_dict(kg: KnowledgeGraph) -> dict:
    return {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "nodes": [{"label": n.label, "kind": n.kind} for n in kg.nodes],
        "edges": [
            {
                "from": e.source,
                "to": e.target,
                "category": e.category.value,
                "avg_score": e.avg_score,
                "count": e.count,
            }
            for e in kg.edges
        ],
    }


def _dot_quote(label: str) -> str:
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export(kg: KnowledgeGraph, format: str = "json") -> bytes:
    """Serialize the graph; output is byte-stable across runs.

    json is the canonical schema (sorted keys); dot is the directed-graph
    text format with category-labeled edges; csv is
    disease,category,entity,avg_score,count rows, sorted.
    """
    if format == "json":
        return (json.dumps(_to_dict(kg), sort_keys=True, indent=2) + "\n").encode("utf-8")
    if format == "dot":
        lines = ["digraph knowledge_graph {"]
        for node in kg.nodes:
            shape = "ellipse" if node.kind == "disease" else "box"
            lines.append(f"  {_dot_quote(node.label)} [kind={node.kind}, shape={shape}];")
        for edge in kg.edges:
            lines.append(
                f"  {_dot_quote(edge.source)} -> {_dot_quote(edge.target)} "
                f'[label={_dot_quote(edge.category.value)}, avg_score="{edge.avg_score:.6f}", '
                f'count="{edge.count}"];'
            )
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["disease", "category", "entity", "avg_score", "count"])
        rows = sorted(
            (e.source, e.category.value, e.target, f"{e.avg_score:.6f}", str(e.count))
            for e in kg.edges
        )
        writer.writerows(rows)
        return buf.getvalue().encode("utf-8")
    raise GraphError(f"unknown export format: {format!r} (expected json, dot, or csv)")


def load_graph(data: bytes | str) -> KnowledgeGraph:
    """Read a graph back from its canonical JSON form."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GraphError(f"invalid graph JSON: {exc}") from exc
    if raw.get("schema_version") != GRAPH_SCHEMA_VERSION:
        raise GraphError(f"unsupported graph schema_version: {raw.get('schema_version')}")
    nodes = tuple(Node(n["label"], n["kind"]) for n in raw["nodes"])
    labels = {n.label for n in nodes}
    edges = []
    seen_pairs = set()
    for e in raw["edges"]:
        if e["from"] not in labels or e["to"] not in labels:
            raise GraphError(f"edge endpoint missing from nodes: {e['from']} -> {e['to']}")
        pair = (e["from"], e["to"])
        if pair in seen_pairs:
            raise GraphError(f"duplicate edge for pair {pair}")
        seen_pairs.add(pair)
        edges.append(
            Edge(
                source=e["from"],
                target=e["to"],
                category=EntityCategory.from_wire(e["category"]),
                avg_score=float(e["avg_score"]),
                count=int(e["count"]),
            )
        )
    return KnowledgeGraph(nodes, tuple(edges))
