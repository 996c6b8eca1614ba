"""Keyword search over the graph and deterministic context rendering.

Matching is case-insensitive on node names. Exact-name hits rank strictly
before substring hits: when any exact match exists the result holds only
exact hits, so a keyword naming a node returns that node's neighborhood
alone even when other node names contain the keyword. Substring hits are
the fallback when exact matching misses. Within a rank nodes sort by
(label, name). The rendered context block lists each hit's incident edges
one per line, ready to embed in an answer prompt.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph_store import EdgeRecord, GraphStore, NodeRecord

MATCH_EXACT = "exact"
MATCH_SUBSTRING = "substring"


class EmptyKeywordError(Exception):
    """Raised when the search keyword is empty after trimming."""


@dataclass(frozen=True)
class SearchLimits:
    max_nodes: int = 10
    max_edges_per_node: int = 50


@dataclass(frozen=True)
class RetrievalHit:
    matched_node: NodeRecord
    edges: tuple[tuple[EdgeRecord, NodeRecord], ...]
    match_kind: str
    edges_truncated: bool = False


@dataclass(frozen=True)
class ContextBlock:
    text: str
    hit_count: int
    truncated: bool


def search_keyword(
    store: GraphStore, keyword: str, limits: SearchLimits = SearchLimits()
) -> list[RetrievalHit]:
    """Case-insensitive name search; exact matches first, then substrings."""
    needle = keyword.strip()
    if not needle:
        raise EmptyKeywordError("keyword is empty")
    folded = needle.lower()
    exact: list[NodeRecord] = []
    partial: list[NodeRecord] = []
    for node in store.nodes():
        name = node.name.lower()
        if name == folded:
            exact.append(node)
        elif folded in name:
            partial.append(node)
    sort_key = lambda n: (n.label.identifier, n.name)  # noqa: E731
    ranked = sorted(exact, key=sort_key) if exact else sorted(partial, key=sort_key)
    hits: list[RetrievalHit] = []
    for node in ranked[: limits.max_nodes]:
        pairs = store.neighborhood(node.node_id, "both")
        truncated = len(pairs) > limits.max_edges_per_node
        hits.append(
            RetrievalHit(
                matched_node=node,
                edges=tuple(pairs[: limits.max_edges_per_node]),
                match_kind=MATCH_EXACT if node in exact else MATCH_SUBSTRING,
                edges_truncated=truncated,
            )
        )
    return hits


def render_edge_line(
    node: NodeRecord, edge: EdgeRecord, neighbor: NodeRecord
) -> str:
    if edge.from_id == node.node_id:
        head, tail = node, neighbor
    else:
        head, tail = neighbor, node
    return (
        f"{head.name} -[{edge.relation}]-> {tail.name} "
        f"({head.label.identifier} -> {tail.label.identifier})"
    )


def format_context(hits: list[RetrievalHit]) -> ContextBlock:
    """Render hits as one header line per node plus one line per edge."""
    lines: list[str] = []
    for hit in hits:
        node = hit.matched_node
        lines.append(f"# {node.name} [{node.label.identifier}]")
        for edge, neighbor in hit.edges:
            lines.append(render_edge_line(node, edge, neighbor))
    return ContextBlock(
        text="\n".join(lines),
        hit_count=len(hits),
        truncated=any(h.edges_truncated for h in hits),
    )
