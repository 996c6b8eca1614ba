"""Embedded typed property graph with CSV interchange.

Nodes are deduplicated by (label, name) and identified by a label-prefixed
per-type serial such as ``FUN_12``. Edges are unique per (from, to,
relation). The store round-trips through the CSV layout used for graph
interchange: one ``<LABEL>.csv`` file per entity label with header
``ID,name,LABEL`` plus a ``roles.csv`` with header ``from,to,relation``
(optionally extended with confidence and source columns).
"""

from __future__ import annotations

import csv
import io
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .extraction import TripleRecord, ValidationPolicy
from .ontology import DEFAULT_SCHEMA, EntityType, OntologySchema

ENTITY_HEADER = ["ID", "name", "LABEL"]
RELATION_HEADER = ["from", "to", "relation"]
RELATION_HEADER_EXTENDED = ["from", "to", "relation", "confidence", "source_doc"]
RELATIONS_FILE = "roles.csv"
MANIFEST_FILE = "graph_manifest.json"


class GraphStoreError(Exception):
    """Base class for store failures."""


class MalformedCsvError(GraphStoreError):
    pass


class LabelMismatchError(GraphStoreError):
    pass


class DuplicateSerialError(GraphStoreError):
    pass


class DuplicateNameError(GraphStoreError):
    pass


class UnknownNodeIdError(GraphStoreError):
    pass


class UnknownRelationError(GraphStoreError):
    pass


class ValidationRejectedError(GraphStoreError):
    pass


class IntegrityError(GraphStoreError):
    pass


@dataclass(frozen=True)
class NodeRecord:
    node_id: str
    label: EntityType
    name: str
    per_type_serial: int


@dataclass(frozen=True)
class EdgeRecord:
    from_id: str
    to_id: str
    relation: str
    confidence: float | None = None
    source_doc: str | None = None

    def key(self) -> tuple[str, str, str]:
        return (self.from_id, self.to_id, self.relation)


@dataclass(frozen=True)
class IndexDescriptor:
    label: str
    property: str = "name"


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    nodes_by_label: dict[str, int]
    edges_by_relation: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "nodes_by_label": self.nodes_by_label,
            "edges_by_relation": self.edges_by_relation,
        }


class GraphStore:
    """Single-writer multi-reader in-memory property graph.

    Mutations take an internal lock; reads between mutation batches are
    lock-free. Optional materialization flags insert the mirror edge for
    self-inverse relations and the paired edge for forward/inverse pairs;
    both are off by default so the stored edges are exactly the asserted
    ones.
    """

    def __init__(
        self,
        schema: OntologySchema = DEFAULT_SCHEMA,
        materialize_inverse: bool = False,
        materialize_symmetric: bool = False,
    ) -> None:
        self.schema = schema
        self.materialize_inverse = materialize_inverse
        self.materialize_symmetric = materialize_symmetric
        self._lock = threading.RLock()
        self._nodes: dict[str, NodeRecord] = {}
        self._name_index: dict[str, dict[str, str]] = {
            et.identifier: {} for et in schema.entity_types
        }
        self._serials: dict[str, int] = {et.identifier: 0 for et in schema.entity_types}
        self._edges: dict[tuple[str, str, str], EdgeRecord] = {}
        self._out: dict[str, list[tuple[str, str, str]]] = {}
        self._in: dict[str, list[tuple[str, str, str]]] = {}

    # -- node/edge primitives ---------------------------------------------

    def node(self, node_id: str) -> NodeRecord:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeIdError(f"no node with id {node_id!r}") from None

    def nodes(self) -> Iterable[NodeRecord]:
        return self._nodes.values()

    def edges(self) -> Iterable[EdgeRecord]:
        return self._edges.values()

    def find_by_name(self, label: str | EntityType, name: str) -> NodeRecord | None:
        label_id = label.identifier if isinstance(label, EntityType) else label
        node_id = self._name_index.get(label_id, {}).get(name)
        return self._nodes[node_id] if node_id else None

    def get_or_create_node(self, label: str | EntityType, name: str) -> NodeRecord:
        label_et = (
            label if isinstance(label, EntityType) else self.schema.parse_entity_type(label)
        )
        with self._lock:
            existing = self.find_by_name(label_et, name)
            if existing is not None:
                return existing
            serial = self._serials[label_et.identifier] + 1
            node = NodeRecord(
                node_id=f"{label_et.identifier}_{serial}",
                label=label_et,
                name=name,
                per_type_serial=serial,
            )
            self._insert_node(node)
            return node

    def _insert_node(self, node: NodeRecord) -> None:
        label_id = node.label.identifier
        if node.node_id in self._nodes:
            raise DuplicateSerialError(
                f"node id {node.node_id!r} already present"
            )
        if node.name in self._name_index[label_id]:
            raise DuplicateNameError(
                f"({label_id}, {node.name!r}) already present"
            )
        self._nodes[node.node_id] = node
        self._name_index[label_id][node.name] = node.node_id
        self._serials[label_id] = max(self._serials[label_id], node.per_type_serial)

    def add_edge(
        self,
        from_id: str,
        to_id: str,
        relation: str,
        confidence: float | None = None,
        source_doc: str | None = None,
    ) -> EdgeRecord:
        """Insert an edge idempotently; the first insert wins on properties."""
        if from_id not in self._nodes:
            raise UnknownNodeIdError(f"edge references missing node {from_id!r}")
        if to_id not in self._nodes:
            raise UnknownNodeIdError(f"edge references missing node {to_id!r}")
        if not self.schema.has_relation_type(relation):
            raise UnknownRelationError(f"unknown relation type {relation!r}")
        key = (from_id, to_id, relation)
        with self._lock:
            existing = self._edges.get(key)
            if existing is not None:
                return existing
            edge = EdgeRecord(from_id, to_id, relation, confidence, source_doc)
            self._edges[key] = edge
            self._out.setdefault(from_id, []).append(key)
            self._in.setdefault(to_id, []).append(key)
            return edge

    # -- triple ingestion ----------------------------------------------------

    def upsert_triple(
        self,
        triple: TripleRecord,
        policy: ValidationPolicy = ValidationPolicy.STRICT_DROP,
    ) -> tuple[NodeRecord, EdgeRecord, NodeRecord]:
        """Find-or-create both endpoint nodes and insert the edge.

        Under the strict policy an ontology-invalid triple raises
        ``ValidationRejectedError``; the lenient policy stores it anyway.
        """
        verdict = self.schema.validate_triple(
            triple.head_type,
            triple.relation,
            triple.tail_type,
            triple.head_name,
            triple.tail_name,
        )
        if not verdict.valid and policy is ValidationPolicy.STRICT_DROP:
            raise ValidationRejectedError(verdict.message)
        with self._lock:
            head = self.get_or_create_node(triple.head_type, triple.head_name)
            tail = self.get_or_create_node(triple.tail_type, triple.tail_name)
            edge = self.add_edge(
                head.node_id,
                tail.node_id,
                triple.relation,
                confidence=triple.confidence,
                source_doc=triple.source_doc,
            )
            self._materialize(head, tail, triple)
            return head, edge, tail

    def _materialize(
        self, head: NodeRecord, tail: NodeRecord, triple: TripleRecord
    ) -> None:
        relation = self.schema.parse_relation_type(triple.relation)
        if relation.inverse is None:
            return
        mirrored = relation.self_inverse
        wanted = self.materialize_symmetric if mirrored else self.materialize_inverse
        if not wanted:
            return
        self.add_edge(
            tail.node_id,
            head.node_id,
            relation.inverse,
            confidence=triple.confidence,
            source_doc=triple.source_doc,
        )

    def upsert_triples(
        self,
        triples: Iterable[TripleRecord],
        policy: ValidationPolicy = ValidationPolicy.STRICT_DROP,
    ) -> int:
        count = 0
        with self._lock:
            for triple in triples:
                self.upsert_triple(triple, policy)
                count += 1
            self.check_integrity()
        return count

    # -- CSV interchange ---------------------------------------------------

    def import_entities_csv(self, label: str | EntityType, content: bytes | str) -> int:
        """Load one entity file; every row's LABEL must match ``label``."""
        label_et = (
            label if isinstance(label, EntityType) else self.schema.parse_entity_type(label)
        )
        rows = _read_csv(content)
        if not rows or rows[0] != ENTITY_HEADER:
            raise MalformedCsvError(
                f"entity file must start with header {','.join(ENTITY_HEADER)!r}"
            )
        count = 0
        with self._lock:
            for lineno, row in enumerate(rows[1:], start=2):
                if len(row) != 3:
                    raise MalformedCsvError(
                        f"row {lineno}: expected 3 columns, got {len(row)}"
                    )
                serial_text, name, row_label = row
                try:
                    serial = int(serial_text)
                except ValueError:
                    raise MalformedCsvError(
                        f"row {lineno}: ID {serial_text!r} is not an integer"
                    ) from None
                if row_label != label_et.identifier:
                    raise LabelMismatchError(
                        f"row {lineno}: LABEL {row_label!r} in a "
                        f"{label_et.identifier} file"
                    )
                node = NodeRecord(
                    node_id=f"{label_et.identifier}_{serial}",
                    label=label_et,
                    name=name,
                    per_type_serial=serial,
                )
                self._insert_node(node)
                count += 1
        return count

    def import_relations_csv(
        self,
        content: bytes | str,
        id_resolver: Mapping[str, str] | None = None,
    ) -> int:
        """Load the relation file; entity files must be imported first.

        ``id_resolver`` supports files whose from/to columns hold bare
        serial numbers instead of node ids: it maps each bare token to a
        node id and must come from a sidecar produced with the file.
        """
        rows = _read_csv(content)
        if not rows:
            raise MalformedCsvError("relation file is empty")
        if rows[0] == RELATION_HEADER:
            extended = False
        elif rows[0] == RELATION_HEADER_EXTENDED:
            extended = True
        else:
            raise MalformedCsvError(
                "relation file header must be "
                f"{','.join(RELATION_HEADER)!r} or "
                f"{','.join(RELATION_HEADER_EXTENDED)!r}"
            )
        width = 5 if extended else 3
        count = 0
        with self._lock:
            for lineno, row in enumerate(rows[1:], start=2):
                if len(row) != width:
                    raise MalformedCsvError(
                        f"row {lineno}: expected {width} columns, got {len(row)}"
                    )
                from_id = self._resolve_node_id(row[0], id_resolver, lineno)
                to_id = self._resolve_node_id(row[1], id_resolver, lineno)
                relation = row[2]
                confidence: float | None = None
                source_doc: str | None = None
                if extended:
                    confidence = float(row[3]) if row[3] else None
                    source_doc = row[4] or None
                self.add_edge(from_id, to_id, relation, confidence, source_doc)
                count += 1
        return count

    def _resolve_node_id(
        self, token: str, id_resolver: Mapping[str, str] | None, lineno: int
    ) -> str:
        if token in self._nodes:
            return token
        if id_resolver is not None and token in id_resolver:
            resolved = id_resolver[token]
            if resolved in self._nodes:
                return resolved
            raise UnknownNodeIdError(
                f"row {lineno}: sidecar maps {token!r} to missing node {resolved!r}"
            )
        raise UnknownNodeIdError(f"row {lineno}: unknown node id {token!r}")

    def export_csv(self, mode: str = "paper_exact") -> dict[str, bytes]:
        """Render the store as CSV files keyed by file name.

        ``paper_exact`` writes 3-column relation rows; ``extended`` adds
        confidence and source columns. Labels without nodes are skipped,
        except that a fully empty store emits a header-only file per label.
        """
        if mode not in ("paper_exact", "extended"):
            raise ValueError(f"unknown export mode {mode!r}")
        files: dict[str, bytes] = {}
        nodes_by_label: dict[str, list[NodeRecord]] = {}
        for node in self._nodes.values():
            nodes_by_label.setdefault(node.label.identifier, []).append(node)
        labels = sorted(et.identifier for et in self.schema.entity_types)
        for label in labels:
            nodes = sorted(
                nodes_by_label.get(label, ()), key=lambda n: n.per_type_serial
            )
            if not nodes and self._nodes:
                continue
            rows = [[str(n.per_type_serial), n.name, label] for n in nodes]
            files[f"{label}.csv"] = _write_csv([ENTITY_HEADER] + rows)
        header = RELATION_HEADER_EXTENDED if mode == "extended" else RELATION_HEADER
        edge_rows = []
        for edge in sorted(self._edges.values(), key=lambda e: e.key()):
            row = [edge.from_id, edge.to_id, edge.relation]
            if mode == "extended":
                row += [
                    "" if edge.confidence is None else repr(edge.confidence),
                    edge.source_doc or "",
                ]
            edge_rows.append(row)
        files[RELATIONS_FILE] = _write_csv([header] + edge_rows)
        return files

    # -- indexes, stats, traversal ---------------------------------------

    def create_label_indexes(self) -> list[IndexDescriptor]:
        """One name index per label; repeated calls return the same set."""
        return [
            IndexDescriptor(label=label)
            for label in sorted(et.identifier for et in self.schema.entity_types)
        ]

    def stats(self) -> GraphStats:
        nodes_by_label = {et.identifier: 0 for et in self.schema.entity_types}
        for node in self._nodes.values():
            nodes_by_label[node.label.identifier] += 1
        edges_by_relation = {rt.identifier: 0 for rt in self.schema.relation_types}
        for edge in self._edges.values():
            edges_by_relation[edge.relation] += 1
        return GraphStats(
            node_count=len(self._nodes),
            edge_count=len(self._edges),
            nodes_by_label=dict(sorted(nodes_by_label.items())),
            edges_by_relation=dict(sorted(edges_by_relation.items())),
        )

    def neighborhood(
        self, node_id: str, direction: str = "both"
    ) -> list[tuple[EdgeRecord, NodeRecord]]:
        """Incident edges with their opposite endpoints, sorted by
        (relation, neighbor name)."""
        if direction not in ("out", "in", "both"):
            raise ValueError(f"direction must be out/in/both, got {direction!r}")
        self.node(node_id)
        results: dict[tuple[str, str, str], tuple[EdgeRecord, NodeRecord]] = {}
        if direction in ("out", "both"):
            for key in self._out.get(node_id, ()):
                edge = self._edges[key]
                results[key] = (edge, self._nodes[edge.to_id])
        if direction in ("in", "both"):
            for key in self._in.get(node_id, ()):
                if key in results:
                    continue
                edge = self._edges[key]
                results[key] = (edge, self._nodes[edge.from_id])
        return sorted(
            results.values(),
            key=lambda pair: (pair[0].relation, pair[1].name, pair[1].node_id),
        )

    def check_integrity(self) -> None:
        """Verify every edge endpoint resolves to a stored node."""
        for edge in self._edges.values():
            if edge.from_id not in self._nodes or edge.to_id not in self._nodes:
                raise IntegrityError(
                    f"edge {edge.key()} references a missing node"
                )

    # -- persistence -------------------------------------------------------

    def save(self, directory: str | Path, mode: str = "extended") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, blob in self.export_csv(mode=mode).items():
            (directory / name).write_bytes(blob)
        manifest = {"schema": self.schema.to_dict(), "mode": mode}
        (directory / MANIFEST_FILE).write_text(
            json.dumps(manifest, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(
        cls, directory: str | Path, schema: OntologySchema | None = None
    ) -> "GraphStore":
        directory = Path(directory)
        manifest_path = directory / MANIFEST_FILE
        if schema is None:
            if manifest_path.exists():
                manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
                schema = OntologySchema.from_dict(manifest["schema"])
            else:
                schema = DEFAULT_SCHEMA
        store = cls(schema=schema)
        for et in sorted(schema.entity_types, key=lambda e: e.identifier):
            path = directory / f"{et.identifier}.csv"
            if path.exists():
                store.import_entities_csv(et, path.read_bytes())
        relations_path = directory / RELATIONS_FILE
        if relations_path.exists():
            store.import_relations_csv(relations_path.read_bytes())
        store.check_integrity()
        return store


def _read_csv(content: bytes | str) -> list[list[str]]:
    if isinstance(content, bytes):
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedCsvError(f"file is not UTF-8: {exc}") from exc
    reader = csv.reader(io.StringIO(content))
    try:
        return [row for row in reader if row]
    except csv.Error as exc:
        raise MalformedCsvError(str(exc)) from exc


def _write_csv(rows: list[list[str]]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(rows)
    return buffer.getvalue().encode("utf-8")
