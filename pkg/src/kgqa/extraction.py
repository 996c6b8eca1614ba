"""Three-stage knowledge extraction: head entities, relations, tail entities.

Stage one asks the model for typed head entities per context snippet. Stage
two groups heads by context index and asks for candidate relations with raw
tail names. Stage three refines tails per context group, gates on the
confidence threshold and the head/tail name rule, validates against the
ontology and assembles the document's triple list.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import prompt_assets
from .llm_gateway import (
    GatewayError,
    LlmGateway,
    ParseError,
    SchemaError,
    clamp_confidence,
    extract_structured,
)
from .ontology import DEFAULT_SCHEMA, EntityType, OntologySchema

logger = logging.getLogger(__name__)

_PARAGRAPH_SEPARATOR = re.compile(r"(\n\s*\n)")

HEAD_REPLY_CONTRACT = {"name": str, "type": str, "context": str, "confidence": float}
RELATION_REPLY_CONTRACT = {
    "head": str,
    "relation": str,
    "tail": str,
    "confidence": float,
}
TAIL_REPLY_CONTRACT = {
    "head": str,
    "relation": str,
    "tail": str,
    "tail_type": str,
    "confidence": float,
}


class EmptyDocumentError(Exception):
    """Raised when a document has no extractable text."""


class ValidationPolicy(Enum):
    STRICT_DROP = "strict_drop"
    LENIENT_KEEP_FLAGGED = "lenient_keep_flagged"


@dataclass(frozen=True)
class Document:
    id: str
    text: str

    @classmethod
    def from_file(cls, path: str | Path) -> "Document":
        path = Path(path)
        return cls(id=path.name, text=path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ContextSnippet:
    index: int
    text: str

    def to_dict(self) -> dict:
        return {"index": self.index, "text": self.text}


@dataclass(frozen=True)
class HeadEntityRecord:
    name: str
    entity_type: EntityType
    context: ContextSnippet
    confidence: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "entity_type": self.entity_type.identifier,
            "context": self.context.to_dict(),
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class RelationCandidate:
    head: HeadEntityRecord
    relation: str
    tail_name_raw: str
    context: ContextSnippet
    confidence: float

    def __post_init__(self) -> None:
        if self.context.index != self.head.context.index:
            raise ValueError("candidate context must match the head's context")

    def to_dict(self) -> dict:
        return {
            "head": self.head.to_dict(),
            "relation": self.relation,
            "tail_name_raw": self.tail_name_raw,
            "context": self.context.to_dict(),
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class TripleRecord:
    head_name: str
    head_type: EntityType
    relation: str
    tail_name: str
    tail_type: EntityType
    context: ContextSnippet
    confidence: float
    source_doc: str
    violation: str | None = None

    def to_dict(self) -> dict:
        return {
            "head_name": self.head_name,
            "head_type": self.head_type.identifier,
            "relation": self.relation,
            "tail_name": self.tail_name,
            "tail_type": self.tail_type.identifier,
            "context": self.context.to_dict(),
            "confidence": self.confidence,
            "source_doc": self.source_doc,
            "violation": self.violation,
        }


@dataclass(frozen=True)
class ExtractionConfig:
    theta: float = 0.8
    snippet_window: int = 600
    validation_policy: ValidationPolicy = ValidationPolicy.STRICT_DROP
    allowed_tail_types: frozenset[str] | None = None
    model: str = "default"
    temperature: float = 0.0
    schema: OntologySchema = DEFAULT_SCHEMA

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must be in [0, 1]")
        if self.snippet_window <= 0:
            raise ValueError("snippet_window must be positive")

    def tail_types(self) -> frozenset[str]:
        if self.allowed_tail_types is not None:
            return self.allowed_tail_types
        return frozenset(et.identifier for et in self.schema.entity_types)


@dataclass
class RunManifest:
    """Per-document accounting of the run: counts, drops and notes."""

    document_id: str
    theta: float
    snippet_window: int
    validation_policy: str
    prompt_versions: dict = field(
        default_factory=lambda: {
            "heads": prompt_assets.HEAD_ENTITIES,
            "relations": prompt_assets.RELATIONS,
            "tails": prompt_assets.TAIL_ENTITIES,
        }
    )
    counts: dict = field(
        default_factory=lambda: {
            "snippets": 0,
            "heads": 0,
            "candidates": 0,
            "triples": 0,
        }
    )
    gateway_calls: dict = field(
        default_factory=lambda: {"heads": 0, "relations": 0, "tails": 0}
    )
    drops: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def drop(self, reason: str, detail: str | None = None) -> None:
        self.drops[reason] = self.drops.get(reason, 0) + 1
        if detail:
            logger.info("dropped (%s): %s", reason, detail)

    def note(self, message: str) -> None:
        self.notes.append(message)

    def to_dict(self) -> dict:
        return {
            "document_id": self.document_id,
            "theta": self.theta,
            "snippet_window": self.snippet_window,
            "validation_policy": self.validation_policy,
            "prompt_versions": self.prompt_versions,
            "counts": self.counts,
            "gateway_calls": self.gateway_calls,
            "drops": dict(sorted(self.drops.items())),
            "notes": self.notes,
        }


@dataclass
class ExtractionResult:
    heads: list[HeadEntityRecord]
    candidates: list[RelationCandidate]
    triples: list[TripleRecord]
    manifest: RunManifest


# -- stage 0: context segmentation ------------------------------------------


def segment_contexts(doc: Document, window: int) -> list[ContextSnippet]:
    """Split a document into indexed snippets of at most ``window`` chars.

    Paragraph boundaries (blank lines) are preferred split points; a
    paragraph longer than the window is cut into window-sized verbatim
    pieces. Joining the snippet texts reproduces the document text with the
    blank-line separators removed.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    parts = _PARAGRAPH_SEPARATOR.split(doc.text)
    snippets: list[ContextSnippet] = []
    for pos, part in enumerate(parts):
        if pos % 2 == 1:  # separator
            continue
        if not part or part.isspace():
            continue
        for start in range(0, len(part), window):
            snippets.append(
                ContextSnippet(index=len(snippets), text=part[start : start + window])
            )
    if not snippets:
        raise EmptyDocumentError(f"document {doc.id!r} has no extractable text")
    return snippets


# -- stage 1: head entities --------------------------------------------------


def _entity_type_listing(schema: OntologySchema) -> str:
    return "\n".join(
        f"- {et.identifier}: {et.description}" for et in schema.entity_types
    )


def _relation_listing(schema: OntologySchema) -> str:
    lines = []
    for rel in schema.relation_types:
        lines.append(
            f"- {rel.identifier} (head types: {'/'.join(sorted(rel.domain))}; "
            f"tail types: {'/'.join(sorted(rel.range))})"
        )
    return "\n".join(lines)


def extract_head_entities(
    doc: Document,
    cfg: ExtractionConfig,
    gateway: LlmGateway,
    manifest: RunManifest | None = None,
) -> list[HeadEntityRecord]:
    """Stage one: one gateway call per snippet, typed head entities out."""
    manifest = manifest if manifest is not None else new_manifest(doc, cfg)
    snippets = segment_contexts(doc, cfg.snippet_window)
    manifest.counts["snippets"] = len(snippets)
    type_listing = _entity_type_listing(cfg.schema)
    heads: list[HeadEntityRecord] = []
    for snippet in snippets:
        prompt = prompt_assets.render(
            prompt_assets.HEAD_ENTITIES,
            entity_types=type_listing,
            context=snippet.text,
        )
        manifest.gateway_calls["heads"] += 1
        try:
            items = extract_structured(
                gateway,
                prompt,
                HEAD_REPLY_CONTRACT,
                model=cfg.model,
                temperature=cfg.temperature,
            )
        except (ParseError, SchemaError, GatewayError) as exc:
            manifest.drop("head_snippet_failure", f"snippet {snippet.index}: {exc}")
            continue
        if isinstance(items, dict):
            items = [items]
        for item in items:
            name = item["name"].strip()
            if not name:
                manifest.drop("head_empty_name")
                continue
            type_label = item["type"].strip()
            if not cfg.schema.has_entity_type(type_label):
                manifest.drop(
                    "head_unknown_entity_type",
                    f"{name!r} typed {type_label!r} in snippet {snippet.index}",
                )
                continue
            confidence, clamped = clamp_confidence(item["confidence"])
            if clamped:
                manifest.note(
                    f"head {name!r}: confidence {item['confidence']} clamped to "
                    f"{confidence}"
                )
            heads.append(
                HeadEntityRecord(
                    name=name,
                    entity_type=cfg.schema.parse_entity_type(type_label),
                    context=snippet,
                    confidence=confidence,
                )
            )
    manifest.counts["heads"] = len(heads)
    return heads


# -- stage 2: relations --------------------------------------------------


def _group_by_context(records, key=lambda r: r.context.index):
    groups: dict[int, list] = {}
    for record in records:
        groups.setdefault(key(record), []).append(record)
    return dict(sorted(groups.items()))


def extract_relations(
    heads: list[HeadEntityRecord],
    cfg: ExtractionConfig,
    gateway: LlmGateway,
    manifest: RunManifest | None = None,
) -> list[RelationCandidate]:
    """Stage two: one gateway call per context index with that context's
    head group; candidate relations with raw tail names out."""
    manifest = manifest if manifest is not None else RunManifest(
        "", cfg.theta, cfg.snippet_window, cfg.validation_policy.value
    )
    relation_listing = _relation_listing(cfg.schema)
    candidates: list[RelationCandidate] = []
    for _, group in _group_by_context(heads).items():
        context = group[0].context
        by_name = {h.name: h for h in group}
        head_listing = "\n".join(
            f"- {h.name} (type {h.entity_type.identifier})" for h in group
        )
        prompt = prompt_assets.render(
            prompt_assets.RELATIONS,
            heads=head_listing,
            relation_types=relation_listing,
            context=context.text,
        )
        manifest.gateway_calls["relations"] += 1
        try:
            items = extract_structured(
                gateway,
                prompt,
                RELATION_REPLY_CONTRACT,
                model=cfg.model,
                temperature=cfg.temperature,
            )
        except (ParseError, SchemaError, GatewayError) as exc:
            manifest.drop(
                "relation_group_failure", f"context {context.index}: {exc}"
            )
            continue
        if isinstance(items, dict):
            items = [items]
        for item in items:
            head = by_name.get(item["head"].strip())
            if head is None:
                manifest.drop(
                    "relation_unknown_head",
                    f"{item['head']!r} in context {context.index}",
                )
                continue
            relation = item["relation"].strip()
            if not cfg.schema.has_relation_type(relation):
                manifest.drop(
                    "relation_unknown_type",
                    f"{relation!r} in context {context.index}",
                )
                continue
            tail_raw = item["tail"].strip()
            if not tail_raw:
                manifest.drop("relation_empty_tail")
                continue
            confidence, clamped = clamp_confidence(item["confidence"])
            if clamped:
                manifest.note(
                    f"candidate {head.name!r}-{relation}: confidence "
                    f"{item['confidence']} clamped to {confidence}"
                )
            candidates.append(
                RelationCandidate(
                    head=head,
                    relation=relation,
                    tail_name_raw=tail_raw,
                    context=context,
                    confidence=confidence,
                )
            )
    manifest.counts["candidates"] = len(candidates)
    return candidates


# -- stage 3: tail entities ----------------------------------------------


def extract_tail_entities(
    cands: list[RelationCandidate],
    cfg: ExtractionConfig,
    gateway: LlmGateway,
    manifest: RunManifest | None = None,
) -> list[TripleRecord]:
    """Stage three: refine tails per context group, gate and validate."""
    manifest = manifest if manifest is not None else RunManifest(
        "", cfg.theta, cfg.snippet_window, cfg.validation_policy.value
    )
    allowed = cfg.tail_types()
    type_listing = _entity_type_listing(cfg.schema)
    triples: list[TripleRecord] = []
    for _, group in _group_by_context(cands).items():
        context = group[0].context
        candidate_listing = "\n".join(
            f"- head {c.head.name!r} --{c.relation}--> tail {c.tail_name_raw!r}"
            for c in group
        )
        prompt = prompt_assets.render(
            prompt_assets.TAIL_ENTITIES,
            candidates=candidate_listing,
            entity_types=type_listing,
            context=context.text,
        )
        manifest.gateway_calls["tails"] += 1
        try:
            items = extract_structured(
                gateway,
                prompt,
                TAIL_REPLY_CONTRACT,
                model=cfg.model,
                temperature=cfg.temperature,
            )
        except (ParseError, SchemaError, GatewayError) as exc:
            manifest.drop("tail_group_failure", f"context {context.index}: {exc}")
            continue
        if isinstance(items, dict):
            items = [items]
        unconsumed = list(group)
        for item in items:
            match = _take_matching_candidate(unconsumed, item)
            if match is None:
                manifest.drop(
                    "tail_unmatched_reply",
                    f"({item['head']!r}, {item['relation']!r}) in context "
                    f"{context.index}",
                )
                continue
            triple = _gate_triple(match, item, cfg, allowed, manifest)
            if triple is not None:
                triples.append(triple)
        for leftover in unconsumed:
            manifest.drop(
                "tail_unconfirmed",
                f"{leftover.head.name!r}-{leftover.relation} in context "
                f"{context.index}",
            )
    triples.sort(
        key=lambda t: (t.context.index, t.head_name, t.relation, t.tail_name)
    )
    manifest.counts["triples"] = len(triples)
    return triples


def _take_matching_candidate(
    unconsumed: list[RelationCandidate], item: dict
) -> RelationCandidate | None:
    head = item["head"].strip()
    relation = item["relation"].strip()
    for i, cand in enumerate(unconsumed):
        if cand.head.name == head and cand.relation == relation:
            return unconsumed.pop(i)
    return None


def _gate_triple(
    cand: RelationCandidate,
    item: dict,
    cfg: ExtractionConfig,
    allowed: frozenset[str],
    manifest: RunManifest,
) -> TripleRecord | None:
    tail_name = item["tail"].strip()
    if not tail_name:
        manifest.drop("tail_empty_name")
        return None
    if tail_name == cand.head.name:
        manifest.drop(
            "tail_equals_head", f"{tail_name!r} in context {cand.context.index}"
        )
        return None
    tail_type_label = item["tail_type"].strip()
    if not cfg.schema.has_entity_type(tail_type_label):
        manifest.drop("tail_unknown_entity_type", f"{tail_type_label!r}")
        return None
    if tail_type_label not in allowed:
        manifest.drop("tail_type_not_allowed", f"{tail_type_label!r}")
        return None
    reply_confidence, clamped = clamp_confidence(item["confidence"])
    if clamped:
        manifest.note(
            f"tail {tail_name!r}: confidence {item['confidence']} clamped to "
            f"{reply_confidence}"
        )
    confidence = min(cand.head.confidence, cand.confidence, reply_confidence)
    if not confidence > cfg.theta:
        manifest.drop(
            "below_threshold",
            f"{cand.head.name!r}-{cand.relation}->{tail_name!r} at {confidence}",
        )
        return None
    tail_type = cfg.schema.parse_entity_type(tail_type_label)
    verdict = cfg.schema.validate_triple(
        cand.head.entity_type, cand.relation, tail_type, cand.head.name, tail_name
    )
    violation = None
    if not verdict.valid:
        if cfg.validation_policy is ValidationPolicy.STRICT_DROP:
            manifest.drop("ontology_invalid", verdict.message)
            return None
        violation = verdict.violation.value
        manifest.note(
            f"kept flagged triple {cand.head.name!r}-{cand.relation}->"
            f"{tail_name!r}: {verdict.message}"
        )
    return TripleRecord(
        head_name=cand.head.name,
        head_type=cand.head.entity_type,
        relation=cand.relation,
        tail_name=tail_name,
        tail_type=tail_type,
        context=cand.context,
        confidence=confidence,
        source_doc=manifest.document_id,
        violation=violation,
    )


# -- pipeline ---------------------------------------------------------------


def new_manifest(doc: Document, cfg: ExtractionConfig) -> RunManifest:
    return RunManifest(
        document_id=doc.id,
        theta=cfg.theta,
        snippet_window=cfg.snippet_window,
        validation_policy=cfg.validation_policy.value,
    )


def run_pipeline(
    doc: Document, cfg: ExtractionConfig, gateway: LlmGateway
) -> ExtractionResult:
    """Run all three stages in order and return records plus the manifest."""
    manifest = new_manifest(doc, cfg)
    heads = extract_head_entities(doc, cfg, gateway, manifest)
    candidates = extract_relations(heads, cfg, gateway, manifest)
    triples = extract_tail_entities(candidates, cfg, gateway, manifest)
    return ExtractionResult(
        heads=heads, candidates=candidates, triples=triples, manifest=manifest
    )


# -- serialization ------------------------------------------------------


def _dumps(payload) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def heads_to_json(heads: list[HeadEntityRecord]) -> str:
    return _dumps([h.to_dict() for h in heads])


def candidates_to_json(cands: list[RelationCandidate]) -> str:
    return _dumps([c.to_dict() for c in cands])


def triples_to_json(triples: list[TripleRecord]) -> str:
    return _dumps([t.to_dict() for t in triples])


def write_stage_files(
    result: ExtractionResult, out_dir: str | Path, stem: str
) -> dict[str, Path]:
    """Write heads/relations/triples/manifest files for one document."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "heads": out_dir / f"{stem}.heads.json",
        "relations": out_dir / f"{stem}.relations.json",
        "triples": out_dir / f"{stem}.triples.json",
        "manifest": out_dir / f"{stem}.manifest.json",
    }
    files["heads"].write_text(heads_to_json(result.heads), encoding="utf-8")
    files["relations"].write_text(
        candidates_to_json(result.candidates), encoding="utf-8"
    )
    files["triples"].write_text(triples_to_json(result.triples), encoding="utf-8")
    files["manifest"].write_text(
        _dumps(result.manifest.to_dict()), encoding="utf-8"
    )
    return files


def triples_from_json(
    text: str, schema: OntologySchema = DEFAULT_SCHEMA
) -> list[TripleRecord]:
    records = []
    for row in json.loads(text):
        records.append(
            TripleRecord(
                head_name=row["head_name"],
                head_type=schema.parse_entity_type(row["head_type"]),
                relation=row["relation"],
                tail_name=row["tail_name"],
                tail_type=schema.parse_entity_type(row["tail_type"]),
                context=ContextSnippet(**row["context"]),
                confidence=row["confidence"],
                source_doc=row["source_doc"],
                violation=row.get("violation"),
            )
        )
    return records
