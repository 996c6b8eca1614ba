from __future__ import annotations

import pytest

from kgqa import ontology
from kgqa.extraction import ContextSnippet, TripleRecord, ValidationPolicy
from kgqa.graph_store import GraphStore


def make_triple(
    head_name,
    head_type,
    relation,
    tail_name,
    tail_type,
    confidence=0.9,
    source_doc="fixture",
):
    return TripleRecord(
        head_name=head_name,
        head_type=head_type,
        relation=relation,
        tail_name=tail_name,
        tail_type=tail_type,
        context=ContextSnippet(index=0, text="fixture context"),
        confidence=confidence,
        source_doc=source_doc,
    )


# The IPv6 neighborhood used across retrieval/QA/service tests: one APP_CON
# node with exactly 8 incident edges. The two accomplish edges violate the
# relation's declared head type and are ingested under the lenient policy,
# mirroring how such facts survive extraction flagging.
IPV6_NEIGHBORHOOD = [
    ("NAT66", ontology.FUN, "relevant", "IPv6", ontology.APP_CON),
    ("Simplified Configuration", ontology.FUN, "relevant", "IPv6", ontology.APP_CON),
    ("IPv6 Header Compression", ontology.FUN, "relevant", "IPv6", ontology.APP_CON),
    ("Internet Protocol", ontology.FUN, "relevant", "IPv6", ontology.APP_CON),
    ("128-bit address", ontology.VALUE, "relevant", "IPv6", ontology.APP_CON),
    ("IPv6", ontology.APP_CON, "accomplish", "self-configuration capabilities", ontology.FUN),
    ("IPv6", ontology.APP_CON, "accomplish", "large address space", ontology.VALUE),
    ("IPv6", ontology.APP_CON, "influence", "IPv6 packet header", ontology.STR_COM),
]


def build_ipv6_store() -> GraphStore:
    store = GraphStore()
    for head_name, head_type, relation, tail_name, tail_type in IPV6_NEIGHBORHOOD:
        store.upsert_triple(
            make_triple(head_name, head_type, relation, tail_name, tail_type),
            policy=ValidationPolicy.LENIENT_KEEP_FLAGGED,
        )
    return store


@pytest.fixture
def ipv6_store() -> GraphStore:
    return build_ipv6_store()
