from __future__ import annotations

import random

import pytest

from kgqa import graph_store as gs
from kgqa import ontology
from kgqa.extraction import ValidationPolicy
from kgqa.ontology import EntityType, OntologySchema, RelationType

from conftest import make_triple


def entity_csv(rows, header="ID,name,LABEL"):
    return (header + "\n" + "\n".join(rows) + "\n").encode("utf-8") if rows else (
        header + "\n"
    ).encode("utf-8")


class TestUpsertTriple:
    def test_fresh_store_assigns_serials(self):
        store = gs.GraphStore()
        head, edge, tail = store.upsert_triple(
            make_triple(
                "IPv6 packet", ontology.STR_COM, "contain", "Hop Limit field", ontology.IDEN
            )
        )
        assert head.node_id == "STR_COM_1"
        assert tail.node_id == "IDEN_1"
        assert edge.key() == ("STR_COM_1", "IDEN_1", "contain")
        assert store.stats().node_count == 2
        assert store.stats().edge_count == 1

    def test_double_insert_is_idempotent(self):
        store = gs.GraphStore()
        triple = make_triple(
            "IPv6 packet", ontology.STR_COM, "contain", "Hop Limit field", ontology.IDEN
        )
        store.upsert_triple(triple)
        before = store.stats()
        store.upsert_triple(triple)
        assert store.stats() == before

    def test_strict_policy_rejects_invalid(self):
        store = gs.GraphStore()
        bad = make_triple("64", ontology.VALUE, "contain", "field", ontology.IDEN)
        with pytest.raises(gs.ValidationRejectedError):
            store.upsert_triple(bad, policy=ValidationPolicy.STRICT_DROP)
        assert store.stats().node_count == 0

    def test_lenient_policy_keeps_invalid(self):
        store = gs.GraphStore()
        bad = make_triple("64", ontology.VALUE, "contain", "field", ontology.IDEN)
        store.upsert_triple(bad, policy=ValidationPolicy.LENIENT_KEEP_FLAGGED)
        assert store.stats().edge_count == 1

    def test_dedup_by_label_and_name(self):
        store = gs.GraphStore()
        for i in range(3):
            store.upsert_triple(
                make_triple("routing", ontology.FUN, "isReliedOn", f"TTL={i}", ontology.VALUE)
            )
        assert store.stats().nodes_by_label["FUN"] == 1
        assert store.stats().nodes_by_label["VALUE"] == 3

    def test_same_name_under_different_labels_not_merged(self):
        store = gs.GraphStore()
        store.get_or_create_node(ontology.FUN, "IPv6")
        store.get_or_create_node(ontology.APP_CON, "IPv6")
        assert store.stats().node_count == 2

    def test_inverse_materialization_off_by_default(self):
        store = gs.GraphStore()
        store.upsert_triple(
            make_triple("frame", ontology.STR_COM, "contain", "flag", ontology.IDEN)
        )
        assert store.stats().edges_by_relation["isContained"] == 0

    def test_inverse_materialization_on(self):
        store = gs.GraphStore(materialize_inverse=True)
        store.upsert_triple(
            make_triple("frame", ontology.STR_COM, "contain", "flag", ontology.IDEN)
        )
        stats = store.stats()
        assert stats.edges_by_relation["contain"] == 1
        assert stats.edges_by_relation["isContained"] == 1

    def test_symmetric_materialization_on(self):
        store = gs.GraphStore(materialize_symmetric=True)
        store.upsert_triple(
            make_triple("NAT66", ontology.FUN, "relevant", "IPv6", ontology.APP_CON),
            policy=ValidationPolicy.LENIENT_KEEP_FLAGGED,
        )
        assert store.stats().edges_by_relation["relevant"] == 2


class TestImportEntities:
    def test_import_two_rows(self):
        store = gs.GraphStore()
        count = store.import_entities_csv(
            "APP_CON", entity_csv(['1,IPv6,APP_CON', '2,NAT66,APP_CON'])
        )
        assert count == 2
        assert store.find_by_name("APP_CON", "IPv6").node_id == "APP_CON_1"

    def test_label_mismatch(self):
        store = gs.GraphStore()
        with pytest.raises(gs.LabelMismatchError):
            store.import_entities_csv("APP_CON", entity_csv(["1,x,FUN"]))

    def test_empty_file_with_header(self):
        store = gs.GraphStore()
        assert store.import_entities_csv("APP_CON", entity_csv([])) == 0

    def test_bad_header(self):
        store = gs.GraphStore()
        with pytest.raises(gs.MalformedCsvError):
            store.import_entities_csv("APP_CON", b"id,label\n1,x\n")

    def test_bad_arity(self):
        store = gs.GraphStore()
        with pytest.raises(gs.MalformedCsvError):
            store.import_entities_csv("APP_CON", b"ID,name,LABEL\n1,x\n")

    def test_duplicate_serial(self):
        store = gs.GraphStore()
        with pytest.raises(gs.DuplicateSerialError):
            store.import_entities_csv(
                "APP_CON", entity_csv(["1,x,APP_CON", "1,y,APP_CON"])
            )

    def test_non_integer_id(self):
        store = gs.GraphStore()
        with pytest.raises(gs.MalformedCsvError):
            store.import_entities_csv("APP_CON", entity_csv(["one,x,APP_CON"]))

    def test_quoted_names_with_commas(self):
        store = gs.GraphStore()
        content = b'ID,name,LABEL\n1,"a, b, c",APP_CON\n'
        assert store.import_entities_csv("APP_CON", content) == 1
        assert store.find_by_name("APP_CON", "a, b, c") is not None


class TestImportRelations:
    def setup_store(self):
        store = gs.GraphStore()
        store.import_entities_csv("APP_CON", entity_csv(["1,IPv6,APP_CON"]))
        store.import_entities_csv(
            "FUN", entity_csv(["1,routing,FUN", "2,x,FUN", "3,NAT66,FUN"])
        )
        return store

    def test_import_edge(self):
        store = self.setup_store()
        count = store.import_relations_csv(
            b"from,to,relation\nFUN_3,APP_CON_1,relevant\n"
        )
        assert count == 1
        assert store.stats().edge_count == 1

    def test_unknown_node(self):
        store = self.setup_store()
        with pytest.raises(gs.UnknownNodeIdError):
            store.import_relations_csv(
                b"from,to,relation\nAPP_CON_999,FUN_1,relevant\n"
            )

    def test_unknown_relation(self):
        store = self.setup_store()
        with pytest.raises(gs.UnknownRelationError):
            store.import_relations_csv(b"from,to,relation\nFUN_1,APP_CON_1,related\n")

    def test_extended_format(self):
        store = self.setup_store()
        count = store.import_relations_csv(
            b"from,to,relation,confidence,source_doc\n"
            b"FUN_3,APP_CON_1,relevant,0.85,doc.txt\n"
            b"FUN_1,APP_CON_1,relevant,,\n"
        )
        assert count == 2
        edges = {e.key(): e for e in store.edges()}
        assert edges[("FUN_3", "APP_CON_1", "relevant")].confidence == 0.85
        assert edges[("FUN_1", "APP_CON_1", "relevant")].confidence is None

    def test_bare_integer_ids_with_sidecar(self):
        store = self.setup_store()
        sidecar = {"1": "FUN_1", "7": "APP_CON_1"}
        count = store.import_relations_csv(
            b"from,to,relation\n1,7,relevant\n", id_resolver=sidecar
        )
        assert count == 1
        assert ("FUN_1", "APP_CON_1", "relevant") in {e.key() for e in store.edges()}

    def test_bare_integer_ids_without_sidecar_fail(self):
        store = self.setup_store()
        with pytest.raises(gs.UnknownNodeIdError):
            store.import_relations_csv(b"from,to,relation\n1,7,relevant\n")


class TestExport:
    def test_upsert_example_layout(self):
        store = gs.GraphStore()
        store.upsert_triple(
            make_triple(
                "IPv6 packet", ontology.STR_COM, "contain", "Hop Limit field", ontology.IDEN
            )
        )
        files = store.export_csv()
        assert "APP_CON.csv" not in files
        assert files["STR_COM.csv"].decode().splitlines() == [
            "ID,name,LABEL",
            "1,IPv6 packet,STR_COM",
        ]
        assert files["IDEN.csv"].decode().splitlines() == [
            "ID,name,LABEL",
            "1,Hop Limit field,IDEN",
        ]
        assert files["roles.csv"].decode().splitlines() == [
            "from,to,relation",
            "STR_COM_1,IDEN_1,contain",
        ]

    def test_empty_store_emits_all_headers(self):
        files = gs.GraphStore().export_csv()
        assert len(files) == 7  # six entity files + roles.csv
        for name, blob in files.items():
            lines = blob.decode().splitlines()
            assert len(lines) == 1

    def test_lf_line_endings(self):
        store = gs.GraphStore()
        store.upsert_triple(
            make_triple("a", ontology.STR_COM, "contain", "b", ontology.IDEN)
        )
        for blob in store.export_csv().values():
            assert b"\r" not in blob


def random_store(seed: int, n_nodes: int, n_edges: int) -> gs.GraphStore:
    rng = random.Random(seed)
    store = gs.GraphStore()
    combos = sorted(
        (h.identifier, r, t.identifier)
        for h, r, t in ontology.DEFAULT_SCHEMA.enumerate_valid_combinations()
    )
    nodes = []
    for i in range(n_nodes):
        label = rng.choice(ontology.DEFAULT_ENTITY_TYPES)
        name = f"entity {label.identifier.lower()} {i} {rng.randrange(10**6)}"
        nodes.append(store.get_or_create_node(label, name))
    by_label = {}
    for node in nodes:
        by_label.setdefault(node.label.identifier, []).append(node)
    made = 0
    attempts = 0
    while made < n_edges and attempts < n_edges * 20:
        attempts += 1
        h_label, relation, t_label = rng.choice(combos)
        heads, tails = by_label.get(h_label), by_label.get(t_label)
        if not heads or not tails:
            continue
        head, tail = rng.choice(heads), rng.choice(tails)
        if head.node_id == tail.node_id:
            continue
        confidence = round(rng.uniform(0.5, 1.0), 4) if rng.random() < 0.5 else None
        store.add_edge(head.node_id, tail.node_id, relation, confidence, "rand")
        made += 1
    store.check_integrity()
    return store


def assert_same_store(a: gs.GraphStore, b: gs.GraphStore):
    assert a.stats() == b.stats()
    nodes_a = {(n.node_id, n.label.identifier, n.name) for n in a.nodes()}
    nodes_b = {(n.node_id, n.label.identifier, n.name) for n in b.nodes()}
    assert nodes_a == nodes_b
    assert {e.key() for e in a.edges()} == {e.key() for e in b.edges()}


class TestRoundTrip:
    @pytest.mark.parametrize("mode", ["paper_exact", "extended"])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_import_export_round_trip(self, mode, seed):
        store = random_store(seed, n_nodes=120, n_edges=200)
        files = store.export_csv(mode=mode)
        rebuilt = gs.GraphStore()
        for label in sorted(e.identifier for e in ontology.DEFAULT_ENTITY_TYPES):
            if f"{label}.csv" in files:
                rebuilt.import_entities_csv(label, files[f"{label}.csv"])
        rebuilt.import_relations_csv(files["roles.csv"])
        rebuilt.check_integrity()
        assert_same_store(store, rebuilt)
        assert rebuilt.export_csv(mode=mode) == files

    def test_extended_mode_preserves_edge_properties(self):
        store = gs.GraphStore()
        store.upsert_triple(
            make_triple(
                "a", ontology.STR_COM, "contain", "b", ontology.IDEN, confidence=0.83
            )
        )
        files = store.export_csv(mode="extended")
        rebuilt = gs.GraphStore()
        rebuilt.import_entities_csv("STR_COM", files["STR_COM.csv"])
        rebuilt.import_entities_csv("IDEN", files["IDEN.csv"])
        rebuilt.import_relations_csv(files["roles.csv"])
        edge = next(iter(rebuilt.edges()))
        assert edge.confidence == 0.83
        assert edge.source_doc == "fixture"

    def test_serial_contiguity_after_fresh_import(self):
        store = random_store(7, n_nodes=50, n_edges=40)
        files = store.export_csv()
        rebuilt = gs.GraphStore()
        for label in sorted(e.identifier for e in ontology.DEFAULT_ENTITY_TYPES):
            if f"{label}.csv" in files:
                rebuilt.import_entities_csv(label, files[f"{label}.csv"])
        by_label = {}
        for node in rebuilt.nodes():
            by_label.setdefault(node.label.identifier, []).append(node.per_type_serial)
        for serials in by_label.values():
            assert sorted(serials) == list(range(1, len(serials) + 1))

    def test_save_load(self, tmp_path):
        store = random_store(3, n_nodes=40, n_edges=60)
        store.save(tmp_path)
        loaded = gs.GraphStore.load(tmp_path)
        assert_same_store(store, loaded)


class TestIndexes:
    def test_six_descriptors_for_default_schema(self):
        descriptors = gs.GraphStore().create_label_indexes()
        assert len(descriptors) == 6
        assert all(d.property == "name" for d in descriptors)

    def test_idempotent(self):
        store = gs.GraphStore()
        assert store.create_label_indexes() == store.create_label_indexes()

    def test_custom_schema_descriptor_count(self):
        schema = OntologySchema(
            [EntityType("A"), EntityType("B")],
            [RelationType("r", frozenset({"A"}), frozenset({"B"}))],
        )
        assert len(gs.GraphStore(schema=schema).create_label_indexes()) == 2


class TestStatsAndNeighborhood:
    def test_empty_store_zeros(self):
        stats = gs.GraphStore().stats()
        assert stats.node_count == 0
        assert stats.edge_count == 0
        assert all(v == 0 for v in stats.nodes_by_label.values())

    def test_fixture_counts(self):
        store = gs.GraphStore()
        store.upsert_triple(
            make_triple("a", ontology.STR_COM, "contain", "b", ontology.IDEN)
        )
        store.upsert_triple(
            make_triple("a", ontology.STR_COM, "contain", "c", ontology.VALUE)
        )
        stats = store.stats()
        assert stats.node_count == 3
        assert stats.edge_count == 2
        assert sum(stats.nodes_by_label.values()) == stats.node_count
        assert sum(stats.edges_by_relation.values()) == stats.edge_count

    def test_neighborhood_directions(self):
        store = gs.GraphStore()
        store.upsert_triple(
            make_triple("A", ontology.STR_COM, "contain", "B", ontology.IDEN)
        )
        store.upsert_triple(
            make_triple("A", ontology.STR_COM, "contain", "C", ontology.VALUE)
        )
        a = store.find_by_name("STR_COM", "A")
        assert len(store.neighborhood(a.node_id, "out")) == 2
        assert len(store.neighborhood(a.node_id, "both")) == 2
        assert store.neighborhood(a.node_id, "in") == []
        b = store.find_by_name("IDEN", "B")
        assert len(store.neighborhood(b.node_id, "in")) == 1

    def test_isolated_node(self):
        store = gs.GraphStore()
        node = store.get_or_create_node(ontology.FUN, "alone")
        assert store.neighborhood(node.node_id) == []

    def test_unknown_node(self):
        with pytest.raises(gs.UnknownNodeIdError):
            gs.GraphStore().neighborhood("FUN_1")

    def test_neighborhood_sorted(self, ipv6_store):
        node = ipv6_store.find_by_name("APP_CON", "IPv6")
        pairs = ipv6_store.neighborhood(node.node_id, "both")
        assert len(pairs) == 8
        keys = [(e.relation, n.name) for e, n in pairs]
        assert keys == sorted(keys)
