from __future__ import annotations

import json

import pytest

from metonym.gateway.mock import MockImageProvider
from metonym.gateway.core import RenderParams
from metonym.store import CorpusStore, Finding, JsonlFile, SchemaError, StoreError, sha256_hex


def render(description: str, seed: int = 1) -> bytes:
    data, _ = MockImageProvider().render(description, RenderParams(seed=seed))
    return data


# -- put_image ---------------------------------------------------------------


def test_put_image_roundtrip_and_dedupe(tmp_path):
    store = CorpusStore(tmp_path)
    data = render("a quiet scene")
    image_id, path = store.put_image(data)
    again_id, again_path = store.put_image(data)
    assert image_id == again_id == sha256_hex(data)
    assert path == again_path
    assert len(list((tmp_path / "images").rglob("*.png"))) == 1
    assert store.get_image(image_id) == data


def test_put_image_rejects_non_image_bytes(tmp_path):
    store = CorpusStore(tmp_path)
    with pytest.raises(StoreError, match="decode"):
        store.put_image(b"definitely not a png")


def test_image_path_sharded_by_prefix(tmp_path):
    store = CorpusStore(tmp_path)
    image_id, path = store.put_image(render("sharded"))
    assert path.parent.name == image_id[:2]


# -- manifests ----------------------------------------------------------------


def test_append_read_roundtrip(tmp_path):
    store = CorpusStore(tmp_path)
    rec = {
        "type": "attempt",
        "concept": "hope",
        "style": "naturalistic",
        "outcome": "ok",
    }
    stamped = store.append(rec)
    assert "ts" in stamped
    [read] = store.read_manifest("attempt")
    assert read == stamped


def test_append_validates_schema(tmp_path):
    store = CorpusStore(tmp_path)
    with pytest.raises(SchemaError, match="unknown record type"):
        store.append({"type": "bogus"})
    with pytest.raises(SchemaError, match="missing fields"):
        store.append({"type": "attempt", "concept": "hope"})


def test_type_filter_returns_matching_subset(tmp_path):
    store = CorpusStore(tmp_path)
    store.append({"type": "attempt", "concept": "a", "style": "naturalistic", "outcome": "ok"})
    data = render("x")
    image_id, path = store.put_image(data)
    store.append(
        {
            "type": "image",
            "id": image_id,
            "concept": "a",
            "style": "naturalistic",
            "path": str(path.relative_to(store.root)),
            "seed": 1,
            "render_params": {},
            "renderer": "mock",
            "description": "x",
            "pipeline": "semiotic",
        }
    )
    assert len(store.read_manifest()) == 2
    assert [r["type"] for r in store.read_manifest("image")] == ["image"]


def test_prefix_of_manifest_is_valid_jsonl(tmp_path):
    store = CorpusStore(tmp_path)
    for i in range(5):
        store.append({"type": "attempt", "concept": f"c{i}", "style": "stylistic", "outcome": "ok"})
    raw = (tmp_path / "manifest.jsonl").read_bytes()
    cut = raw.find(b"\n", raw.find(b"\n") + 1) + 1
    for line in raw[:cut].decode().splitlines():
        json.loads(line)


def test_truncated_trailing_line_quarantined(tmp_path):
    path = tmp_path / "m.jsonl"
    good = json.dumps({"type": "attempt", "n": 1}) + "\n"
    path.write_text(good + '{"type": "attempt", "partial', encoding="utf-8")
    jsonl = JsonlFile(path)
    assert jsonl.read_all() == [{"type": "attempt", "n": 1}]
    quarantined = (tmp_path / "m.jsonl.quarantined").read_text()
    assert "partial" in quarantined


def test_recovery_keeps_earlier_records_intact(tmp_path):
    path = tmp_path / "m.jsonl"
    rows = [{"i": i} for i in range(3)]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows) + "{bad", encoding="utf-8")
    assert JsonlFile(path).read_all() == rows


def test_concurrent_appends_all_land(tmp_path):
    import threading

    jsonl = JsonlFile(tmp_path / "x.jsonl")

    def worker(k):
        for i in range(20):
            jsonl.append({"k": k, "i": i})

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(jsonl.read_all()) == 80


# -- verify --------------------------------------------------------------------


def image_record(store: CorpusStore, description: str, concept: str, leakage_passed=True) -> dict:
    data = render(description)
    image_id, path = store.put_image(data)
    rec = {
        "type": "image",
        "id": image_id,
        "concept": concept,
        "style": "naturalistic",
        "path": str(path.relative_to(store.root)),
        "seed": 1,
        "render_params": {},
        "renderer": "mock",
        "description": description,
        "leakage_passed": leakage_passed,
        "pipeline": "semiotic",
    }
    store.append(rec)
    return rec


def test_verify_clean_store(tmp_path):
    store = CorpusStore(tmp_path)
    image_record(store, "brushes beside a canvas", "artist")
    assert store.verify() == []


def test_verify_detects_bit_flip(tmp_path):
    store = CorpusStore(tmp_path)
    rec = image_record(store, "brushes beside a canvas", "artist")
    path = store.root / rec["path"]
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    kinds = {f.kind for f in store.verify()}
    assert "hash-mismatch" in kinds


def test_verify_detects_dangling_item_reference(tmp_path):
    store = CorpusStore(tmp_path)
    store.items.append(
        {
            "type": "item",
            "item_id": "i1",
            "image_id": "0" * 64,
            "options": ["a", "b", "c", "d"],
            "answer_index": 0,
            "style": "naturalistic",
        }
    )
    findings = store.verify()
    assert [f.kind for f in findings] == ["dangling-ref"]


def test_verify_detects_persisted_leakage(tmp_path):
    store = CorpusStore(tmp_path)
    image_record(store, "a vacation postcard on a desk", "vacation", leakage_passed=True)
    findings = store.verify()
    assert any(f.kind == "leakage" for f in findings)
