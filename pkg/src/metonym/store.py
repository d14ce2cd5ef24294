"""Corpus store: durable, resumable persistence for the whole run.

Directory layout::

    <root>/
      catalog.jsonl          # filtered concepts
      manifest.jsonl         # pipeline attempts + image records
      images/<first2>/<sha256>.png
      annotations.jsonl      # human labels (owned by the annotation service)
      items.jsonl            # assembled MCQ items
      distractors.jsonl      # distractor candidates per image
      results/<model>.jsonl  # per-model evaluation responses

Manifests are append-only line-delimited JSON. A partial trailing line
left by a crash is quarantined (moved to ``<name>.quarantined``) the
next time the file is opened. Appends are serialized through a lock
file; image writes are write-temp-then-rename and content-addressed by
SHA-256, so duplicate bytes deduplicate to one file.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator

from PIL import Image

from .leakage import leakage_check

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

#: Required fields per manifest record type. Every record additionally
#: carries "type" and "ts" (stamped on append).
RECORD_SCHEMAS: dict[str, frozenset[str]] = {
    "attempt": frozenset({"concept", "style", "outcome"}),
    "image": frozenset(
        {"id", "concept", "style", "path", "seed", "render_params", "renderer", "description", "pipeline"}
    ),
    "item": frozenset({"item_id", "image_id", "options", "answer_index", "style"}),
    "result": frozenset({"item_id", "model", "raw_response"}),
    "annotation": frozenset({"image_id", "annotator", "label", "flags"}),
    "prediction": frozenset({"image_id", "model", "word", "cosine_to_gold"}),
}


class StoreError(Exception):
    pass


class SchemaError(StoreError):
    pass


class LockTimeoutError(StoreError):
    pass


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _FileLock:
    """Exclusive lock via atomic O_EXCL creation of ``<path>.lock``."""

    def __init__(self, path: Path, timeout_s: float = 10.0):
        self.lock_path = Path(str(path) + ".lock")
        self.timeout_s = timeout_s

    def __enter__(self) -> "_FileLock":
        deadline = time.monotonic() + self.timeout_s
        while True:
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                return self
            except FileExistsError:
                if time.monotonic() >= deadline:
                    raise LockTimeoutError(f"lock held: {self.lock_path}")
                time.sleep(0.02)

    def __exit__(self, *exc) -> None:
        try:
            self.lock_path.unlink()
        except FileNotFoundError:
            pass


class JsonlFile:
    """Append-only line-delimited JSON with crash recovery.

    Any prefix of the file is valid JSONL. Appends are durable on
    return (flush + fsync) and serialized across threads and processes.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._mutex = threading.Lock()
        self._recover()

    def _recover(self) -> None:
        if not self.path.exists() or self.path.stat().st_size == 0:
            return
        data = self.path.read_bytes()
        keep = data
        tail = b""
        if not data.endswith(b"\n"):
            cut = data.rfind(b"\n") + 1
            keep, tail = data[:cut], data[cut:]
        else:
            last_start = data.rfind(b"\n", 0, len(data) - 1) + 1
            last = data[last_start : len(data) - 1]
            try:
                json.loads(last)
            except json.JSONDecodeError:
                keep, tail = data[:last_start], data[last_start:]
        if tail:
            qpath = Path(str(self.path) + ".quarantined")
            with open(qpath, "ab") as qf:
                qf.write(tail.rstrip(b"\n") + b"\n")
            tmp = Path(str(self.path) + ".tmp")
            tmp.write_bytes(keep)
            os.replace(tmp, self.path)
            log.warning("quarantined partial trailing line of %s to %s", self.path, qpath)

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n"
        with self._mutex, _FileLock(self.path):
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def read_all(self) -> list[dict]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[dict]:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)


@dataclass(frozen=True)
class Finding:
    kind: str  # hash-mismatch | missing-file | dangling-ref | leakage | schema
    ref: str
    message: str


class CorpusStore:
    """Filesystem layout plus typed manifest access for one corpus."""

    def __init__(self, root: str | Path, clock: Callable[[], str] | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "images").mkdir(exist_ok=True)
        (self.root / "results").mkdir(exist_ok=True)
        self.clock = clock or utc_now_iso
        self.manifest = JsonlFile(self.root / "manifest.jsonl")
        self.items = JsonlFile(self.root / "items.jsonl")
        self.distractors = JsonlFile(self.root / "distractors.jsonl")
        self.annotations = JsonlFile(self.root / "annotations.jsonl")

    # -- paths -------------------------------------------------------------

    @property
    def catalog_path(self) -> Path:
        return self.root / "catalog.jsonl"

    def image_path(self, image_id: str) -> Path:
        return self.root / "images" / image_id[:2] / f"{image_id}.png"

    def results_file(self, model: str) -> JsonlFile:
        safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in model)
        return JsonlFile(self.root / "results" / f"{safe}.jsonl")

    # -- images ------------------------------------------------------------

    def put_image(self, data: bytes) -> tuple[str, Path]:
        """Store PNG-encoded bytes content-addressed; return (id, path)."""
        try:
            with Image.open(io.BytesIO(data)) as img:
                img.verify()
        except Exception as exc:
            raise StoreError(f"bytes do not decode as an image: {exc}") from exc
        image_id = sha256_hex(data)
        path = self.image_path(image_id)
        if path.exists():
            if path.read_bytes() != data:
                raise StoreError(f"hash collision at {path}")  # practically unreachable
            return image_id, path
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp-{os.getpid()}-{threading.get_ident()}")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        return image_id, path

    def get_image(self, image_id: str) -> bytes:
        path = self.image_path(image_id)
        if not path.exists():
            raise StoreError(f"unknown image id: {image_id}")
        return path.read_bytes()

    # -- manifest ----------------------------------------------------------

    def append(self, record: dict, jsonl: JsonlFile | None = None) -> dict:
        rtype = record.get("type")
        if rtype not in RECORD_SCHEMAS:
            raise SchemaError(f"unknown record type: {rtype!r}")
        missing = RECORD_SCHEMAS[rtype] - record.keys()
        if missing:
            raise SchemaError(f"{rtype} record missing fields: {sorted(missing)}")
        stamped = dict(record)
        stamped.setdefault("ts", self.clock())
        (jsonl or self.manifest).append(stamped)
        return stamped

    def read_manifest(self, rtype: str | None = None) -> list[dict]:
        records = self.manifest.read_all()
        if rtype is None:
            return records
        return [r for r in records if r.get("type") == rtype]

    def image_records(self) -> list[dict]:
        return self.read_manifest("image")

    # -- integrity ---------------------------------------------------------

    def verify(self) -> list[Finding]:
        """Check hash, referential, and leakage integrity of the store."""
        findings: list[Finding] = []
        for path in sorted((self.root / "images").rglob("*.png")):
            digest = sha256_hex(path.read_bytes())
            if digest != path.stem:
                findings.append(
                    Finding("hash-mismatch", str(path), f"content hash {digest[:12]}... differs from name")
                )

        image_ids = set()
        for rec in self.image_records():
            image_ids.add(rec["id"])
            path = self.root / rec["path"]
            if not path.exists():
                findings.append(Finding("missing-file", rec["id"], f"image file absent: {rec['path']}"))
            elif sha256_hex(path.read_bytes()) != rec["id"]:
                findings.append(Finding("hash-mismatch", rec["id"], "stored bytes do not match recorded id"))
            if rec.get("leakage_passed"):
                result = leakage_check(rec["description"], rec["concept"])
                if not result.clean:
                    findings.append(
                        Finding("leakage", rec["id"], f"description leaks {result.matched!r}")
                    )
        for rec in self.read_manifest("attempt"):
            if rec.get("leakage_passed") and rec.get("description"):
                result = leakage_check(rec["description"], rec["concept"])
                if not result.clean:
                    findings.append(
                        Finding(
                            "leakage",
                            f"{rec['concept']}/{rec['style']}",
                            f"attempt description leaks {result.matched!r}",
                        )
                    )
        for rec in self.items.read_all():
            if rec["image_id"] not in image_ids:
                findings.append(
                    Finding("dangling-ref", rec["item_id"], f"item references unknown image {rec['image_id'][:12]}...")
                )
        return findings
