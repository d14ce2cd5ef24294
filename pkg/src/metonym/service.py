"""HTTP annotation service: task assignment, label capture, agreement stats.

Auth is a plain bearer token per annotator: by default the token is the
annotator id itself; a token map can be supplied to decouple them. CORS
is enabled for the UI origin.
"""

from __future__ import annotations

import json
import logging
from importlib import resources
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from pydantic import BaseModel, Field

from .annotation import (
    ASSOCIATION_TYPES,
    AnnotationError,
    AnnotationRecord,
    FLAGS,
    LabelStore,
    export_labels,
    metonymic_rate,
    raw_agreement,
)
from .catalog import read_catalog
from .store import CorpusStore

log = logging.getLogger(__name__)


class LabelIn(BaseModel):
    image_id: str
    label: str
    flags: list[str] = Field(default_factory=list)
    association_type: str | None = None


def _annotator_from_auth(request: Request, tokens: dict[str, str] | None) -> str:
    header = request.headers.get("authorization", "")
    if not header.lower().startswith("bearer "):
        raise HTTPException(status_code=401, detail="missing bearer token")
    token = header[len("bearer "):].strip()
    if tokens is not None:
        annotator = tokens.get(token)
        if not annotator:
            raise HTTPException(status_code=401, detail="unknown token")
        return annotator
    if not token:
        raise HTTPException(status_code=401, detail="empty token")
    return token


def create_app(
    store_dir: str | Path,
    tokens: dict[str, str] | None = None,
    labels_per_image: int = 2,
    allow_origin: str = "*",
    ui_dir: str | Path | None = None,
) -> FastAPI:
    store = CorpusStore(store_dir)
    labels = LabelStore(store, labels_per_image=labels_per_image)

    app = FastAPI(title="annotation-api")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[allow_origin] if allow_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.store = store
    app.state.labels = labels

    def image_records() -> list[dict]:
        return store.image_records()

    def supersense_map() -> dict[str, str]:
        if not store.catalog_path.exists():
            return {}
        return {c.lemma: c.supersense for c in read_catalog(store.catalog_path)}

    @app.get("/tasks/next")
    def next_task(
        request: Request,
        annotator: str = Query(...),
        style: str | None = None,
        supersense: str | None = None,
    ):
        authed = _annotator_from_auth(request, tokens)
        if authed != annotator:
            raise HTTPException(status_code=403, detail="token does not match annotator")
        task = labels.next_task(
            annotator,
            image_records(),
            style=style,
            supersense_of=supersense_map() if supersense else None,
            supersense=supersense,
        )
        if task is None:
            return {"done": True}
        return {
            "done": False,
            "image_id": task.image_id,
            "concept": task.concept,
            "image_url": task.image_url,
            "remaining": task.remaining,
        }

    @app.post("/labels")
    def submit_label(request: Request, body: LabelIn):
        annotator = _annotator_from_auth(request, tokens)
        known = {rec["id"] for rec in image_records()}
        if body.image_id not in known:
            raise HTTPException(status_code=404, detail=f"unknown image id {body.image_id!r}")
        try:
            record = AnnotationRecord(
                image_id=body.image_id,
                annotator=annotator,
                label=body.label,
                flags=tuple(body.flags),
                association_type=body.association_type,
            )
        except (AnnotationError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        stamped = labels.submit(record)
        return JSONResponse({"ok": True, "ts": stamped.get("ts")})

    @app.get("/stats/agreement")
    def agreement():
        value, n_pairs = raw_agreement(labels.effective_records())
        return {
            "n_pairs": n_pairs,
            "agreement": None if value is None else float(value),
            "note": "no data" if value is None else None,
        }

    @app.get("/stats/metonymic-rate")
    def metonymic(group: str = "overall"):
        meta = {rec["id"]: rec for rec in image_records()}
        try:
            rates = metonymic_rate(
                labels.effective_records(),
                grouping=group,
                image_meta=meta,
                supersense_of=supersense_map(),
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "group": group,
            "rates": {k: (None if v is None else float(v)) for k, v in rates.items()},
        }

    @app.get("/export")
    def export():
        rows = export_labels(store)
        body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
        return PlainTextResponse(body, media_type="application/x-ndjson")

    @app.get("/images/{image_id}")
    def image(image_id: str):
        try:
            data = store.get_image(image_id)
        except Exception:
            raise HTTPException(status_code=404, detail="unknown image")
        return Response(content=data, media_type="image/png")

    @app.get("/guidelines")
    def guidelines():
        text = (resources.files("metonym") / "prompts" / "annotation_guidelines.txt").read_text(
            encoding="utf-8"
        )
        return PlainTextResponse(text)

    @app.get("/meta")
    def meta():
        return {
            "images": len(image_records()),
            "labels_per_image": labels_per_image,
            "flags": list(FLAGS),
            "association_types": list(ASSOCIATION_TYPES),
        }

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
