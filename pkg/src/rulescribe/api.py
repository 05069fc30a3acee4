"""HTTP facade over the curation store for the annotation UI and scripts.

JSON over HTTP; every non-2xx body is an ApiError object
{"code": not_found|conflict|validation|internal, "message": ...}. Field names
are documented in docs/api.md. Single-team research tool: no authentication
beyond the annotator id (deployment caveat in the README).
"""

from __future__ import annotations

import logging
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .curation import (
    AnnotationError,
    AnnotationRecord,
    ConflictError,
    CurationError,
    CurationStore,
    NotFoundError,
    SplitError,
    build_splits,
    export_jsonl,
)
from .rules import RuleParseError, parse_rule, render_rule

logger = logging.getLogger(__name__)


class AnnotationIn(BaseModel):
    annotator_id: str
    correctness: int
    clarity: int
    logicalness: int
    missed_entities: int = 0
    missed_relations: int = 0
    hallucinated_entities: int = 0
    hallucinated_relations: int = 0
    edited_explanation: str | None = None


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _pretty(rule_text: str) -> str:
    try:
        return render_rule(parse_rule(rule_text), "pretty")
    except RuleParseError:
        return rule_text


def _item_json(item) -> dict:
    data = item.to_dict()
    data["pretty_rule"] = _pretty(item.draft.rule_text)
    return data


def create_app(
    store: CurationStore,
    export_profile: str = "freebase",
    split_sizes: dict[str, int] | None = None,
    split_seed: int = 0,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="rulescribe annotation service")

    @app.exception_handler(NotFoundError)
    async def _not_found(_req: Request, err: NotFoundError):
        return _error(404, "not_found", str(err))

    @app.exception_handler(ConflictError)
    async def _conflict(_req: Request, err: ConflictError):
        return _error(409, "conflict", str(err))

    @app.exception_handler(AnnotationError)
    async def _annotation(_req: Request, err: AnnotationError):
        return _error(400, "validation", str(err))

    @app.exception_handler(SplitError)
    async def _split(_req: Request, err: SplitError):
        return _error(400, "validation", str(err))

    @app.exception_handler(CurationError)
    async def _curation(_req: Request, err: CurationError):
        return _error(400, "validation", str(err))

    @app.exception_handler(RequestValidationError)
    async def _req_validation(_req: Request, err: RequestValidationError):
        return _error(400, "validation", str(err))

    @app.exception_handler(Exception)
    async def _internal(_req: Request, err: Exception):
        logger.exception("unhandled error")
        return _error(500, "internal", f"{type(err).__name__}: {err}")

    @app.get("/api/queue/next")
    def queue_next(annotator: str):
        item = store.claim_next(annotator)
        return {"item": _item_json(item) if item is not None else None}

    @app.get("/api/items")
    def list_items(status: str | None = None):
        return {"items": [_item_json(i) for i in store.items(status)]}

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str):
        return _item_json(store.get_item(item_id))

    @app.post("/api/items/{item_id}/annotation")
    def post_annotation(item_id: str, body: AnnotationIn):
        annotation = AnnotationRecord(
            item_id=item_id,
            annotator_id=body.annotator_id,
            correctness=body.correctness,
            clarity=body.clarity,
            logicalness=body.logicalness,
            missed_entities=body.missed_entities,
            missed_relations=body.missed_relations,
            hallucinated_entities=body.hallucinated_entities,
            hallucinated_relations=body.hallucinated_relations,
            edited_explanation=body.edited_explanation,
        )
        status = store.submit_annotation(item_id, annotation, body.annotator_id)
        return {"item_id": item_id, "status": status}

    @app.get("/api/stats")
    def stats():
        return store.stats()

    @app.get("/api/export/{split}")
    def export(split: str, seed: int | None = None, train: int | None = None, val: int | None = None, test: int | None = None):
        entries = store.entries()
        if split == "all":
            selected = entries
        else:
            sizes = split_sizes
            if train is not None and val is not None and test is not None:
                sizes = {"train": train, "val": val, "test": test}
            if sizes is None:
                raise SplitError("no split sizes configured; pass ?train=&val=&test=")
            splits = build_splits(entries, sizes, seed if seed is not None else split_seed)
            selected = splits.split(split)
        payload = export_jsonl(selected, export_profile)
        return Response(content=payload, media_type="application/jsonl")

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
