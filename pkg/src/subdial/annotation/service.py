"""HTTP API over an annotation store.

Workers claim HITs, answer items (quizzes are graded immediately, with
the gold label returned as feedback), and progress is observable per
HIT and per worker. Quiz gold labels never appear in HIT payloads.
"""
from __future__ import annotations

import time
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..taxonomy import LabelTaxonomy, default_taxonomy
from .aggregate import grade_worker, harvest_new_labels, normalize_label, record_choice
from .models import QUIZ, AnnotationRecord, HIT, HitItem
from .store import (
    AnnotationStore,
    DuplicateAnnotation,
    NotAssigned,
    UnknownHit,
)


class AnnotationBody(BaseModel):
    worker_id: str
    hit_id: str
    item_id: str
    turn_index: int = 0
    label: str | None = None
    custom_label: str | None = None
    chose_from_top3: bool = True


def _public_item(item: HitItem) -> dict:
    return {
        "kind": item.kind,
        "item_id": item.item_id,
        "turn_index": item.turn_index,
        "texts": list(item.texts),
        "suggestions": [[label, conf] for label, conf in item.suggestions],
    }


def _public_hit(store: AnnotationStore, hit: HIT, worker: str | None) -> dict:
    body = {
        "hit_id": hit.hit_id,
        "workers_per_hit": hit.workers_per_hit,
        "items": [_public_item(it) for it in hit.items],
    }
    if worker:
        body["answered"] = store.answered_items(worker, hit.hit_id)
    return body


def create_app(
    store: AnnotationStore,
    taxonomy: LabelTaxonomy | None = None,
    static_dir: Path | str | None = None,
) -> FastAPI:
    taxonomy = taxonomy or default_taxonomy()
    app = FastAPI(title="dialogue annotation service")

    @app.get("/hits/next")
    def next_hit(worker: str = Query(min_length=1)):
        hit = store.claim_next(worker)
        if hit is None:
            raise HTTPException(404, "no open hits left for this worker")
        return _public_hit(store, hit, worker)

    @app.get("/hits/{hit_id}")
    def get_hit(hit_id: str, worker: str | None = None):
        try:
            hit = store.hit(hit_id)
        except UnknownHit:
            raise HTTPException(404, f"unknown hit {hit_id!r}") from None
        return _public_hit(store, hit, worker)

    @app.post("/annotations", status_code=201)
    def post_annotation(body: AnnotationBody):
        if (body.label is None) == (body.custom_label is None):
            raise HTTPException(
                422, "exactly one of 'label' and 'custom_label' must be given"
            )
        if body.label is not None and body.label not in taxonomy:
            raise HTTPException(422, f"unknown label {body.label!r}")
        try:
            record = AnnotationRecord(
                worker_id=body.worker_id,
                hit_id=body.hit_id,
                item_id=body.item_id,
                turn_index=body.turn_index,
                label=body.label,
                custom_label=body.custom_label,
                chose_from_top3=body.chose_from_top3,
                timestamp=time.time(),
            )
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None
        try:
            store.record(record)
        except UnknownHit:
            raise HTTPException(404, f"unknown hit {body.hit_id!r}") from None
        except KeyError:
            raise HTTPException(
                404, f"hit {body.hit_id!r} has no item {body.item_id!r}"
            ) from None
        except NotAssigned as exc:
            raise HTTPException(409, str(exc)) from None
        except DuplicateAnnotation as exc:
            raise HTTPException(409, str(exc)) from None

        quiz = None
        item = store.hit(body.hit_id).item(body.item_id)
        if item.kind == QUIZ:
            quiz = {
                "correct": normalize_label(record_choice(record))
                == normalize_label(item.gold),
                "gold": item.gold,
            }
        return {"status": "recorded", "quiz": quiz}

    @app.get("/progress")
    def progress():
        hits_map = {h.hit_id: h for h in store.hits()}
        records = store.records()
        by_hit: dict[str, int] = {}
        for r in records:
            by_hit[r.hit_id] = by_hit.get(r.hit_id, 0) + 1
        assignments = store.assignments()
        workers = []
        for worker_id in store.workers():
            grade = grade_worker(worker_id, records, hits_map)
            workers.append(
                {
                    "worker_id": worker_id,
                    "hits": [
                        {
                            "hit_id": hit_id,
                            "quiz_correct": correct,
                            "quiz_answered": answered,
                            "passed": grade.passed(hit_id),
                        }
                        for hit_id, correct, answered in grade.per_hit
                    ],
                }
            )
        return {
            "hits": [
                {
                    "hit_id": h.hit_id,
                    "assigned": assignments.get(h.hit_id, []),
                    "completed_by": store.completions(h.hit_id),
                    "records": by_hit.get(h.hit_id, 0),
                }
                for h in store.hits()
            ],
            "workers": workers,
        }

    @app.get("/labels")
    def labels():
        custom = harvest_new_labels(store.records())
        return {
            "emotions": list(taxonomy.emotions()),
            "intents": list(taxonomy.intents()),
            "custom": [{"label": c.label, "count": c.count} for c in custom],
        }

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
