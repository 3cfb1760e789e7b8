"""Durable annotation store: an append-only event log replayed at open.

All mutation goes through one lock, so HIT claims are atomic (two
workers polling concurrently can never exceed the per-HIT worker
target) and duplicate submissions are rejected race-free. Every event
is a JSON line appended and flushed before the call returns.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path

from .models import (
    AnnotationRecord,
    HIT,
    annotation_from_record,
    annotation_record,
    hit_from_record,
    hit_record,
)


class UnknownHit(KeyError):
    pass


class UnknownItem(KeyError):
    pass


class NotAssigned(RuntimeError):
    """Worker posted to a HIT they never claimed."""


class DuplicateAnnotation(RuntimeError):
    """Same (worker, hit, item) submitted twice."""


class AnnotationStore:
    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._hits: dict[str, HIT] = {}
        self._hit_order: list[str] = []
        self._assigned: dict[str, list[str]] = {}  # hit_id -> workers in claim order
        self._records: list[AnnotationRecord] = []
        self._seen: set[tuple[str, str, str]] = set()  # (worker, hit, item)
        self._done: dict[tuple[str, str], int] = {}  # (worker, hit) -> items answered
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = json.loads(line)
                kind = event["event"]
                if kind == "hit":
                    self._apply_hit(hit_from_record(event["hit"]))
                elif kind == "assign":
                    self._apply_assign(event["hit_id"], event["worker_id"])
                elif kind == "annotation":
                    self._apply_annotation(annotation_from_record(event["record"]))
                else:
                    raise ValueError(f"unknown event type {kind!r} in {self.path}")

    def _append(self, event: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()

    # -- apply helpers keep replay and live mutation identical --------------

    def _apply_hit(self, hit: HIT) -> None:
        if hit.hit_id in self._hits:
            raise ValueError(f"duplicate hit id {hit.hit_id}")
        self._hits[hit.hit_id] = hit
        self._hit_order.append(hit.hit_id)
        self._assigned.setdefault(hit.hit_id, [])

    def _apply_assign(self, hit_id: str, worker_id: str) -> None:
        self._assigned[hit_id].append(worker_id)

    def _apply_annotation(self, record: AnnotationRecord) -> None:
        self._records.append(record)
        self._seen.add((record.worker_id, record.hit_id, record.item_id))
        key = (record.worker_id, record.hit_id)
        self._done[key] = self._done.get(key, 0) + 1

    # -- public API ----------------------------------------------------------

    def add_hits(self, hits: list[HIT]) -> None:
        with self._lock:
            for hit in hits:
                self._apply_hit(hit)
                self._append({"event": "hit", "hit": hit_record(hit)})

    def hit(self, hit_id: str) -> HIT:
        got = self._hits.get(hit_id)
        if got is None:
            raise UnknownHit(hit_id)
        return got

    def hits(self) -> list[HIT]:
        return [self._hits[h] for h in self._hit_order]

    def _is_complete(self, worker_id: str, hit_id: str) -> bool:
        done = self._done.get((worker_id, hit_id), 0)
        return done >= len(self._hits[hit_id].items)

    def claim_next(self, worker_id: str) -> HIT | None:
        """The worker's open HIT, or a fresh claim, or None when drained.

        An unfinished HIT already claimed by this worker is always
        returned first, so a page reload resumes instead of consuming a
        second assignment.
        """
        if not worker_id:
            raise ValueError("worker id must be non-empty")
        with self._lock:
            for hit_id in self._hit_order:
                if worker_id in self._assigned[hit_id] and not self._is_complete(
                    worker_id, hit_id
                ):
                    return self._hits[hit_id]
            for hit_id in self._hit_order:
                hit = self._hits[hit_id]
                workers = self._assigned[hit_id]
                if worker_id in workers or len(workers) >= hit.workers_per_hit:
                    continue
                self._apply_assign(hit_id, worker_id)
                self._append(
                    {"event": "assign", "hit_id": hit_id, "worker_id": worker_id}
                )
                return hit
        return None

    def assignments(self) -> dict[str, list[str]]:
        return {h: list(w) for h, w in self._assigned.items()}

    def record(self, annotation: AnnotationRecord) -> None:
        with self._lock:
            hit = self._hits.get(annotation.hit_id)
            if hit is None:
                raise UnknownHit(annotation.hit_id)
            item = hit.item(annotation.item_id)
            if item is None:
                raise UnknownItem(annotation.item_id)
            if annotation.worker_id not in self._assigned[annotation.hit_id]:
                raise NotAssigned(
                    f"worker {annotation.worker_id!r} has not claimed {annotation.hit_id}"
                )
            key = (annotation.worker_id, annotation.hit_id, annotation.item_id)
            if key in self._seen:
                raise DuplicateAnnotation(
                    f"{annotation.worker_id} already answered {annotation.item_id} "
                    f"in {annotation.hit_id}"
                )
            self._apply_annotation(annotation)
            self._append({"event": "annotation", "record": annotation_record(annotation)})

    def records(self) -> list[AnnotationRecord]:
        return list(self._records)

    def answered_items(self, worker_id: str, hit_id: str) -> list[str]:
        return [
            r.item_id
            for r in self._records
            if r.worker_id == worker_id and r.hit_id == hit_id
        ]

    def completions(self, hit_id: str) -> list[str]:
        """Workers who answered every item of the HIT."""
        return [
            w
            for w in self._assigned.get(hit_id, [])
            if self._is_complete(w, hit_id)
        ]

    def workers(self) -> list[str]:
        seen: list[str] = []
        for hit_id in self._hit_order:
            for w in self._assigned[hit_id]:
                if w not in seen:
                    seen.append(w)
        return seen
