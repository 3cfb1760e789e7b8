"""Nearest-labeled-neighbor expansion over dialogue embeddings.

Every unlabeled dialogue is matched against every labeled one; it
adopts the label of its highest-cosine neighbor when that cosine
reaches the threshold. The search is exact. Blocking only bounds the
size of the score matrix held in memory, it never prunes candidates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .jsonl import read_records, write_records

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.92


@dataclass(frozen=True)
class SimilarityMatch:
    unlabeled_id: str
    labeled_id: str
    label: str
    cosine: float

    def __post_init__(self):
        if not -1.0 <= self.cosine <= 1.0:
            raise ValueError(f"cosine out of range: {self.cosine}")


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    mat = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return mat / norms


def _best_neighbors(
    unlabeled: np.ndarray, labeled: np.ndarray, block: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per unlabeled row: (best cosine, index of best labeled row).

    Ties keep the lowest labeled index; callers sort the labeled side
    by id so that lowest index means lexicographically first id.
    """
    n = unlabeled.shape[0]
    best_val = np.full(n, -np.inf)
    best_idx = np.zeros(n, dtype=np.int64)
    for u0 in range(0, n, block):
        u1 = min(u0 + block, n)
        tile_best = np.full(u1 - u0, -np.inf)
        tile_idx = np.zeros(u1 - u0, dtype=np.int64)
        for l0 in range(0, labeled.shape[0], block):
            l1 = min(l0 + block, labeled.shape[0])
            scores = unlabeled[u0:u1] @ labeled[l0:l1].T
            local = np.argmax(scores, axis=1)
            local_val = scores[np.arange(u1 - u0), local]
            # strict >, so earlier tiles (smaller ids) win exact ties
            better = local_val > tile_best
            tile_best[better] = local_val[better]
            tile_idx[better] = local[better] + l0
        best_val[u0:u1] = tile_best
        best_idx[u0:u1] = tile_idx
    return best_val, best_idx


def expand_by_similarity(
    unlabeled_ids: list[str],
    unlabeled_vectors: np.ndarray,
    labeled_ids: list[str],
    labeled_vectors: np.ndarray,
    labels: list[str],
    tau: float = DEFAULT_TAU,
    block: int = 1024,
    within_class: list[str] | None = None,
) -> list[SimilarityMatch]:
    """Exact brute-force expansion, blocked for memory.

    `within_class` optionally gives each unlabeled dialogue a class
    name; its neighbor search is then restricted to labeled dialogues
    of that class. Matches come back in unlabeled input order.
    """
    if len(unlabeled_ids) != unlabeled_vectors.shape[0]:
        raise ValueError("unlabeled ids and vectors disagree on count")
    if not (len(labeled_ids) == labeled_vectors.shape[0] == len(labels)):
        raise ValueError("labeled ids, vectors and labels disagree on count")
    if within_class is not None and len(within_class) != len(unlabeled_ids):
        raise ValueError("within_class needs one class per unlabeled dialogue")
    if not labeled_ids or not unlabeled_ids:
        return []

    u_mat = normalize_rows(unlabeled_vectors)
    order = sorted(range(len(labeled_ids)), key=lambda i: labeled_ids[i])
    l_mat = normalize_rows(labeled_vectors)[order]
    l_ids = [labeled_ids[i] for i in order]
    l_labels = [labels[i] for i in order]

    matches: list[SimilarityMatch | None] = [None] * len(unlabeled_ids)

    def run(u_rows: np.ndarray, l_rows: np.ndarray) -> None:
        vals, idxs = _best_neighbors(u_mat[u_rows], l_mat[l_rows], block)
        for pos, (val, idx) in enumerate(zip(vals, idxs)):
            if val >= tau:
                u = int(u_rows[pos])
                l = int(l_rows[idx])
                matches[u] = SimilarityMatch(
                    unlabeled_id=unlabeled_ids[u],
                    labeled_id=l_ids[l],
                    label=l_labels[l],
                    cosine=float(np.clip(val, -1.0, 1.0)),
                )

    if within_class is None:
        run(np.arange(len(unlabeled_ids)), np.arange(len(l_ids)))
    else:
        label_rows: dict[str, list[int]] = {}
        for i, lab in enumerate(l_labels):
            label_rows.setdefault(lab, []).append(i)
        class_rows: dict[str, list[int]] = {}
        for i, cls in enumerate(within_class):
            class_rows.setdefault(cls, []).append(i)
        for cls, u_rows in sorted(class_rows.items()):
            l_rows = label_rows.get(cls)
            if not l_rows:
                log.warning("no labeled dialogues for class %s, skipping %d", cls, len(u_rows))
                continue
            run(np.asarray(u_rows), np.asarray(l_rows))

    return [m for m in matches if m is not None]


def match_record(match: SimilarityMatch) -> dict:
    return {
        "unlabeled_id": match.unlabeled_id,
        "labeled_id": match.labeled_id,
        "label": match.label,
        "cosine": match.cosine,
    }


def match_from_record(record: dict) -> SimilarityMatch:
    return SimilarityMatch(
        unlabeled_id=record["unlabeled_id"],
        labeled_id=record["labeled_id"],
        label=record["label"],
        cosine=record["cosine"],
    )


def save_matches(path, matches: list[SimilarityMatch]) -> None:
    write_records(path, (match_record(m) for m in matches))


def load_matches(path) -> list[SimilarityMatch]:
    return [match_from_record(r) for r in read_records(path)]
