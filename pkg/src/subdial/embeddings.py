"""Turn and dialogue embeddings plus the flat embedding file format.

The builtin provider embeds a text as the L2-normalized, count-weighted
sum of per-token random Gaussian vectors, each token's vector drawn
from a generator seeded by (global seed, stable token hash). Texts
sharing vocabulary land near each other; disjoint-vocabulary texts are
near-orthogonal at D=768. It is a deterministic offline stand-in for a
sentence-embedding network, not a semantic model.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .context import half_decay_weights
from .hashing import stable_hash64
from .text import word_tokens

DEFAULT_DIM = 768


class BuiltinEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._token_vectors: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_vectors.get(token)
        if vec is None:
            rng = np.random.default_rng([self.seed, stable_hash64(token)])
            vec = rng.standard_normal(self.dim).astype(np.float32)
            self._token_vectors[token] = vec
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        counts: dict[str, int] = {}
        for token in word_tokens(text):
            counts[token] = counts.get(token, 0) + 1
        if not counts:
            counts = {"": 1}  # deterministic fallback for token-free text
        acc = np.zeros(self.dim, dtype=np.float64)
        for token, count in counts.items():
            acc += count * self._token_vector(token).astype(np.float64)
        norm = np.linalg.norm(acc)
        if norm == 0.0:
            raise ValueError("degenerate zero embedding")
        return (acc / norm).astype(np.float32)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            out[i] = self.embed_text(text)
        return out


@dataclass(frozen=True)
class DialogueEmbedding:
    vector: np.ndarray
    turn_count: int

    def __post_init__(self):
        if self.turn_count < 1:
            raise ValueError("dialogue embedding needs at least one turn")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("embedding components must be finite")


def embed_dialogue(turn_vectors: np.ndarray) -> DialogueEmbedding:
    """Half-decay weighted average of turn embeddings, oldest row first.

    Three turns give (1/7)v1 + (2/7)v2 + (4/7)v3. The result is not
    re-normalized; cosine comparisons do not care about scale.
    """
    vecs = np.asarray(turn_vectors, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] < 1:
        raise ValueError("expected a (turns, dim) matrix with >= 1 row")
    weights = np.array(half_decay_weights(vecs.shape[0]), dtype=np.float64)
    return DialogueEmbedding(vector=weights @ vecs, turn_count=vecs.shape[0])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


# Flat binary embedding file: count u64, dim u32, dtype code u32
# (1 = float32 little-endian), then row-major vectors. Ids live in a
# text sidecar next to it, one per line, same order.
_DTYPE_F32 = 1


def save_embeddings(path: Path, ids: list[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise ValueError("need one id per vector row")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QII", vectors.shape[0], vectors.shape[1], _DTYPE_F32))
        fh.write(vectors.tobytes())
    ids_path = path.with_suffix(path.suffix + ".ids")
    ids_path.write_text("".join(i + "\n" for i in ids), encoding="utf-8")


def load_embeddings(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        count, dim, dtype_code = struct.unpack("<QII", fh.read(16))
        if dtype_code != _DTYPE_F32:
            raise ValueError(f"unsupported embedding dtype code {dtype_code}")
        vectors = np.frombuffer(fh.read(count * dim * 4), dtype="<f4").reshape(count, dim)
    ids_path = path.with_suffix(path.suffix + ".ids")
    ids = ids_path.read_text(encoding="utf-8").splitlines()
    if len(ids) != count:
        raise ValueError(f"id sidecar has {len(ids)} lines for {count} vectors")
    return ids, vectors.copy()
