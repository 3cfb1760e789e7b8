"""Bag-of-n-grams softmax classifier over weighted context windows.

Word unigrams and bigrams are hashed into an embedding table; a window
vector is the half-decay weighted sum of per-turn mean embeddings; a
single linear layer + softmax gives the label distribution. The output
matrix starts at zero, so an untrained model predicts exactly uniform.
Training is plain SGD on cross-entropy with a linearly decayed learning
rate. Examples are canonically ordered before seeded shuffling, so the
result does not depend on input order.
"""
from __future__ import annotations

import json
import math
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .context import ContextWindow
from .hashing import feature_bucket, stable_hash64
from .taxonomy import LabelTaxonomy
from .text import word_tokens


@dataclass(frozen=True)
class Prediction:
    top: str
    confidence: float
    distribution: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.distribution) != len(self.labels):
            raise ValueError("distribution length must match label count")
        total = sum(self.distribution)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"distribution sums to {total}, not 1")
        best = max(range(len(self.distribution)), key=self.distribution.__getitem__)
        if self.labels[best] != self.top:
            raise ValueError("top must be the argmax label")
        if self.confidence != self.distribution[best]:
            raise ValueError("confidence must equal max(distribution)")


@dataclass
class ClassifierConfig:
    dim: int = 64
    hash_bits: int = 21
    epochs: int = 5
    lr0: float = 0.1
    seed: int = 0
    bigrams: bool = True


@dataclass
class NGramSoftmaxModel:
    embeddings: np.ndarray  # (2**hash_bits, dim) float32
    output: np.ndarray  # (dim, n_labels) float64
    taxonomy: LabelTaxonomy
    hash_bits: int
    bigrams: bool
    training_meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def _turn_buckets(text: str, hash_bits: int, bigrams: bool) -> list[int]:
    tokens = word_tokens(text)
    grams = list(tokens)
    if bigrams:
        grams += [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    return [feature_bucket(g, hash_bits) for g in grams]


def _window_buckets(window: ContextWindow, hash_bits: int, bigrams: bool):
    """Per-turn (weight, bucket list) pairs, oldest turn first."""
    weights = window.weights()
    return [
        (w, _turn_buckets(turn.text, hash_bits, bigrams))
        for w, turn in zip(weights, window.turns())
    ]


def _window_vector(model: NGramSoftmaxModel, parts) -> np.ndarray:
    h = np.zeros(model.dim, dtype=np.float64)
    for weight, ids in parts:
        if ids:
            h += weight * model.embeddings[ids].mean(axis=0, dtype=np.float64)
    return h


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def new_model(
    taxonomy: LabelTaxonomy, config: ClassifierConfig | None = None
) -> NGramSoftmaxModel:
    """Fresh model: seeded uniform(-1/dim, 1/dim) embeddings, zero output."""
    config = config or ClassifierConfig()
    rng = np.random.default_rng(config.seed)
    rows = 1 << config.hash_bits
    scale = 1.0 / config.dim
    embeddings = (rng.random((rows, config.dim), dtype=np.float32) * 2.0 - 1.0) * scale
    output = np.zeros((config.dim, len(taxonomy)), dtype=np.float64)
    return NGramSoftmaxModel(
        embeddings=embeddings,
        output=output,
        taxonomy=taxonomy,
        hash_bits=config.hash_bits,
        bigrams=config.bigrams,
        training_meta={
            "dim": config.dim,
            "hash_bits": config.hash_bits,
            "epochs": 0,
            "lr0": config.lr0,
            "seed": config.seed,
        },
    )


def predict(model: NGramSoftmaxModel, window: ContextWindow) -> Prediction:
    parts = _window_buckets(window, model.hash_bits, model.bigrams)
    h = _window_vector(model, parts)
    logits = h @ model.output
    if not np.all(np.isfinite(logits)):
        raise ValueError("model produced non-finite logits (diverged training?)")
    dist = _softmax(logits)
    dist = dist / dist.sum()
    names = model.taxonomy.names()
    best = int(np.argmax(dist))
    return Prediction(
        top=names[best],
        confidence=float(dist[best]),
        distribution=tuple(float(p) for p in dist),
        labels=names,
    )


def _canonical_order(windows: list[ContextWindow]) -> list[int]:
    """Content-based ordering so training ignores input permutation."""

    def fingerprint(w: ContextWindow) -> int:
        text = "\x1f".join(t.text for t in w.turns()) + "\x1e" + (w.label or "")
        return stable_hash64(text)

    return sorted(range(len(windows)), key=lambda i: fingerprint(windows[i]))


def _mean_loss(model, examples) -> float:
    total = 0.0
    for parts, y in examples:
        dist = _softmax(_window_vector(model, parts) @ model.output)
        total += -math.log(max(dist[y], 1e-300))
    return total / len(examples)


def train_classifier(
    windows: list[ContextWindow],
    taxonomy: LabelTaxonomy,
    config: ClassifierConfig | None = None,
    validation: list[ContextWindow] | None = None,
    train_ids: list[str] | None = None,
) -> NGramSoftmaxModel:
    """SGD over seeded shuffled epochs; cross-entropy loss.

    When a validation set is given, the returned parameters are the
    epoch snapshot with the lowest validation loss. ``train_ids``
    (dialogue ids backing the windows) are recorded for the evaluation
    leak guard.
    """
    config = config or ClassifierConfig()
    if not windows:
        raise ValueError("empty training set")
    names = taxonomy.names()
    for w in windows:
        if w.label not in names:
            raise ValueError(f"unknown label: {w.label!r}")

    model = new_model(taxonomy, config)
    order = _canonical_order(windows)
    examples = [
        (
            _window_buckets(windows[i], config.hash_bits, config.bigrams),
            taxonomy.index(windows[i].label),
        )
        for i in order
    ]
    val_examples = None
    if validation is not None:
        val_examples = [
            (
                _window_buckets(w, config.hash_bits, config.bigrams),
                taxonomy.index(w.label),
            )
            for w in validation
        ]

    rng = random.Random(config.seed)
    idx = list(range(len(examples)))
    total_steps = max(1, config.epochs * len(examples))
    step = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    best = None  # (val_loss, epoch, embeddings copy, output copy)

    for epoch in range(config.epochs):
        rng.shuffle(idx)
        running = 0.0
        for i in idx:
            parts, y = examples[i]
            lr = config.lr0 * (1.0 - step / total_steps)
            step += 1
            h = _window_vector(model, parts)
            dist = _softmax(h @ model.output)
            running += -math.log(max(dist[y], 1e-300))
            grad_logits = dist.copy()
            grad_logits[y] -= 1.0
            grad_h = model.output @ grad_logits
            model.output -= lr * np.outer(h, grad_logits)
            for weight, ids in parts:
                if ids:
                    step_vec = (lr * weight / len(ids)) * grad_h
                    np.subtract.at(model.embeddings, ids, step_vec.astype(np.float32))
        train_losses.append(running / len(examples))
        if val_examples is not None:
            val_loss = _mean_loss(model, val_examples)
            val_losses.append(val_loss)
            if best is None or val_loss < best[0]:
                best = (val_loss, epoch, model.embeddings.copy(), model.output.copy())

    if best is not None:
        model.embeddings, model.output = best[2], best[3]
        model.training_meta["best_epoch"] = best[1]
        model.training_meta["epoch_val_loss"] = val_losses

    model.training_meta.update(
        {
            "epochs": config.epochs,
            "bigrams": config.bigrams,
            "epoch_train_loss": train_losses,
            "n_examples": len(examples),
        }
    )
    if train_ids is not None:
        model.training_meta["train_dialogue_ids"] = sorted(set(train_ids))
    return model


def training_accuracy(model: NGramSoftmaxModel, windows: list[ContextWindow]) -> float:
    correct = sum(1 for w in windows if predict(model, w).top == w.label)
    return correct / len(windows)


_MAGIC = b"SDCLS\x01"


def save_classifier(model: NGramSoftmaxModel, path: Path) -> None:
    labels = json.dumps(list(model.taxonomy.labels)).encode("utf-8")
    meta = json.dumps(model.training_meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IIIB",
                model.hash_bits,
                model.dim,
                len(model.taxonomy),
                1 if model.bigrams else 0,
            )
        )
        fh.write(struct.pack("<I", len(labels)))
        fh.write(labels)
        fh.write(model.embeddings.astype("<f4").tobytes())
        fh.write(model.output.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def load_classifier(path: Path) -> NGramSoftmaxModel:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"not a classifier model file: {path}")
        hash_bits, dim, n_labels, bigrams = struct.unpack("<IIIB", fh.read(13))
        labels_len = struct.unpack("<I", fh.read(4))[0]
        labels = json.loads(fh.read(labels_len).decode("utf-8"))
        taxonomy = LabelTaxonomy(labels=tuple((n, k) for n, k in labels))
        rows = 1 << hash_bits
        embeddings = np.frombuffer(fh.read(rows * dim * 4), dtype="<f4").reshape(rows, dim)
        output = np.frombuffer(fh.read(dim * n_labels * 8), dtype="<f8").reshape(dim, n_labels)
        meta_len = struct.unpack("<I", fh.read(4))[0]
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
    return NGramSoftmaxModel(
        embeddings=embeddings.copy(),
        output=output.copy(),
        taxonomy=taxonomy,
        hash_bits=hash_bits,
        bigrams=bool(bigrams),
        training_meta=meta,
    )
