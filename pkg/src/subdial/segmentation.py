"""Decide whether consecutive sentences belong to the same dialogue turn.

Features are hashed indicator features over seven families per sentence
pair (lemmatized unigrams/bigrams per side, first/final tokens and
bigrams per side, block membership, genre, density bucket) plus
family-level quadratic crosses. The classifier is a max-margin linear
model trained by hinge-loss SGD with L2 regularization and 1/t learning
rate decay; a positive score means the pair starts a new turn, a score
of exactly 0 merges.
"""
from __future__ import annotations

import json
import math
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import Turn
from .hashing import feature_bucket
from .ingest import Sentence, SubtitleDocument, sentence_density
from .lemmatizer import lemmatize
from .text import tokenize

SAME_TURN = "same_turn"
NEW_TURN = "new_turn"

# Feature family namespaces, in emission order. a*/b* are the left and
# right sentence of the pair; blk/gen/den are pair-level context.
NAMESPACES = (
    "au", "ab", "af", "al", "afb", "alb",
    "bu", "bb", "bf", "bl", "bfb", "blb",
    "blk", "gen", "den",
)

DENSITY_BUCKETS = 8
DENSITY_CEILING = 4.0  # sentences per second; log2-spaced buckets below


@dataclass(frozen=True)
class BoundaryInstance:
    """A pair of consecutive sentences plus the pair-level context."""

    sent_a: Sentence
    sent_b: Sentence
    same_block: bool
    genre: str | None = None
    density: float | None = None
    label: str | None = None

    def __post_init__(self):
        if self.label not in (None, SAME_TURN, NEW_TURN):
            raise ValueError(f"bad boundary label: {self.label!r}")
        if self.sent_a.block_index > self.sent_b.block_index:
            raise ValueError("sent_a must precede sent_b")


@dataclass(frozen=True)
class SparseFeatureVector:
    entries: tuple[tuple[int, float], ...]
    hash_bits: int

    def __post_init__(self):
        prev = -1
        for index, value in self.entries:
            if index <= prev or not 0 <= index < (1 << self.hash_bits):
                raise ValueError("feature indices must be strictly increasing and in range")
            if value == 0.0:
                raise ValueError("zero-valued feature entry")
            prev = index

    def dot(self, weights: np.ndarray) -> float:
        return float(sum(weights[i] * v for i, v in self.entries))


@dataclass
class SegmenterConfig:
    hash_bits: int = 20
    cross_cap: int = 2048
    epochs: int = 8
    lr0: float = 0.5
    l2: float = 1e-4
    seed: int = 0


@dataclass
class LinearSegmenter:
    weights: np.ndarray
    bias: float
    hash_bits: int
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != 1 << self.hash_bits:
            raise ValueError("weight vector length must be 2**hash_bits")
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise ValueError("model weights must be finite")


def density_bucket(density: float) -> int:
    if density <= 0:
        return 0
    k = DENSITY_BUCKETS + math.floor(math.log2(density / DENSITY_CEILING))
    return min(max(k, 0), DENSITY_BUCKETS - 1)


def _side_features(prefix: str, text: str, lemmatizer) -> list[str]:
    toks = [lemmatizer(t.casefold()) for t in tokenize(text)]
    feats = [f"{prefix}u={t}" for t in toks]
    bigrams = [f"{a}|{b}" for a, b in zip(toks, toks[1:])]
    feats += [f"{prefix}b={g}" for g in bigrams]
    if toks:
        feats.append(f"{prefix}f={toks[0]}")
        feats.append(f"{prefix}l={toks[-1]}")
    if bigrams:
        feats.append(f"{prefix}fb={bigrams[0]}")
        feats.append(f"{prefix}lb={bigrams[-1]}")
    return feats


def base_features(inst: BoundaryInstance, lemmatizer=lemmatize) -> list[str]:
    """Ungrouped indicator features, before crossing and hashing."""
    feats = _side_features("a", inst.sent_a.text, lemmatizer)
    feats += _side_features("b", inst.sent_b.text, lemmatizer)
    feats.append(f"blk={int(inst.same_block)}")
    if inst.genre is not None:
        feats.append(f"gen={inst.genre}")
    if inst.density is not None:
        feats.append(f"den=b{density_bucket(inst.density)}")
    return feats


def _family(feature: str) -> str:
    return feature.split("=", 1)[0]


def raw_features(
    inst: BoundaryInstance, lemmatizer=lemmatize, cross_cap: int = 2048
) -> list[str]:
    """Base features plus quadratic crosses between distinct families.

    Crossing is family-level: every pair of base features from two
    different namespaces, capped at ``cross_cap`` crosses per instance
    (pairs enumerated in namespace order, so the cap is deterministic).
    """
    base = base_features(inst, lemmatizer)
    by_family: dict[str, list[str]] = {ns: [] for ns in NAMESPACES}
    for feat in base:
        by_family[_family(feat)].append(feat)
    feats = list(base)
    crosses = 0
    for i, ns_a in enumerate(NAMESPACES):
        for ns_b in NAMESPACES[i + 1 :]:
            for fa in by_family[ns_a]:
                for fb in by_family[ns_b]:
                    if crosses >= cross_cap:
                        return feats
                    feats.append(f"x&{fa}&{fb}")
                    crosses += 1
    return feats


def extract_boundary_features(
    inst: BoundaryInstance,
    lemmatizer=lemmatize,
    hash_bits: int = 20,
    cross_cap: int = 2048,
) -> SparseFeatureVector:
    weights: dict[int, float] = {}
    for feat in raw_features(inst, lemmatizer, cross_cap):
        idx = feature_bucket(feat, hash_bits)
        weights[idx] = weights.get(idx, 0.0) + 1.0
    entries = tuple(sorted(weights.items()))
    return SparseFeatureVector(entries=entries, hash_bits=hash_bits)


def hash_collision_rate(
    instances: list[BoundaryInstance],
    lemmatizer=lemmatize,
    hash_bits: int = 22,
    cross_cap: int = 2048,
) -> float:
    """Fraction of distinct raw features that share a bucket with another."""
    distinct: set[str] = set()
    for inst in instances:
        distinct.update(raw_features(inst, lemmatizer, cross_cap))
    if not distinct:
        return 0.0
    buckets = {feature_bucket(f, hash_bits) for f in distinct}
    return (len(distinct) - len(buckets)) / len(distinct)


def score_boundary(model: LinearSegmenter, vec: SparseFeatureVector) -> float:
    if vec.hash_bits != model.hash_bits:
        raise ValueError(
            f"feature hash_bits {vec.hash_bits} != model hash_bits {model.hash_bits}"
        )
    return vec.dot(model.weights) + model.bias


def predict_boundary(model: LinearSegmenter, vec: SparseFeatureVector) -> str:
    # Tie at exactly 0 merges.
    return NEW_TURN if score_boundary(model, vec) > 0 else SAME_TURN


def _label_to_y(label: str) -> float:
    return 1.0 if label == NEW_TURN else -1.0


def train_segmenter(
    instances: list[BoundaryInstance],
    config: SegmenterConfig | None = None,
    validation: list[BoundaryInstance] | None = None,
    lemmatizer=lemmatize,
) -> tuple[LinearSegmenter, float | None]:
    """Hinge-loss SGD with L2 and 1/t decay over seeded shuffled epochs.

    Returns the model and, when a validation split is given, its
    accuracy on that split. The per-epoch regularized objective is
    recorded in ``training_meta["epoch_losses"]``.
    """
    config = config or SegmenterConfig()
    if len(instances) < 2:
        raise ValueError("need at least 2 training instances")
    labels = {inst.label for inst in instances}
    if None in labels:
        raise ValueError("all training instances must be labeled")
    if len(labels) < 2:
        raise ValueError(f"training set has a single class: {labels.pop()}")

    vecs = [
        extract_boundary_features(i, lemmatizer, config.hash_bits, config.cross_cap)
        for i in instances
    ]
    ys = [_label_to_y(i.label) for i in instances]

    dim = 1 << config.hash_bits
    w = np.zeros(dim, dtype=np.float64)
    bias = 0.0
    scale = 1.0  # weights are scale * w; keeps the L2 decay O(nnz) per step
    rng = random.Random(config.seed)
    order = list(range(len(instances)))
    step = 0
    epoch_losses: list[float] = []

    def objective() -> float:
        full = w * scale
        hinge = 0.0
        for vec, y in zip(vecs, ys):
            hinge += max(0.0, 1.0 - y * (vec.dot(full) + bias))
        return hinge / len(vecs) + 0.5 * config.l2 * float(full @ full)

    for _ in range(config.epochs):
        rng.shuffle(order)
        for idx in order:
            step += 1
            lr = config.lr0 / (1.0 + config.lr0 * config.l2 * step)
            vec, y = vecs[idx], ys[idx]
            margin = y * (scale * vec.dot(w) + bias)
            scale *= 1.0 - lr * config.l2
            if scale < 1e-9:
                w *= scale
                scale = 1.0
            if margin < 1.0:
                for i, v in vec.entries:
                    w[i] += lr * y * v / scale
                bias += lr * y
        epoch_losses.append(objective())

    model = LinearSegmenter(
        weights=w * scale,
        bias=bias,
        hash_bits=config.hash_bits,
        training_meta={
            "epochs": config.epochs,
            "lr0": config.lr0,
            "l2": config.l2,
            "seed": config.seed,
            "cross_cap": config.cross_cap,
            "n_instances": len(instances),
            "epoch_losses": epoch_losses,
        },
    )
    val_acc = None
    if validation is not None:
        val_acc = segmenter_accuracy(model, validation, lemmatizer)
        model.training_meta["val_accuracy"] = val_acc
    return model, val_acc


def segmenter_accuracy(
    model: LinearSegmenter, instances: list[BoundaryInstance], lemmatizer=lemmatize
) -> float:
    cross_cap = model.training_meta.get("cross_cap", 2048)
    correct = 0
    for inst in instances:
        vec = extract_boundary_features(inst, lemmatizer, model.hash_bits, cross_cap)
        if predict_boundary(model, vec) == inst.label:
            correct += 1
    return correct / len(instances)


def build_boundary_instances(
    doc: SubtitleDocument, sentences: list[Sentence]
) -> list[BoundaryInstance]:
    """One unlabeled instance per consecutive sentence pair of a document."""
    density = sentence_density(doc, sentences)
    out = []
    for a, b in zip(sentences, sentences[1:]):
        out.append(
            BoundaryInstance(
                sent_a=a,
                sent_b=b,
                same_block=a.block_index == b.block_index,
                genre=doc.genre,
                density=density,
            )
        )
    return out


def segment_turns(
    doc: SubtitleDocument,
    sentences: list[Sentence],
    model: LinearSegmenter,
    lemmatizer=lemmatize,
) -> list[Turn]:
    """Greedy left-to-right merge scan; each sentence lands in one turn."""
    if not sentences:
        return []
    cross_cap = model.training_meta.get("cross_cap", 2048)
    density = sentence_density(doc, sentences)
    turns: list[Turn] = []
    group: list[Sentence] = [sentences[0]]

    def flush():
        turns.append(
            Turn(
                text=" ".join(s.text for s in group),
                start_ms=group[0].start_ms,
                end_ms=group[-1].end_ms,
                doc_id=doc.doc_id,
            )
        )

    for prev, cur in zip(sentences, sentences[1:]):
        inst = BoundaryInstance(
            sent_a=prev,
            sent_b=cur,
            same_block=prev.block_index == cur.block_index,
            genre=doc.genre,
            density=density,
        )
        vec = extract_boundary_features(inst, lemmatizer, model.hash_bits, cross_cap)
        if predict_boundary(model, vec) == NEW_TURN:
            flush()
            group = [cur]
        else:
            group.append(cur)
    flush()
    return turns


# --- fixture records and the model file ---


def boundary_record(inst: BoundaryInstance) -> dict:
    return {
        "text_a": inst.sent_a.text,
        "text_b": inst.sent_b.text,
        "same_block": inst.same_block,
        "genre": inst.genre,
        "density": inst.density,
        "label": inst.label,
    }


def boundary_from_record(record: dict) -> BoundaryInstance:
    block_b = 1 if record["same_block"] else 2
    return BoundaryInstance(
        sent_a=Sentence(record["text_a"], 1, 0, None, None),
        sent_b=Sentence(record["text_b"], block_b, 1, None, None),
        same_block=record["same_block"],
        genre=record.get("genre"),
        density=record.get("density"),
        label=record.get("label"),
    )


_MAGIC = b"SDSEG\x01"


def save_segmenter(model: LinearSegmenter, path: Path) -> None:
    """Little-endian layout: magic, hash_bits u32, bias f64, weights f64[],
    then a length-prefixed JSON blob with the training metadata."""
    meta = json.dumps(model.training_meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", model.hash_bits))
        fh.write(struct.pack("<d", model.bias))
        fh.write(struct.pack("<Q", len(model.weights)))
        fh.write(model.weights.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def load_segmenter(path: Path) -> LinearSegmenter:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"not a segmenter model file: {path}")
        hash_bits = struct.unpack("<I", fh.read(4))[0]
        bias = struct.unpack("<d", fh.read(8))[0]
        n = struct.unpack("<Q", fh.read(8))[0]
        weights = np.frombuffer(fh.read(n * 8), dtype="<f8").astype(np.float64)
        meta_len = struct.unpack("<I", fh.read(4))[0]
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
    return LinearSegmenter(weights=weights, bias=bias, hash_bits=hash_bits, training_meta=meta)
