"""Distribution, transition, and flow aggregates over a labeled corpus.

A labeled corpus is a mapping from dialogue id to the per-turn label
sequence. Every turn must carry a taxonomy label; gaps are treated as
errors, not silently skipped, so plots never under-report.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .assembly import Dialogue
from .labeling import TurnLabel
from .taxonomy import LabelTaxonomy

log = logging.getLogger(__name__)

DEFAULT_FLOW_DEPTH = 4
# Dense layers are unreadable in a sankey; exports keep the heaviest
# nodes per layer unless told otherwise.
DEFAULT_TOP_PER_LAYER = 10

SANKEY = "sankey_records"
DOT = "dot"

LabeledCorpus = Mapping[str, Sequence[str]]


def corpus_from_turn_labels(
    turn_labels: Iterable[TurnLabel],
    dialogues: Iterable[Dialogue] | None = None,
) -> dict[str, tuple[str, ...]]:
    """Group flat turn labels into per-dialogue label sequences.

    When `dialogues` is given, every turn of every dialogue must be
    covered; otherwise only internal gaps are detectable.
    """
    slots: dict[str, dict[int, str]] = {}
    for tl in turn_labels:
        per = slots.setdefault(tl.dialogue_id, {})
        if tl.turn_index in per:
            raise ValueError(
                f"duplicate label for turn {tl.turn_index} of {tl.dialogue_id}"
            )
        per[tl.turn_index] = tl.label

    lengths = {d.dialogue_id: len(d.turns) for d in dialogues} if dialogues else None
    if lengths is not None:
        for dialogue_id in lengths:
            slots.setdefault(dialogue_id, {})

    corpus: dict[str, tuple[str, ...]] = {}
    for dialogue_id, per in slots.items():
        length = max(per) + 1 if per else 0
        if lengths is not None:
            if dialogue_id not in lengths:
                raise ValueError(f"labels for unknown dialogue {dialogue_id}")
            length = max(length, lengths[dialogue_id])
        missing = [i for i in range(length) if i not in per]
        if missing:
            raise ValueError(
                f"dialogue {dialogue_id} has unlabeled turns {missing}"
            )
        corpus[dialogue_id] = tuple(per[i] for i in range(length))
    return corpus


# --- distribution --------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class LabelCount:
    label: str
    count: int
    log10_count: float


def label_distribution(
    corpus: LabeledCorpus, taxonomy: LabelTaxonomy
) -> list[LabelCount]:
    """Count turns per label, in taxonomy order, with log-scale values."""
    counts: Counter[str] = Counter()
    for dialogue_id, labels in corpus.items():
        for label in labels:
            if label not in taxonomy:
                raise ValueError(
                    f"dialogue {dialogue_id} carries unknown label {label!r}"
                )
            counts[label] += 1
    out = []
    for name in taxonomy.names():
        n = counts[name]
        out.append(LabelCount(name, n, math.log10(n) if n else float("nan")))
    return out


def export_distribution(counts: Sequence[LabelCount]) -> bytes:
    lines = [f"{c.label}\t{c.count}\t{c.log10_count:.6f}" for c in counts]
    return "".join(line + "\n" for line in lines).encode("utf-8")


# --- adjacent-turn transitions ---------------------------------------------------


@dataclass(frozen=True)
class TransitionMatrix:
    """Counts of adjacent-turn label pairs, rows = earlier turn."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise ValueError("counts must be square over the label set")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    def total(self) -> int:
        return int(self.counts.sum())

    def pair_count(self, src: str, dst: str) -> int:
        i = self.labels.index(src)
        j = self.labels.index(dst)
        return int(self.counts[i, j])


def transition_matrix(
    corpus: LabeledCorpus, taxonomy: LabelTaxonomy
) -> TransitionMatrix:
    n = len(taxonomy)
    counts = np.zeros((n, n), dtype=np.int64)
    for labels in corpus.values():
        for a, b in zip(labels, labels[1:]):
            counts[taxonomy.index(a), taxonomy.index(b)] += 1
    return TransitionMatrix(taxonomy.names(), counts)


# --- emotion-intent flows --------------------------------------------------------


@dataclass(frozen=True, slots=True, order=True)
class FlowNode:
    position: int  # 1-based turn position
    label: str

    def __post_init__(self):
        if self.position < 1:
            raise ValueError("positions start at 1")

    def name(self) -> str:
        return f"p{self.position}:{self.label}"


@dataclass(frozen=True, slots=True, order=True)
class FlowEdge:
    source: FlowNode
    target: FlowNode
    count: int

    def __post_init__(self):
        if self.target.position != self.source.position + 1:
            raise ValueError("edges must advance exactly one turn position")
        if self.count < 1:
            raise ValueError("edge counts start at 1")


@dataclass(frozen=True)
class FlowGraph:
    root: str
    max_depth: int
    nodes: tuple[tuple[FlowNode, int], ...]
    edges: tuple[FlowEdge, ...]

    def __post_init__(self):
        totals: dict[int, int] = {}
        seen = set()
        for node, count in self.nodes:
            if count < 1:
                raise ValueError("node counts start at 1")
            if not 1 <= node.position <= self.max_depth:
                raise ValueError(f"node {node.name()} outside depth {self.max_depth}")
            seen.add(node)
            totals[node.position] = totals.get(node.position, 0) + count
        outgoing: dict[int, int] = {}
        for edge in self.edges:
            if edge.source not in seen or edge.target not in seen:
                raise ValueError("edge endpoints must be graph nodes")
            outgoing[edge.source.position] = (
                outgoing.get(edge.source.position, 0) + edge.count
            )
        for position, total in outgoing.items():
            # dialogues may end, so flow out of a layer never exceeds it
            if total > totals.get(position, 0):
                raise ValueError(
                    f"outgoing count at position {position} exceeds layer total"
                )

    def node_count(self, position: int, label: str) -> int:
        for node, count in self.nodes:
            if node.position == position and node.label == label:
                return count
        return 0

    def layer_total(self, position: int) -> int:
        return sum(c for node, c in self.nodes if node.position == position)


def flow_paths(
    corpus: LabeledCorpus,
    root: str,
    taxonomy: LabelTaxonomy,
    max_depth: int = DEFAULT_FLOW_DEPTH,
) -> FlowGraph:
    """Aggregate label paths over dialogues whose first turn is `root`."""
    if root not in taxonomy:
        raise ValueError(f"unknown root label {root!r}")
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    node_counts: Counter[FlowNode] = Counter()
    edge_counts: Counter[tuple[FlowNode, FlowNode]] = Counter()
    qualifying = 0
    for labels in corpus.values():
        if not labels or labels[0] != root:
            continue
        qualifying += 1
        window = labels[:max_depth]
        for i, label in enumerate(window):
            node_counts[FlowNode(i + 1, label)] += 1
        for i in range(len(window) - 1):
            edge_counts[(FlowNode(i + 1, window[i]), FlowNode(i + 2, window[i + 1]))] += 1
    if qualifying == 0:
        log.info("no dialogue opens with %r", root)
    nodes = tuple(sorted(node_counts.items()))
    edges = tuple(FlowEdge(s, t, c) for (s, t), c in sorted(edge_counts.items()))
    return FlowGraph(root, max_depth, nodes, edges)


def _truncated(graph: FlowGraph, top_per_layer: int | None) -> FlowGraph:
    if top_per_layer is None:
        return graph
    if top_per_layer < 1:
        raise ValueError("top_per_layer must be at least 1")
    by_position: dict[int, list[tuple[FlowNode, int]]] = {}
    for node, count in graph.nodes:
        by_position.setdefault(node.position, []).append((node, count))
    keep = set()
    for rows in by_position.values():
        rows.sort(key=lambda nc: (-nc[1], nc[0].label))
        keep.update(node for node, _ in rows[:top_per_layer])
    return FlowGraph(
        graph.root,
        graph.max_depth,
        tuple((n, c) for n, c in graph.nodes if n in keep),
        tuple(e for e in graph.edges if e.source in keep and e.target in keep),
    )


def export_flow(
    graph: FlowGraph, fmt: str, top_per_layer: int | None = DEFAULT_TOP_PER_LAYER
) -> bytes:
    graph = _truncated(graph, top_per_layer)
    if fmt == SANKEY:
        lines = [
            f"{e.source.name()}\t{e.target.name()}\t{e.count}" for e in graph.edges
        ]
    elif fmt == DOT:
        lines = ["digraph flows {"]
        for node, count in graph.nodes:
            lines.append(f'  "{node.name()}" [count={count}];')
        for e in graph.edges:
            lines.append(f'  "{e.source.name()}" -> "{e.target.name()}" [label={e.count}];')
        lines.append("}")
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return "".join(line + "\n" for line in lines).encode("utf-8")
