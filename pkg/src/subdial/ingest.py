"""Parse subtitle files into timestamped sentence streams.

Two input formats are supported, both documented in ``docs/formats.md``:

* SRT: numbered cues with ``HH:MM:SS,mmm --> HH:MM:SS,mmm`` timing lines.
* A minimal block XML form, which doubles as the canonical on-disk
  serialization of a parsed document (``write_document`` /
  ``parse_subtitles(..., "xml")`` round-trip exactly).

Parsing is forgiving at block granularity: a malformed cue is skipped and
recorded in the :class:`ParseReport` instead of failing the document.
"""
from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from xml.etree import ElementTree
from xml.sax.saxutils import escape, quoteattr

_DATA_DIR = Path(__file__).parent / "data"

_TS_RE = re.compile(r"(\d{1,2}):(\d{1,2}):(\d{1,2})[,.](\d{1,3})")
_CUE_TIMING_RE = re.compile(
    r"^\s*(\d{1,2}:\d{1,2}:\d{1,2}[,.]\d{1,3})\s*-->\s*(\d{1,2}:\d{1,2}:\d{1,2}[,.]\d{1,3})"
)
_MARKUP_RE = re.compile(r"<[^>]*>|\{[^}]*\}")


@dataclass(frozen=True)
class SubtitleBlock:
    """One timing cue: an index, optional timestamps and its text lines."""

    index: int
    start_ms: int | None
    end_ms: int | None
    lines: tuple[str, ...]

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"block index must be >= 1, got {self.index}")
        if self.start_ms is not None and self.end_ms is not None and self.start_ms > self.end_ms:
            raise ValueError(f"block {self.index}: start_ms {self.start_ms} > end_ms {self.end_ms}")


@dataclass(frozen=True)
class SubtitleDocument:
    """A parsed subtitle file: ordered blocks plus file-level metadata."""

    doc_id: str
    blocks: tuple[SubtitleBlock, ...]
    language: str = "en"
    genre: str | None = None
    duration_ms: int | None = None

    def __post_init__(self):
        indices = [b.index for b in self.blocks]
        if indices != sorted(indices):
            raise ValueError(f"document {self.doc_id}: blocks out of index order")
        if self.duration_ms is not None:
            last = self.last_end_ms()
            if last is not None and self.duration_ms < last:
                raise ValueError(
                    f"document {self.doc_id}: duration_ms {self.duration_ms} < last cue end {last}"
                )

    def last_end_ms(self) -> int | None:
        ends = [b.end_ms for b in self.blocks if b.end_ms is not None]
        return max(ends) if ends else None


@dataclass(frozen=True)
class Sentence:
    """A single sentence, tied back to the block it came from."""

    text: str
    block_index: int
    order_in_block: int
    start_ms: int | None
    end_ms: int | None

    def __post_init__(self):
        if not self.text or self.text != self.text.strip():
            raise ValueError(f"sentence text must be non-empty and trimmed: {self.text!r}")


@dataclass
class ParseReport:
    """Recoverable per-block problems encountered while parsing."""

    doc_id: str
    entries: list[tuple[int, str]] = field(default_factory=list)

    def add(self, block_number: int, message: str) -> None:
        self.entries.append((block_number, message))

    def __len__(self) -> int:
        return len(self.entries)


def parse_timestamp_ms(text: str) -> int:
    """``HH:MM:SS,mmm`` (or ``.mmm``) to milliseconds."""
    m = _TS_RE.fullmatch(text.strip())
    if not m:
        raise ValueError(f"bad timestamp: {text!r}")
    hh, mm, ss = (int(g) for g in m.groups()[:3])
    ms = int(m.group(4).ljust(3, "0"))
    return ((hh * 60 + mm) * 60 + ss) * 1000 + ms


def format_timestamp_ms(ms: int) -> str:
    hh, rest = divmod(ms, 3_600_000)
    mm, rest = divmod(rest, 60_000)
    ss, mmm = divmod(rest, 1000)
    return f"{hh:02d}:{mm:02d}:{ss:02d},{mmm:03d}"


def strip_markup(line: str) -> str:
    """Remove ``<i>``-style and ``{\\an8}``-style formatting tags."""
    return _MARKUP_RE.sub("", line).strip()


def parse_subtitles(
    raw: bytes,
    fmt: str,
    doc_id: str = "",
    lossy: bool = False,
) -> tuple[SubtitleDocument, ParseReport]:
    """Parse raw bytes in the given format ("srt" or "xml").

    Returns the document plus a report of skipped/malformed blocks. An
    empty file parses to a document with zero blocks. Non-UTF-8 input
    raises unless ``lossy`` allows replacement decoding.
    """
    text = raw.decode("utf-8", errors="replace" if lossy else "strict")
    if text.startswith("﻿"):
        text = text[1:]
    if fmt == "srt":
        return _parse_srt(text, doc_id)
    if fmt == "xml":
        return _parse_block_xml(text, doc_id)
    raise ValueError(f"unknown subtitle format: {fmt!r}")


def _parse_srt(text: str, doc_id: str) -> tuple[SubtitleDocument, ParseReport]:
    report = ParseReport(doc_id)
    blocks: list[SubtitleBlock] = []
    raw_cues = re.split(r"\n\s*\n", text.replace("\r\n", "\n").replace("\r", "\n"))
    cue_number = 0
    next_index = 1
    for raw in raw_cues:
        lines = [ln for ln in raw.split("\n")]
        while lines and not lines[0].strip():
            lines.pop(0)
        while lines and not lines[-1].strip():
            lines.pop()
        if not lines:
            continue
        cue_number += 1
        # Index line is optional in the wild; a timing line may come first.
        if _CUE_TIMING_RE.match(lines[0]):
            timing_line = lines[0]
            body = lines[1:]
        else:
            if not lines[0].strip().isdigit():
                report.add(cue_number, f"bad cue header: {lines[0].strip()!r}")
                continue
            if len(lines) < 2:
                report.add(cue_number, "cue has no timing line")
                continue
            timing_line = lines[1]
            body = lines[2:]
        m = _CUE_TIMING_RE.match(timing_line)
        if not m:
            report.add(cue_number, f"bad timing line: {timing_line.strip()!r}")
            continue
        start_ms = parse_timestamp_ms(m.group(1))
        end_ms = parse_timestamp_ms(m.group(2))
        if start_ms > end_ms:
            report.add(cue_number, f"start after end: {timing_line.strip()!r}")
            continue
        cleaned = tuple(s for s in (strip_markup(ln) for ln in body) if s)
        if not cleaned:
            report.add(cue_number, "cue text empty after markup stripping")
            continue
        blocks.append(SubtitleBlock(next_index, start_ms, end_ms, cleaned))
        next_index += 1
    return SubtitleDocument(doc_id=doc_id, blocks=tuple(blocks)), report


def _parse_block_xml(text: str, doc_id: str) -> tuple[SubtitleDocument, ParseReport]:
    root = ElementTree.fromstring(text) if text.strip() else None
    report = ParseReport(doc_id)
    if root is None:
        return SubtitleDocument(doc_id=doc_id, blocks=()), report
    if root.tag != "document":
        raise ValueError(f"expected <document> root, got <{root.tag}>")
    attrs = root.attrib
    doc_id = attrs.get("id", doc_id)
    duration = int(attrs["duration_ms"]) if "duration_ms" in attrs else None
    blocks: list[SubtitleBlock] = []
    next_index = 1
    for n, el in enumerate(root.iter("block"), start=1):
        try:
            start = parse_timestamp_ms(el.attrib["start"]) if "start" in el.attrib else None
            end = parse_timestamp_ms(el.attrib["end"]) if "end" in el.attrib else None
        except ValueError as exc:
            report.add(n, str(exc))
            continue
        lines = tuple(
            s for s in ((ln.text or "").strip() for ln in el.iter("line")) if s
        )
        if not lines:
            report.add(n, "block has no text lines")
            continue
        index = int(el.attrib["index"]) if "index" in el.attrib else next_index
        try:
            blocks.append(SubtitleBlock(index, start, end, lines))
        except ValueError as exc:
            report.add(n, str(exc))
            continue
        next_index = index + 1
    doc = SubtitleDocument(
        doc_id=doc_id,
        blocks=tuple(blocks),
        language=attrs.get("language", "en"),
        genre=attrs.get("genre"),
        duration_ms=duration,
    )
    return doc, report


def write_document(doc: SubtitleDocument) -> bytes:
    """Canonical XML serialization; re-parsing yields an identical document."""
    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="utf-8"?>\n')
    attrs = [f"id={quoteattr(doc.doc_id)}", f"language={quoteattr(doc.language)}"]
    if doc.genre is not None:
        attrs.append(f"genre={quoteattr(doc.genre)}")
    if doc.duration_ms is not None:
        attrs.append(f'duration_ms="{doc.duration_ms}"')
    out.write(f"<document {' '.join(attrs)}>\n")
    for block in doc.blocks:
        battrs = [f'index="{block.index}"']
        if block.start_ms is not None:
            battrs.append(f'start="{format_timestamp_ms(block.start_ms)}"')
        if block.end_ms is not None:
            battrs.append(f'end="{format_timestamp_ms(block.end_ms)}"')
        out.write(f"  <block {' '.join(battrs)}>\n")
        for line in block.lines:
            out.write(f"    <line>{escape(line)}</line>\n")
        out.write("  </block>\n")
    out.write("</document>\n")
    return out.getvalue().encode("utf-8")


def load_abbreviations(path: Path | None = None) -> frozenset[str]:
    """Sentence-splitting guard list; defaults to the shipped file."""
    path = path or (_DATA_DIR / "abbreviations.txt")
    entries = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip().casefold()
        if line and not line.startswith("#"):
            entries.add(line)
    return frozenset(entries)


_DEFAULT_ABBREVIATIONS = None


def default_abbreviations() -> frozenset[str]:
    global _DEFAULT_ABBREVIATIONS
    if _DEFAULT_ABBREVIATIONS is None:
        _DEFAULT_ABBREVIATIONS = load_abbreviations()
    return _DEFAULT_ABBREVIATIONS


_TERMINALS = ".!?…"
_CLOSERS = "\"'”’)]"


def split_sentences_in_text(text: str, abbreviations: frozenset[str]) -> list[str]:
    """Split one block's text into sentences on terminal punctuation.

    A period does not end a sentence when the word before it is on the
    abbreviation guard list, is a single initial ("J."), or is itself
    dotted ("e.g."). Text without any terminal punctuation is one
    sentence. Runs of terminals (``...``, ``?!``) stay attached to the
    sentence they close.
    """
    sentences = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in _TERMINALS:
            j = i
            while j + 1 < n and text[j + 1] in _TERMINALS:
                j += 1
            while j + 1 < n and text[j + 1] in _CLOSERS:
                j += 1
            at_break = j + 1 >= n or text[j + 1].isspace()
            guarded = False
            if ch == "." and i == j:
                word = re.search(r"[\w.']+$", text[start : i + 1])
                if word:
                    w = word.group(0).casefold().rstrip(".")
                    if w in abbreviations or re.fullmatch(r"\w", w) or "." in w:
                        guarded = True
            if at_break and not guarded:
                piece = text[start : j + 1].strip()
                if piece:
                    sentences.append(piece)
                start = j + 1
            i = j + 1
        else:
            i += 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def segment_sentences(
    doc: SubtitleDocument,
    abbreviations: frozenset[str] | None = None,
) -> list[Sentence]:
    """Split every block into sentences; sentences never span blocks."""
    abbreviations = abbreviations if abbreviations is not None else default_abbreviations()
    out: list[Sentence] = []
    for block in doc.blocks:
        text = " ".join(block.lines)
        for order, piece in enumerate(split_sentences_in_text(text, abbreviations)):
            out.append(
                Sentence(
                    text=piece,
                    block_index=block.index,
                    order_in_block=order,
                    start_ms=block.start_ms,
                    end_ms=block.end_ms,
                )
            )
    return out


def sentence_density(doc: SubtitleDocument, sentences: list[Sentence]) -> float | None:
    """Sentences per second, or None when the duration is unknown."""
    duration_ms = doc.duration_ms if doc.duration_ms is not None else doc.last_end_ms()
    if duration_ms is None or duration_ms <= 0:
        return None
    if not sentences:
        return 0.0
    return len(sentences) / (duration_ms / 1000.0)


def sentence_record(doc_id: str, sentence: Sentence) -> dict:
    return {
        "doc_id": doc_id,
        "block_index": sentence.block_index,
        "order": sentence.order_in_block,
        "start_ms": sentence.start_ms,
        "end_ms": sentence.end_ms,
        "text": sentence.text,
    }


def sentence_from_record(record: dict) -> Sentence:
    return Sentence(
        text=record["text"],
        block_index=record["block_index"],
        order_in_block=record["order"],
        start_ms=record["start_ms"],
        end_ms=record["end_ms"],
    )


def load_metadata(path: Path) -> dict[str, tuple[str | None, int | None]]:
    """Read the optional ``metadata.tsv`` sidecar: doc_id, genre, duration_ms."""
    meta: dict[str, tuple[str | None, int | None]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise ValueError(f"metadata line needs 3 tab-separated fields: {line!r}")
        doc_id, genre, duration = parts[0], parts[1] or None, parts[2].strip()
        meta[doc_id] = (genre, int(duration) if duration else None)
    return meta


def apply_metadata(
    doc: SubtitleDocument, meta: dict[str, tuple[str | None, int | None]]
) -> SubtitleDocument:
    if doc.doc_id not in meta:
        return doc
    genre, duration_ms = meta[doc.doc_id]
    return SubtitleDocument(
        doc_id=doc.doc_id,
        blocks=doc.blocks,
        language=doc.language,
        genre=genre if genre is not None else doc.genre,
        duration_ms=duration_ms if duration_ms is not None else doc.duration_ms,
    )
