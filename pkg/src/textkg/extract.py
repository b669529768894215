"""Stage 1: split source documents into chunks and extract per-chunk graphs.

Each chunk gets two model calls: one for its entity list and one for the
subject-predicate-object triples grounded in that list. Chunks are processed
independently and failures on individual chunks are recorded rather than
aborting the run.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import PipelineError
from .gateway import ModelGateway
from .graph import Triple

logger = logging.getLogger(__name__)

DEFAULT_MAX_CHARS = 8000
MIN_MAX_CHARS = 200

_PARAGRAPH_RE = re.compile(r"\n\s*\n")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
_WHITESPACE_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class SourceChunk:
    """A contiguous slice of one document; ``id`` is stable across re-runs."""

    id: str
    text: str
    doc_id: str
    start: int
    end: int


@dataclass(frozen=True)
class ChunkGraph:
    """Entities and triples extracted from one chunk (provenance = chunk id)."""

    chunk_id: str
    entities: tuple[str, ...]
    triples: tuple[Triple, ...]
    text: str = ""

    def to_jsonable(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "entities": list(self.entities),
            "triples": [[t.subject, t.predicate, t.object] for t in self.triples],
            "text": self.text,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "ChunkGraph":
        chunk_id = data["chunk_id"]
        return cls(
            chunk_id=chunk_id,
            entities=tuple(data["entities"]),
            triples=tuple(Triple(s, p, o, chunk_id) for s, p, o in data["triples"]),
            text=data.get("text", ""),
        )


@dataclass(frozen=True)
class ChunkFailure:
    chunk_id: str
    error: str


@dataclass
class GenerationResult:
    """Per-chunk graphs in input order, plus records for chunks that failed."""

    chunk_graphs: list[ChunkGraph] = field(default_factory=list)
    failures: list[ChunkFailure] = field(default_factory=list)


def _split_point(window: str, limit: int) -> int:
    """Rightmost preferred split inside window[:limit]: paragraph, sentence, space."""
    best = 0
    for match in _PARAGRAPH_RE.finditer(window, 0, limit + 1):
        if match.start() > 0:
            best = match.start()
    if best:
        return best
    for match in _SENTENCE_RE.finditer(window, 0, limit + 1):
        if 0 < match.start() <= limit:
            best = match.start()
    if best:
        return best
    for match in _WHITESPACE_RE.finditer(window, 0, limit + 1):
        if 0 < match.start() <= limit:
            best = match.start()
    return best or limit


def chunk_text(
    document: str, max_chars: int = DEFAULT_MAX_CHARS, doc_id: str = "doc"
) -> list[SourceChunk]:
    """Split a document into ordered, non-overlapping chunks of <= max_chars.

    Split points prefer paragraph breaks, then sentence ends, then any
    whitespace; a hard cut is the last resort. Chunk texts are exact document
    slices with boundary whitespace trimmed, so joining them recovers the
    document minus inter-chunk whitespace.
    """
    if max_chars < MIN_MAX_CHARS:
        raise ValueError(f"max_chars must be >= {MIN_MAX_CHARS}, got {max_chars}")
    chunks: list[SourceChunk] = []
    cursor = 0
    length = len(document)
    while cursor < length:
        window = document[cursor:]
        if not window.strip():
            break
        if len(window) <= max_chars:
            cut = len(window)
        else:
            cut = _split_point(window, max_chars)
        piece = window[:cut]
        if piece.strip():
            leading = len(piece) - len(piece.lstrip())
            trailing = len(piece) - len(piece.rstrip())
            start = cursor + leading
            end = cursor + len(piece) - trailing
            chunks.append(
                SourceChunk(
                    id=f"{doc_id}:{start}-{end}",
                    text=document[start:end],
                    doc_id=doc_id,
                    start=start,
                    end=end,
                )
            )
        cursor += cut
    return chunks


def _extract_one(chunk: SourceChunk, gateway: ModelGateway) -> ChunkGraph:
    entities = gateway.extract_entities(chunk.text)
    triples: list[Triple] = []
    if entities:
        raw_triples = gateway.extract_relations(chunk.text, entities)
        triples = [replace(t, source_chunk=chunk.id) for t in raw_triples]
    # Repair: endpoints the model used but never listed as entities.
    known = list(entities)
    known_set = set(known)
    for t in triples:
        for endpoint in (t.subject, t.object):
            if endpoint not in known_set:
                known.append(endpoint)
                known_set.add(endpoint)
    return ChunkGraph(
        chunk_id=chunk.id,
        entities=tuple(known),
        triples=tuple(dict.fromkeys(triples)),
        text=chunk.text,
    )


def generate(
    chunks: Sequence[SourceChunk], gateway: ModelGateway, jobs: int = 1
) -> GenerationResult:
    """Run the two-step extraction over every chunk; collect results in order."""
    result = GenerationResult()
    if not chunks:
        return result

    def run(chunk: SourceChunk):
        try:
            return _extract_one(chunk, gateway)
        except Exception as exc:  # noqa: BLE001 - converted to a failure record
            logger.warning("chunk %s failed: %s", chunk.id, exc)
            return ChunkFailure(chunk_id=chunk.id, error=str(exc))

    if jobs <= 1:
        outcomes = [run(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, chunks))

    for outcome in outcomes:
        if isinstance(outcome, ChunkFailure):
            result.failures.append(outcome)
        else:
            result.chunk_graphs.append(outcome)

    if chunks and not result.chunk_graphs:
        raise PipelineError(
            f"extraction failed on all {len(chunks)} chunks; "
            f"first error: {result.failures[0].error}"
        )
    return result


def read_corpus(paths: Iterable[str | Path]) -> list[tuple[str, str]]:
    """Load input documents: plain-text files, or .jsonl rows {"id", "text"}."""
    documents: list[tuple[str, str]] = []
    for path in paths:
        path = Path(path)
        if path.suffix == ".jsonl":
            for line_no, line in enumerate(
                path.read_text(encoding="utf-8").splitlines(), start=1
            ):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    documents.append((str(row["id"]), row["text"]))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise PipelineError(
                        f"{path}:{line_no}: malformed corpus row: {exc}"
                    ) from exc
        else:
            documents.append((path.stem, path.read_text(encoding="utf-8")))
    return documents
