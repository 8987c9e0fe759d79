"""Structured memory entries: construction from sessions, update, retrieval."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

from .dialogue import Session, session_text
from .embedding import cosine, is_zero
from .metrics import normalize_text
from .strategy import ExtractionStrategy

if TYPE_CHECKING:
    from .gateway import Gateway
    from .prompts import PromptSet

logger = logging.getLogger(__name__)

CONSTRUCTED = "constructed"
ADAPTER_SUPPLEMENT = "adapter_supplement"

DEFAULT_DUP_THRESHOLD = 0.95
DEFAULT_LINK_THRESHOLD = 0.60
DEFAULT_MAX_LINKS = 3
MAX_ENTRIES_PER_SESSION = 16

STOPWORDS = frozenset(
    "i me my we our you your he him his she her it its they them their is are was were be been being "
    "am do does did have has had and or but if of at by for with about to from in on into up out so "
    "that this these those what which who whom when where why how not no just very can will would "
    "should could there here as than then too also".split()
)


def frequency_keywords(text: str, n: int = 5) -> list[str]:
    """Most frequent non-stopword tokens, ties broken by first occurrence."""
    tokens = normalize_text(text)
    counts = Counter(t for t in tokens if t not in STOPWORDS)
    first = {}
    for i, t in enumerate(tokens):
        first.setdefault(t, i)
    return sorted(counts, key=lambda t: (-counts[t], first[t]))[:n]


@dataclass(frozen=True)
class SourceSpan:
    dialogue_id: str
    session_index: int
    first_turn_id: str = ""
    last_turn_id: str = ""


@dataclass(eq=False)
class MemoryEntry:
    entry_id: str
    summary: str
    keywords: list[str]
    timestamp_label: str
    source: Optional[SourceSpan]
    embedding: np.ndarray
    links: list[str] = field(default_factory=list)
    provenance: str = CONSTRUCTED
    created_seq: int = -1
    # supplements are not tied to a turn span, but remember which session produced them
    session_ref: Optional[tuple[str, int]] = None

    def __eq__(self, other):
        if not isinstance(other, MemoryEntry):
            return NotImplemented
        return (
            self.entry_id == other.entry_id
            and self.summary == other.summary
            and self.keywords == other.keywords
            and self.timestamp_label == other.timestamp_label
            and self.source == other.source
            and np.array_equal(self.embedding, other.embedding)
            and self.links == other.links
            and self.provenance == other.provenance
            and self.created_seq == other.created_seq
            and self.session_ref == other.session_ref
        )

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "summary": self.summary,
            "keywords": list(self.keywords),
            "timestamp_label": self.timestamp_label,
            "source": ADAPTER_SUPPLEMENT if self.source is None else {
                "dialogue_id": self.source.dialogue_id,
                "session_index": self.source.session_index,
                "first_turn_id": self.source.first_turn_id,
                "last_turn_id": self.source.last_turn_id,
            },
            "embedding": [float(x) for x in self.embedding],
            "links": list(self.links),
            "provenance": self.provenance,
            "created_seq": self.created_seq,
            "session_ref": None if self.session_ref is None else list(self.session_ref),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryEntry":
        src = d.get("source")
        ref = d.get("session_ref")
        return cls(
            entry_id=d["entry_id"],
            summary=d["summary"],
            keywords=list(d["keywords"]),
            timestamp_label=d["timestamp_label"],
            source=SourceSpan(**src) if isinstance(src, dict) else None,
            embedding=np.asarray(d["embedding"], dtype=np.float64),
            links=list(d["links"]),
            provenance=d["provenance"],
            created_seq=int(d["created_seq"]),
            session_ref=None if ref is None else (ref[0], int(ref[1])),
        )


@dataclass(frozen=True)
class UpdateEvent:
    action: str  # "inserted" | "deduplicated"
    summary: str
    entry_id: Optional[str] = None
    matched_id: Optional[str] = None
    similarity: Optional[float] = None
    links: tuple[str, ...] = ()


class MemoryStore:
    def __init__(
        self,
        dialogue_id: str = "",
        *,
        dup_threshold: float = DEFAULT_DUP_THRESHOLD,
        link_threshold: float = DEFAULT_LINK_THRESHOLD,
        max_links: int = DEFAULT_MAX_LINKS,
    ):
        self.dialogue_id = dialogue_id
        self.dup_threshold = dup_threshold
        self.link_threshold = link_threshold
        self.max_links = max_links
        self.entries: list[MemoryEntry] = []
        self.next_seq = 0
        self.events: list[UpdateEvent] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        if not isinstance(other, MemoryStore):
            return NotImplemented
        return (self.dialogue_id, self.next_seq, self.entries) == (other.dialogue_id, other.next_seq, other.entries)

    def get(self, entry_id: str) -> MemoryEntry:
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        raise KeyError(entry_id)

    def allocate(self) -> tuple[str, int]:
        seq = self.next_seq
        self.next_seq += 1
        return f"m{seq:06d}", seq

    def remove(self, entry_ids: Iterable[str]) -> None:
        doomed = set(entry_ids)
        self.entries = [e for e in self.entries if e.entry_id not in doomed]
        for e in self.entries:
            e.links = [l for l in e.links if l not in doomed]


def new_entry(
    summary: str,
    keywords: list[str],
    timestamp_label: str,
    embedding: np.ndarray,
    *,
    source: Optional[SourceSpan] = None,
    provenance: str = CONSTRUCTED,
    session_ref: Optional[tuple[str, int]] = None,
) -> MemoryEntry:
    """Build an entry with a placeholder id; ids are assigned on insertion."""
    if (provenance == ADAPTER_SUPPLEMENT) != (source is None):
        raise ValueError("supplements carry no source span and constructed entries need one")
    return MemoryEntry("", summary, list(keywords), timestamp_label, source, embedding,
                       provenance=provenance, session_ref=session_ref)


def parse_summaries(text: str) -> Optional[list[tuple[str, list[str]]]]:
    """Parse ``SUMMARY | kw1, kw2`` lines; ``None`` if no line has that shape."""
    out = []
    for line in text.splitlines():
        line = line.strip().lstrip("-*• ").strip()
        if "|" not in line:
            continue
        summary, _, kws = line.partition("|")
        summary = summary.strip()
        if not summary:
            continue
        keywords = [k.strip().lower() for k in kws.split(",") if k.strip()]
        out.append((summary, keywords))
    return out or None


def construct_session_memory(
    session: Session,
    strategy: ExtractionStrategy,
    gateway: "Gateway",
    embedder,
    *,
    dialogue_id: str = "",
    prompts: Optional["PromptSet"] = None,
    max_entries: int = MAX_ENTRIES_PER_SESSION,
) -> list[MemoryEntry]:
    if not session.turns:
        raise ValueError("cannot construct memory from an empty session")
    text = gateway.ask("memory_summarizer", strategy.render(prompts), session_text(session))
    parsed = parse_summaries(text)
    if parsed is None:
        raw = text.strip()
        logger.warning("session %s/%d: unparseable summarizer output, degraded to one raw entry",
                       dialogue_id, session.session_index)
        parsed = [(raw, frequency_keywords(raw))] if raw else []
    if len(parsed) > max_entries:
        logger.warning("session %s/%d: %d entries truncated to %d", dialogue_id, session.session_index,
                       len(parsed), max_entries)
        parsed = parsed[:max_entries]
    span = SourceSpan(dialogue_id, session.session_index, session.turns[0].turn_id, session.turns[-1].turn_id)
    return [
        new_entry(summary, keywords, session.date_label, embedder.embed(summary), source=span,
                  session_ref=(dialogue_id, session.session_index))
        for summary, keywords in parsed
    ]


def update_store(store: MemoryStore, new_entries: Iterable[MemoryEntry]) -> MemoryStore:
    """Insert entries, suppressing near-duplicates and linking to similar entries.

    Mutates and returns ``store``. Existing entries only ever gain links.
    """
    for entry in new_entries:
        scored = [(cosine(entry.embedding, e.embedding), e) for e in store.entries]
        best = max(scored, key=lambda p: (p[0], -p[1].created_seq), default=None)
        if best is not None and best[0] >= store.dup_threshold:
            event = UpdateEvent("deduplicated", entry.summary, matched_id=best[1].entry_id, similarity=best[0])
            store.events.append(event)
            logger.info("dedup: %r matches %s (cos=%.3f)", entry.summary[:60], best[1].entry_id, best[0])
            continue
        candidates = sorted(
            (p for p in scored if p[0] >= store.link_threshold),
            key=lambda p: (-p[0], p[1].created_seq),
        )[: store.max_links]
        entry.entry_id, entry.created_seq = store.allocate()
        entry.links = [e.entry_id for _, e in candidates]
        for _, e in candidates:
            e.links.append(entry.entry_id)
        store.entries.append(entry)
        store.events.append(UpdateEvent("inserted", entry.summary, entry_id=entry.entry_id, links=tuple(entry.links)))
        logger.debug("insert %s links=%s", entry.entry_id, entry.links)
    return store


def _rank_key(sim: float, entry: MemoryEntry):
    return (is_zero(entry.embedding), -sim, entry.created_seq)


def retrieve(store: MemoryStore, query: str, k: int, embedder) -> list[MemoryEntry]:
    """Top-``k`` entries by cosine to the query; ties go to the older entry."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0 or not store.entries:
        return []
    q = embedder.embed(query)
    ranked = sorted(store.entries, key=lambda e: _rank_key(cosine(q, e.embedding), e))
    return ranked[:k]


def render_context(entries: Iterable[MemoryEntry]) -> str:
    blocks = []
    for e in entries:
        lines = [f"[{e.timestamp_label}]" if e.timestamp_label else "[undated]", e.summary]
        if e.keywords:
            lines.append("keywords: " + ", ".join(e.keywords))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)
