"""Dialogue corpus types plus LoCoMo and native JSON loaders."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

logger = logging.getLogger(__name__)

CATEGORIES = ("multi_hop", "temporal", "open_domain", "single_hop", "other")
LOCOMO_CATEGORY_CODES = {1: "multi_hop", 2: "temporal", 3: "open_domain", 4: "single_hop"}


class CorpusError(ValueError):
    """A corpus file could not be parsed or is missing required data."""

    def __init__(self, message: str, *, offset: int | None = None, key: str | None = None,
                 dialogue_index: int | None = None):
        super().__init__(message)
        self.offset = offset
        self.key = key
        self.dialogue_index = dialogue_index


@dataclass(frozen=True)
class Turn:
    turn_id: str
    speaker: str
    text: str

    def __post_init__(self):
        if not self.speaker:
            raise ValueError(f"turn {self.turn_id!r} has an empty speaker")


@dataclass(frozen=True)
class Session:
    session_index: int
    date_label: str = ""
    turns: tuple[Turn, ...] = ()

    def __post_init__(self):
        if self.session_index < 1:
            raise ValueError("session_index must be >= 1")
        object.__setattr__(self, "turns", tuple(self.turns))
        ids = [t.turn_id for t in self.turns]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate turn_id in session {self.session_index}")


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    sessions: tuple[Session, ...]

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        if not self.sessions:
            raise ValueError(f"dialogue {self.dialogue_id!r} has no sessions")
        idx = [s.session_index for s in self.sessions]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"dialogue {self.dialogue_id!r}: session_index not strictly increasing")


@dataclass(frozen=True)
class BenchmarkQuestion:
    question: str
    gold_answer: str
    category: str = "other"
    evidence_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.question or not self.gold_answer:
            raise ValueError("benchmark question and gold answer must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        object.__setattr__(self, "evidence_ids", tuple(self.evidence_ids))


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[Dialogue, ...] = ()
    questions: dict[str, tuple[BenchmarkQuestion, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dialogues", tuple(self.dialogues))
        object.__setattr__(self, "questions", {k: tuple(v) for k, v in self.questions.items()})
        ids = [d.dialogue_id for d in self.dialogues]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate dialogue_id in corpus")
        unknown = set(self.questions) - set(ids)
        if unknown:
            raise ValueError(f"questions reference unknown dialogues: {sorted(unknown)}")

    def dialogue(self, dialogue_id: str) -> Dialogue:
        for d in self.dialogues:
            if d.dialogue_id == dialogue_id:
                return d
        raise KeyError(dialogue_id)

    def category_counts(self) -> dict[str, int]:
        counts = Counter(q.category for qs in self.questions.values() for q in qs)
        return {c: counts.get(c, 0) for c in CATEGORIES}

    def to_dict(self) -> dict:
        return {
            "dialogues": [
                {
                    "dialogue_id": d.dialogue_id,
                    "sessions": [
                        {
                            "session_index": s.session_index,
                            "date_label": s.date_label,
                            "turns": [{"turn_id": t.turn_id, "speaker": t.speaker, "text": t.text} for t in s.turns],
                        }
                        for s in d.sessions
                    ],
                }
                for d in self.dialogues
            ],
            "questions": {
                did: [
                    {"question": q.question, "gold_answer": q.gold_answer, "category": q.category,
                     "evidence_ids": list(q.evidence_ids)}
                    for q in qs
                ]
                for did, qs in self.questions.items()
            },
        }


def session_text(session: Session) -> str:
    lines = [f"DATE: {session.date_label}"] if session.date_label else []
    lines.extend(f"{t.speaker}: {t.text}" for t in session.turns)
    return "\n".join(lines)


def corpus_digest(corpus: Corpus) -> str:
    blob = json.dumps(corpus.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _parse_json(path: Path):
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: not UTF-8 at byte {exc.start}", offset=exc.start) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise CorpusError(f"{path}: invalid JSON at byte {offset}: {exc.msg}", offset=offset) from exc


def _require(obj: dict, key: str, dialogue_index: int):
    if not isinstance(obj, dict) or key not in obj:
        raise CorpusError(f"missing required key {key!r} in dialogue {dialogue_index}", key=key,
                          dialogue_index=dialogue_index)
    return obj[key]


def _corpus_from_native(doc, source: str) -> Corpus:
    if not isinstance(doc, dict):
        raise CorpusError(f"{source}: top level must be an object", key="dialogues")
    if "dialogues" not in doc:
        raise CorpusError(f"{source}: missing required key 'dialogues'", key="dialogues")
    dialogues = []
    for i, d in enumerate(doc["dialogues"]):
        sessions = []
        for s in _require(d, "sessions", i):
            turns = tuple(
                Turn(str(_require(t, "turn_id", i)), str(_require(t, "speaker", i)), str(_require(t, "text", i)))
                for t in _require(s, "turns", i)
            )
            sessions.append(Session(int(_require(s, "session_index", i)), str(s.get("date_label", "")), turns))
        dialogues.append(Dialogue(str(_require(d, "dialogue_id", i)), tuple(sessions)))

    index_of = {d.dialogue_id: i for i, d in enumerate(dialogues)}
    questions = {}
    for did, qs in (doc.get("questions") or {}).items():
        i = index_of.get(did, -1)
        parsed = []
        for q in qs:
            category = q.get("category", "other")
            if category not in CATEGORIES:
                logger.warning("dialogue %s: unknown category %r mapped to 'other'", did, category)
                category = "other"
            parsed.append(BenchmarkQuestion(
                str(_require(q, "question", i)), str(_require(q, "gold_answer", i)), category,
                tuple(str(e) for e in q.get("evidence_ids", ())),
            ))
        questions[did] = tuple(parsed)
    return Corpus(tuple(dialogues), questions)


_SESSION_KEY = re.compile(r"^session_(\d+)$")


def _corpus_from_locomo(doc, source: str) -> Corpus:
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise CorpusError(f"{source}: expected a list of LoCoMo samples")
    dialogues, questions = [], {}
    code_counts: Counter = Counter()
    for i, sample in enumerate(doc):
        conv = _require(sample, "conversation", i)
        did = str(sample.get("sample_id", f"dialogue-{i}"))
        indices = sorted(int(m.group(1)) for k in conv if (m := _SESSION_KEY.match(k)))
        sessions = []
        for n in indices:
            turns = []
            for j, t in enumerate(conv[f"session_{n}"]):
                turns.append(Turn(
                    str(t.get("dia_id") or f"D{n}:{j + 1}"),
                    str(_require(t, "speaker", i)),
                    str(t.get("text", "")),
                ))
            sessions.append(Session(n, str(conv.get(f"session_{n}_date_time", "")), tuple(turns)))
        if not sessions:
            raise CorpusError(f"dialogue {i} has no session_<n> entries", key="session_1", dialogue_index=i)
        dialogues.append(Dialogue(did, tuple(sessions)))

        parsed = []
        for q in _require(sample, "qa", i):
            code = q.get("category")
            code_counts[code] += 1
            category = LOCOMO_CATEGORY_CODES.get(code, "other")
            if "answer" in q:
                gold = q["answer"]
            elif "adversarial_answer" in q:
                gold = q["adversarial_answer"]
            else:
                raise CorpusError(f"missing required key 'answer' in dialogue {i}", key="answer", dialogue_index=i)
            parsed.append(BenchmarkQuestion(
                str(_require(q, "question", i)), str(gold), category,
                tuple(str(e) for e in q.get("evidence", ()) or ()),
            ))
        questions[did] = tuple(parsed)

    for code, n in sorted(code_counts.items(), key=lambda kv: str(kv[0])):
        mapped = LOCOMO_CATEGORY_CODES.get(code)
        if mapped is None:
            logger.warning("category code %r (%d questions) has no mapping; counted as 'other'", code, n)
        else:
            logger.info("category code %r -> %s: %d questions", code, mapped, n)
    return Corpus(tuple(dialogues), questions)


def load_corpus(path: Union[str, Path], format: str = "native") -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    loaders = {"native": _corpus_from_native, "locomo": _corpus_from_locomo}
    if format not in loaders:
        raise ValueError(f"unknown corpus format {format!r}")
    doc = _parse_json(path)
    try:
        return loaders[format](doc, str(path))
    except CorpusError:
        raise
    except (ValueError, TypeError, AttributeError) as exc:
        raise CorpusError(f"{path}: invalid {format} corpus: {exc}") from exc


def write_native(corpus: Corpus, path: Union[str, Path]) -> None:
    text = json.dumps(corpus.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")
