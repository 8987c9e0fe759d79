"""Adversarial memory adaptation.

A challenger writes probe questions from a session, an evaluator answers them
from memory and judges the answers, and an adapter turns the failures into a
memory supplement and an extraction-strategy amendment. :func:`run_session`
drives one session through that loop; :func:`run_corpus` drives whole dialogues.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from typing import Callable, Optional

from .dialogue import Corpus, Dialogue, Session, corpus_digest, session_text
from .gateway import Gateway, GatewayError
from .metrics import f1_score, normalize_text
from .prompts import PromptSet, default_prompts
from .store import (
    ADAPTER_SUPPLEMENT,
    CONSTRUCTED,
    MemoryStore,
    construct_session_memory,
    frequency_keywords,
    new_entry,
    render_context,
    retrieve,
    update_store,
)
from .strategy import ExtractionStrategy, apply_strategy_update

logger = logging.getLogger(__name__)

GATEWAY_ERROR_DEFECT = "gateway-error"
FALLBACK_DEFECT = "auto-fallback: low lexical overlap"
FALLBACK_F1 = 0.6


@dataclass(frozen=True)
class AmaConfig:
    qa_per_session: int = 3
    retrieval_k: int = 10
    guided_questions: bool = True
    enable_content_update: bool = True
    enable_strategy_update: bool = True
    max_rounds: int = 1
    reconstruction_pass_threshold: float = 0.0
    followup_check: bool = True
    shared_strategy: bool = False
    audit_gold: bool = False
    dup_threshold: float = 0.95
    link_threshold: float = 0.60
    max_links: int = 3
    max_entries_per_session: int = 16

    def __post_init__(self):
        if self.qa_per_session < 0:
            raise ValueError("qa_per_session must be >= 0")
        if self.retrieval_k < 0:
            raise ValueError("retrieval_k must be >= 0")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 0.0 <= self.reconstruction_pass_threshold <= 1.0:
            raise ValueError("reconstruction_pass_threshold must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AmaConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def new_store(self, dialogue_id: str) -> MemoryStore:
        return MemoryStore(dialogue_id, dup_threshold=self.dup_threshold,
                           link_threshold=self.link_threshold, max_links=self.max_links)


@dataclass(frozen=True)
class QAPair:
    question: str
    gold_answer: str
    source_session: tuple[str, int] = ("", 0)

    def __post_init__(self):
        if not self.question.strip() or not self.gold_answer.strip():
            raise ValueError("QA pair needs a question and an answer")


@dataclass(frozen=True)
class Verdict:
    predicted_answer: str
    correct: bool
    defect: str = ""

    def __post_init__(self):
        if self.correct and self.defect:
            raise ValueError("a correct verdict carries no defect")
        if not self.correct and not self.defect:
            raise ValueError("an incorrect verdict needs a defect description")


@dataclass(frozen=True)
class ErrorRecord:
    failures: tuple[tuple[QAPair, Verdict], ...]
    session_ref: tuple[str, int] = ("", 0)

    def __post_init__(self):
        object.__setattr__(self, "failures", tuple(self.failures))
        if any(v.correct for _, v in self.failures):
            raise ValueError("error records hold failures only")


@dataclass(frozen=True)
class AdaptationResult:
    memory_supplements: tuple[str, ...] = ()
    strategy_amendment: str = ""


@dataclass
class QARecord:
    question: str
    gold_answer: str
    predicted: str
    correct: bool
    defect: str


@dataclass
class RoundReport:
    round_index: int
    records: list[QARecord]
    supplements_inserted: list[str] = field(default_factory=list)
    supplements_deduplicated: list[str] = field(default_factory=list)
    amendment_applied: str = ""
    adapter_calls: int = 0

    @property
    def pass_rate(self) -> Optional[float]:
        return _rate(self.records)


@dataclass
class SessionReport:
    dialogue_id: str
    session_index: int
    entries_constructed: int = 0
    rounds: list[RoundReport] = field(default_factory=list)
    followup: Optional[list[QARecord]] = None
    reconstructed: bool = False
    strategy_version: int = 1

    @property
    def first_records(self) -> list[QARecord]:
        return self.rounds[0].records if self.rounds else []

    @property
    def final_records(self) -> list[QARecord]:
        if self.followup is not None:
            return self.followup
        return self.rounds[-1].records if self.rounds else []

    @property
    def pre_pass_rate(self) -> Optional[float]:
        return _rate(self.first_records)

    @property
    def post_pass_rate(self) -> Optional[float]:
        return _rate(self.final_records)

    def to_dict(self) -> dict:
        d = asdict(self)
        for rd, rnd in zip(d["rounds"], self.rounds):
            rd["pass_rate"] = rnd.pass_rate
        d["pre_pass_rate"] = self.pre_pass_rate
        d["post_pass_rate"] = self.post_pass_rate
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionReport":
        rounds = [
            RoundReport(**{**{k: v for k, v in r.items() if k != "pass_rate"},
                           "records": [QARecord(**q) for q in r["records"]]})
            for r in d["rounds"]
        ]
        followup = None if d.get("followup") is None else [QARecord(**q) for q in d["followup"]]
        return cls(d["dialogue_id"], d["session_index"], d["entries_constructed"], rounds, followup,
                   d["reconstructed"], d["strategy_version"])


def _rate(records: list[QARecord]) -> Optional[float]:
    if not records:
        return None
    return sum(r.correct for r in records) / len(records)


# ---------------------------------------------------------------- challenger

_Q_LINE = re.compile(r"^\s*(?:\d+[.)]\s*)?Q(?:uestion)?\s*\d*\s*[:.)]\s*(.+)$", re.IGNORECASE)
_A_LINE = re.compile(r"^\s*A(?:nswer)?\s*\d*\s*[:.)]\s*(.+)$", re.IGNORECASE)


def parse_qa_pairs(text: str) -> list[tuple[str, str]]:
    pairs, question = [], None
    for line in text.splitlines():
        if m := _Q_LINE.match(line):
            question = m.group(1).strip()
        elif (m := _A_LINE.match(line)) and question:
            answer = m.group(1).strip()
            if answer:
                pairs.append((question, answer))
            question = None
    return pairs


def generate_qa(
    session: Session,
    k: int,
    guided: bool,
    gateway: Gateway,
    *,
    dialogue_id: str = "",
    prompts: Optional[PromptSet] = None,
) -> list[QAPair]:
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return []
    prompts = prompts or default_prompts()
    key = "challenger_guided" if guided else "challenger_unguided"
    system, user = prompts.render(key, session=session_text(session), k=k)
    pairs = parse_qa_pairs(gateway.ask("challenger", system, user))
    if not pairs:
        raise ValueError(f"session {dialogue_id}/{session.session_index}: challenger produced no QA pairs")
    if len(pairs) < k:
        logger.warning("session %s/%d: challenger produced %d of %d pairs", dialogue_id,
                       session.session_index, len(pairs), k)
    ref = (dialogue_id, session.session_index)
    return [QAPair(q, a, ref) for q, a in pairs[:k]]


def gold_support(gold: str, session: Session) -> float:
    """Best token F1 of ``gold`` against any same-length window of the session."""
    gold_toks = normalize_text(gold)
    text_toks = normalize_text(session_text(session))
    if not gold_toks or not text_toks:
        return 0.0
    n = len(gold_toks)
    best = 0.0
    for i in range(max(1, len(text_toks) - n + 1)):
        best = max(best, f1_score(" ".join(text_toks[i:i + n]), gold))
    return best


# ---------------------------------------------------------------- evaluator

def answer_with_memory(
    store: MemoryStore,
    question: str,
    retrieval_k: int,
    gateway: Gateway,
    embedder,
    *,
    prompts: Optional[PromptSet] = None,
) -> str:
    prompts = prompts or default_prompts()
    context = render_context(retrieve(store, question, retrieval_k, embedder))
    system, user = prompts.render("evaluator_answer", context=context or "(empty)", question=question)
    return gateway.ask("evaluator_answer", system, user).strip()


_VERDICT = re.compile(r"^\W*(INCORRECT|CORRECT)\b\W*(.*)$", re.IGNORECASE | re.DOTALL)


def judge_answer(
    question: str,
    predicted: str,
    gold: str,
    gateway: Gateway,
    *,
    prompts: Optional[PromptSet] = None,
) -> Verdict:
    prompts = prompts or default_prompts()
    system, user = prompts.render("evaluator_judge", question=question, gold=gold, predicted=predicted)
    text = gateway.ask("evaluator_judge", system, user).strip()
    m = _VERDICT.match(text)
    if m is None:
        correct = f1_score(predicted, gold) >= FALLBACK_F1
        logger.warning("unparseable judge verdict %r; lexical fallback -> %s", text[:60], correct)
        return Verdict(predicted, correct, "" if correct else FALLBACK_DEFECT)
    if m.group(1).upper() == "CORRECT":
        return Verdict(predicted, True, "")
    defect = " ".join(m.group(2).split()) or "no defect description given"
    return Verdict(predicted, False, defect)


# ---------------------------------------------------------------- adapter

def render_failures(errors: ErrorRecord) -> str:
    blocks = []
    for i, (qa, v) in enumerate(errors.failures, 1):
        blocks.append(
            f"[{i}] Question: {qa.question}\n"
            f"Reference answer: {qa.gold_answer}\n"
            f"Memory-based answer: {v.predicted_answer}\n"
            f"Defect: {v.defect}"
        )
    return "\n\n".join(blocks)


_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def _is_none(text: str) -> bool:
    return text.strip().strip(".").upper() in {"NONE", "N/A", ""}


def parse_supplements(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = _BULLET.sub("", line).strip()
        if line and not _is_none(line):
            out.append(line)
    return out


def adapt(
    errors: ErrorRecord,
    strategy: ExtractionStrategy,
    gateway: Gateway,
    *,
    content_update: bool = True,
    strategy_update: bool = True,
    prompts: Optional[PromptSet] = None,
) -> AdaptationResult:
    if not errors.failures:
        raise ValueError("adapt needs at least one failure")
    prompts = prompts or default_prompts()
    failures = render_failures(errors)

    supplements: list[str] = []
    if content_update:
        system, user = prompts.render("adapter_content", failures=failures)
        try:
            supplements = parse_supplements(gateway.ask("adapter_content", system, user))
        except GatewayError as exc:
            logger.warning("adapter_content call failed: %s", exc)
        if not supplements:
            logger.warning("adapter produced no memory supplements for %s", errors.session_ref)

    amendment = ""
    if strategy_update:
        system, user = prompts.render("adapter_strategy", strategy=strategy.render(prompts), failures=failures)
        try:
            text = gateway.ask("adapter_strategy", system, user)
            amendment = "" if _is_none(text) else " ".join(text.split())
        except GatewayError as exc:
            logger.warning("adapter_strategy call failed: %s", exc)
    return AdaptationResult(tuple(supplements), amendment)


def apply_memory_update(
    store: MemoryStore,
    supplements,
    session: Session,
    embedder,
    *,
    dialogue_id: str = "",
) -> MemoryStore:
    entries = [
        new_entry(s, frequency_keywords(s), session.date_label, embedder.embed(s),
                  provenance=ADAPTER_SUPPLEMENT, session_ref=(dialogue_id, session.session_index))
        for s in supplements
    ]
    return update_store(store, entries)


# ---------------------------------------------------------------- orchestration

def _evaluate(
    qa: list[QAPair], store: MemoryStore, config: AmaConfig, gateway: Gateway, embedder, prompts: PromptSet,
) -> list[tuple[QAPair, Verdict]]:
    out = []
    for pair in qa:
        try:
            predicted = answer_with_memory(store, pair.question, config.retrieval_k, gateway, embedder,
                                           prompts=prompts)
            verdict = judge_answer(pair.question, predicted, pair.gold_answer, gateway, prompts=prompts)
        except GatewayError as exc:
            logger.warning("question %r: %s", pair.question[:60], exc)
            verdict = Verdict("", False, GATEWAY_ERROR_DEFECT)
        out.append((pair, verdict))
    return out


def _records(judged) -> list[QARecord]:
    return [QARecord(q.question, q.gold_answer, v.predicted_answer, v.correct, v.defect) for q, v in judged]


def reconstruct_session(
    store: MemoryStore,
    session: Session,
    strategy: ExtractionStrategy,
    gateway: Gateway,
    embedder,
    *,
    dialogue_id: str,
    config: AmaConfig,
    prompts: Optional[PromptSet] = None,
) -> int:
    """Rebuild this session's constructed entries with ``strategy``; supplements stay."""
    ref = (dialogue_id, session.session_index)
    old = [e.entry_id for e in store.entries if e.provenance == CONSTRUCTED and e.session_ref == ref]
    fresh = construct_session_memory(session, strategy, gateway, embedder, dialogue_id=dialogue_id,
                                     prompts=prompts, max_entries=config.max_entries_per_session)
    store.remove(old)
    update_store(store, fresh)
    return len(fresh)


def run_session(
    session: Session,
    store: MemoryStore,
    strategy: ExtractionStrategy,
    config: AmaConfig,
    gateway: Gateway,
    embedder,
    *,
    dialogue_id: str = "",
    prompts: Optional[PromptSet] = None,
) -> tuple[MemoryStore, ExtractionStrategy, SessionReport]:
    prompts = prompts or default_prompts()
    report = SessionReport(dialogue_id, session.session_index, strategy_version=strategy.version)
    if config.qa_per_session == 0:
        return store, strategy, report

    updated_last = False
    last_qa: list[QAPair] = []
    for round_index in range(1, config.max_rounds + 1):
        try:
            qa = generate_qa(session, config.qa_per_session, config.guided_questions, gateway,
                             dialogue_id=dialogue_id, prompts=prompts)
        except (ValueError, GatewayError) as exc:
            logger.error("session %s/%d round %d: %s", dialogue_id, session.session_index, round_index, exc)
            qa = []
        if config.audit_gold:
            for pair in qa:
                support = gold_support(pair.gold_answer, session)
                if support < 0.5:
                    logger.warning("weakly supported gold answer (F1=%.2f): %r", support, pair.gold_answer)

        judged = _evaluate(qa, store, config, gateway, embedder, prompts)
        rnd = RoundReport(round_index, _records(judged))
        report.rounds.append(rnd)
        last_qa = qa
        updated_last = False

        failures = [(q, v) for q, v in judged if not v.correct]
        if not failures:
            break
        if not (config.enable_content_update or config.enable_strategy_update):
            break

        errors = ErrorRecord(tuple(failures), (dialogue_id, session.session_index))
        result = adapt(errors, strategy, gateway, content_update=config.enable_content_update,
                       strategy_update=config.enable_strategy_update, prompts=prompts)
        rnd.adapter_calls = int(config.enable_content_update) + int(config.enable_strategy_update)

        new_strategy = apply_strategy_update(strategy, result.strategy_amendment)
        if new_strategy is not strategy:
            rnd.amendment_applied = new_strategy.amendments[-1]
            strategy = new_strategy
            updated_last = True

        before = len(store.events)
        apply_memory_update(store, result.memory_supplements, session, embedder, dialogue_id=dialogue_id)
        for ev in store.events[before:]:
            if ev.action == "inserted":
                rnd.supplements_inserted.append(ev.summary)
                updated_last = True
            else:
                rnd.supplements_deduplicated.append(ev.summary)

    final_rate = report.rounds[-1].pass_rate
    threshold = config.reconstruction_pass_threshold
    if threshold > 0.0 and final_rate is not None and final_rate < threshold:
        logger.info("session %s/%d: pass rate %.3f < %.3f, reconstructing", dialogue_id,
                    session.session_index, final_rate, threshold)
        report.entries_constructed = reconstruct_session(store, session, strategy, gateway, embedder,
                                                         dialogue_id=dialogue_id, config=config,
                                                         prompts=prompts)
        report.reconstructed = True
        updated_last = True

    if config.followup_check and updated_last and last_qa:
        report.followup = _records(_evaluate(last_qa, store, config, gateway, embedder, prompts))
    report.strategy_version = strategy.version
    return store, strategy, report


@dataclass
class DialogueArtifacts:
    dialogue_id: str
    store: MemoryStore
    strategy: ExtractionStrategy
    sessions: list[SessionReport] = field(default_factory=list)
    error: Optional[str] = None

    def _rate(self, attr: str) -> Optional[float]:
        records = [r for s in self.sessions for r in getattr(s, attr)]
        return _rate(records)

    @property
    def pre_pass_rate(self) -> Optional[float]:
        return self._rate("first_records")

    @property
    def post_pass_rate(self) -> Optional[float]:
        return self._rate("final_records")

    @property
    def question_count(self) -> int:
        return sum(len(s.first_records) for s in self.sessions)


@dataclass
class RunArtifacts:
    config: AmaConfig
    config_snapshot: dict
    corpus_digest: str
    dialogues: dict[str, DialogueArtifacts] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def process_dialogue(
    dialogue: Dialogue,
    config: AmaConfig,
    gateway: Gateway,
    embedder,
    *,
    strategy: Optional[ExtractionStrategy] = None,
    prompts: Optional[PromptSet] = None,
) -> DialogueArtifacts:
    prompts = prompts or default_prompts()
    strategy = strategy or ExtractionStrategy.default(prompts)
    store = config.new_store(dialogue.dialogue_id)
    art = DialogueArtifacts(dialogue.dialogue_id, store, strategy)
    try:
        for session in dialogue.sessions:
            if not session.turns:
                logger.warning("dialogue %s session %d is empty; skipped", dialogue.dialogue_id,
                               session.session_index)
                continue
            entries = construct_session_memory(session, art.strategy, gateway, embedder,
                                               dialogue_id=dialogue.dialogue_id, prompts=prompts,
                                               max_entries=config.max_entries_per_session)
            update_store(store, entries)
            _, art.strategy, report = run_session(session, store, art.strategy, config, gateway, embedder,
                                                  dialogue_id=dialogue.dialogue_id, prompts=prompts)
            if not report.reconstructed:
                report.entries_constructed = len(entries)
            art.sessions.append(report)
    except Exception as exc:  # one dialogue failing must not sink the run
        logger.exception("dialogue %s failed", dialogue.dialogue_id)
        art.error = f"{type(exc).__name__}: {exc}"
    return art


def config_snapshot(config: AmaConfig, gateway: Gateway, embedder, prompts: PromptSet, extra=None) -> dict:
    snap = {
        "ama": config.to_dict(),
        "gateway": gateway.describe(),
        "embedder": embedder.describe(),
        "prompts_version": prompts.version,
    }
    snap.update(extra or {})
    return snap


def run_corpus(
    corpus: Corpus,
    config: AmaConfig,
    gateway: Gateway,
    embedder,
    *,
    parallel: int = 1,
    prompts: Optional[PromptSet] = None,
    clock: Callable[[], str] = utc_now,
    snapshot_extra: Optional[dict] = None,
    skip: Optional[dict[str, DialogueArtifacts]] = None,
) -> RunArtifacts:
    """Run every dialogue through construction and adaptation.

    Dialogues are independent unless ``config.shared_strategy`` is set, in
    which case they run in corpus order and hand the strategy along.
    ``skip`` maps dialogue ids to already-finished artifacts (resume).
    """
    prompts = prompts or default_prompts()
    skip = skip or {}
    run = RunArtifacts(config, config_snapshot(config, gateway, embedder, prompts, snapshot_extra),
                       corpus_digest(corpus), started_at=clock())
    todo = [d for d in corpus.dialogues if d.dialogue_id not in skip]

    results: dict[str, DialogueArtifacts] = dict(skip)
    if config.shared_strategy:
        if parallel > 1:
            logger.warning("shared strategy mode runs dialogues sequentially; --parallel ignored")
        strategy = None
        for d in corpus.dialogues:
            if d.dialogue_id in skip:
                strategy = skip[d.dialogue_id].strategy
                continue
            art = process_dialogue(d, config, gateway, embedder, strategy=strategy, prompts=prompts)
            strategy = art.strategy
            results[d.dialogue_id] = art
    elif parallel > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = {d.dialogue_id: pool.submit(process_dialogue, d, config, gateway, embedder, prompts=prompts)
                       for d in todo}
            for did, fut in futures.items():
                results[did] = fut.result()
    else:
        for d in todo:
            results[d.dialogue_id] = process_dialogue(d, config, gateway, embedder, prompts=prompts)

    run.dialogues = {d.dialogue_id: results[d.dialogue_id] for d in corpus.dialogues}
    run.finished_at = clock()
    return run
