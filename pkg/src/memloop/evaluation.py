"""Answer benchmark questions from adapted memory and score them."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from .ama import RunArtifacts, answer_with_memory
from .dialogue import Corpus
from .gateway import Gateway, GatewayError
from .metrics import JudgeError, MetricReport, build_report, llm_judge
from .prompts import PromptSet

logger = logging.getLogger(__name__)


@dataclass
class AnsweredQuestion:
    dialogue_id: str
    question: str
    gold_answer: str
    category: str
    predicted: str
    judge: Optional[int] = None
    error: Optional[str] = None


def answer_benchmark(
    run: RunArtifacts,
    corpus: Corpus,
    gateway: Gateway,
    embedder,
    *,
    retrieval_k: Optional[int] = None,
    judge: bool = False,
    prompts: Optional[PromptSet] = None,
) -> list[AnsweredQuestion]:
    k = run.config.retrieval_k if retrieval_k is None else retrieval_k
    out = []
    judge_misses = 0
    for dialogue in corpus.dialogues:
        art = run.dialogues.get(dialogue.dialogue_id)
        for q in corpus.questions.get(dialogue.dialogue_id, ()):
            row = AnsweredQuestion(dialogue.dialogue_id, q.question, q.gold_answer, q.category, "")
            if art is None:
                row.error = "dialogue missing from run"
                out.append(row)
                continue
            try:
                row.predicted = answer_with_memory(art.store, q.question, k, gateway, embedder, prompts=prompts)
            except GatewayError as exc:
                row.error = str(exc)
                logger.warning("answering %r failed: %s", q.question[:60], exc)
            if judge and row.error is None:
                try:
                    row.judge = llm_judge(q.question, q.gold_answer, row.predicted, gateway, prompts=prompts)
                except (GatewayError, JudgeError) as exc:
                    judge_misses += 1
                    logger.debug("judge unavailable for %r: %s", q.question[:60], exc)
            out.append(row)
    if judge and judge_misses:
        logger.warning("LLM judge score absent for %d of %d questions", judge_misses, len(out))
    return out


def report_from_answers(rows: list[AnsweredQuestion]) -> MetricReport:
    return build_report([(r.category, r.gold_answer, r.predicted, r.judge) for r in rows])
