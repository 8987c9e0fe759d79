"""Answer scoring: token F1, BLEU-1, LLM judge, pass rate and per-category reports."""

from __future__ import annotations

import logging
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

if TYPE_CHECKING:
    from .gateway import Gateway

logger = logging.getLogger(__name__)

ARTICLES = frozenset({"a", "an", "the"})
_PUNCT_TABLE = str.maketrans("", "", string.punctuation + "‘’“”")

# Column order of the printed table; `other` only appears when populated.
CATEGORY_ORDER = ("multi_hop", "temporal", "open_domain", "single_hop", "other")
CATEGORY_TITLES = {
    "multi_hop": "Multi-Hop",
    "temporal": "Temporal",
    "open_domain": "Open-Domain",
    "single_hop": "Single-Hop",
    "other": "Other",
}


def normalize_text(s: str) -> list[str]:
    """Lowercase, strip punctuation, drop articles and split on whitespace."""
    s = s.lower().translate(_PUNCT_TABLE)
    return [tok for tok in s.split() if tok not in ARTICLES]


def f1_score(predicted: str, gold: str) -> float:
    pred = normalize_text(predicted)
    ref = normalize_text(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def bleu1(predicted: str, gold: str) -> float:
    """Sentence BLEU with unigram weight only and no smoothing.

    Clipped unigram precision times the brevity penalty
    ``exp(1 - |gold| / |pred|)`` when the prediction is shorter than the gold.
    """
    pred = normalize_text(predicted)
    ref = normalize_text(gold)
    if not pred:
        return 0.0
    ref_counts = Counter(ref)
    clipped = sum(min(n, ref_counts[tok]) for tok, n in Counter(pred).items())
    if clipped == 0:
        return 0.0
    precision = clipped / len(pred)
    bp = 1.0 if len(pred) >= len(ref) else math.exp(1 - len(ref) / len(pred))
    return bp * precision


class JudgeError(RuntimeError):
    """The LLM judge response could not be turned into a 0/1 score."""


_JUDGE_SCORE = re.compile(r"^\W*([01])\b")


def llm_judge(question: str, gold: str, predicted: str, gateway: "Gateway", *, prompts=None) -> int:
    from .prompts import default_prompts

    prompts = prompts or default_prompts()
    system, user = prompts.render("llm_judge", question=question, gold=gold, predicted=predicted)
    text = gateway.ask("llm_judge", system, user)
    m = _JUDGE_SCORE.match(text.strip())
    if m is None:
        raise JudgeError(f"unparseable judge response: {text[:80]!r}")
    return int(m.group(1))


def pass_rate(verdicts: Sequence) -> float:
    if not verdicts:
        raise ValueError("pass_rate of an empty verdict list is undefined")
    return sum(1 for v in verdicts if v.correct) / len(verdicts)


@dataclass
class CategoryScores:
    f1_mean: float
    bleu1_mean: float
    judge_mean: Optional[float]
    count: int


@dataclass
class MetricReport:
    per_category: dict[str, CategoryScores] = field(default_factory=dict)
    overall: CategoryScores = field(default_factory=lambda: CategoryScores(0.0, 0.0, None, 0))
    overall_macro: Optional[CategoryScores] = None
    pass_rate: Optional[float] = None

    def to_dict(self) -> dict:
        def scores(c: Optional[CategoryScores]):
            if c is None:
                return None
            return {"f1_mean": c.f1_mean, "bleu1_mean": c.bleu1_mean, "judge_mean": c.judge_mean, "count": c.count}

        return {
            "per_category": {k: scores(v) for k, v in self.per_category.items()},
            "overall": scores(self.overall),
            "overall_macro": scores(self.overall_macro),
            "pass_rate": self.pass_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        def scores(x):
            return None if x is None else CategoryScores(**x)

        order = {c: i for i, c in enumerate(CATEGORY_ORDER)}
        keys = sorted(d["per_category"], key=lambda c: (order.get(c, len(order)), c))
        return cls(
            per_category={k: scores(d["per_category"][k]) for k in keys},
            overall=scores(d["overall"]),
            overall_macro=scores(d.get("overall_macro")),
            pass_rate=d.get("pass_rate"),
        )


def _mean(xs: list[float]) -> float:
    return math.fsum(xs) / len(xs)


def _aggregate(rows: list[tuple[float, float, Optional[int]]]) -> CategoryScores:
    if not rows:
        return CategoryScores(0.0, 0.0, None, 0)
    judged = [j for _, _, j in rows if j is not None]
    return CategoryScores(
        f1_mean=_mean([f for f, _, _ in rows]),
        bleu1_mean=_mean([b for _, b, _ in rows]),
        judge_mean=_mean(judged) if judged else None,
        count=len(rows),
    )


def build_report(rows: Iterable[tuple], verdicts: Optional[Sequence] = None) -> MetricReport:
    """Aggregate ``(category, gold, predicted[, judge])`` rows.

    ``overall`` is the micro average over questions; ``overall_macro`` averages
    the per-category means.
    """
    scored: dict[str, list[tuple[float, float, Optional[int]]]] = {}
    everything = []
    for row in rows:
        category, gold, predicted = row[0], row[1], row[2]
        judge = row[3] if len(row) > 3 else None
        item = (f1_score(predicted, gold), bleu1(predicted, gold), judge)
        scored.setdefault(str(category), []).append(item)
        everything.append(item)

    order = {c: i for i, c in enumerate(CATEGORY_ORDER)}
    per_category = {c: _aggregate(scored[c]) for c in sorted(scored, key=lambda c: (order.get(c, len(order)), c))}
    macro = None
    if per_category:
        cats = list(per_category.values())
        judged = [c.judge_mean for c in cats if c.judge_mean is not None]
        macro = CategoryScores(
            f1_mean=_mean([c.f1_mean for c in cats]),
            bleu1_mean=_mean([c.bleu1_mean for c in cats]),
            judge_mean=_mean(judged) if judged else None,
            count=sum(c.count for c in cats),
        )
    return MetricReport(
        per_category=per_category,
        overall=_aggregate(everything),
        overall_macro=macro,
        pass_rate=pass_rate(verdicts) if verdicts else None,
    )


def format_table(report: MetricReport) -> str:
    """Aligned text table: one column per category, then the two averages."""
    columns = [(CATEGORY_TITLES.get(c, c), s) for c, s in report.per_category.items()]
    columns.append(("Average", report.overall))
    columns.append(("Macro-Avg", report.overall_macro))

    def pct(x: Optional[float]) -> str:
        return "-" if x is None else f"{100 * x:.2f}"

    metric_rows = [("F1", lambda s: pct(s.f1_mean)), ("BLEU-1", lambda s: pct(s.bleu1_mean))]
    if any(s is not None and s.judge_mean is not None for _, s in columns):
        metric_rows.append(("Judge", lambda s: pct(s.judge_mean)))
    metric_rows.append(("Count", lambda s: str(s.count)))

    header = ["Metric"] + [title for title, _ in columns]
    body = [[name] + [fmt(s) if s is not None else "-" for _, s in columns] for name, fmt in metric_rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in [header] + body]
    if report.pass_rate is not None:
        lines.append(f"pass_rate={report.pass_rate:.4f}")
    return "\n".join(line.rstrip() for line in lines) + "\n"
