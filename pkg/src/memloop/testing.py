"""Deterministic stand-in model for recording fixture replay files.

:class:`FactSheetBackend` answers every role from a hand-written fact sheet
instead of a real model. Run it behind a
:class:`~memloop.gateway.RecordingBackend` to produce a replay file, then test
against that file with :class:`~memloop.gateway.ReplayBackend`.

Fact sheet shape::

    {
      "refusal": "...",                       # evaluator reply when memory lacks evidence
      "improve_instruction": "...",           # adapter_strategy reply whenever failures exist
      "sessions": {"<dialogue_id>#<n>": {
          "summaries": [{"summary": "...", "keywords": [...], "needs_amendment": false}],
          "probes": ["<question>", ...]}},  # challenger output order
      "facts": {"<question>": {
          "gold": "...", "evidence": "...",   # evidence: phrase that must be in the context
          "predicted": "...",                 # optional; defaults to gold
          "supplement": "...", "defect": "..."}}
    }
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional, Union

from .dialogue import Corpus, session_text
from .gateway import ChatRequest
from .prompts import PromptSet, default_prompts


class FactSheetBackend:
    backend_id = "factsheet"

    def __init__(self, corpus: Corpus, sheet: dict, prompts: Optional[PromptSet] = None):
        self.sheet = sheet
        self.prompts = prompts or default_prompts()
        self.refusal = sheet["refusal"]
        self.facts = sheet["facts"]
        self._sessions = {}
        for d in corpus.dialogues:
            for s in d.sessions:
                key = f"{d.dialogue_id}#{s.session_index}"
                if key in sheet["sessions"]:
                    self._sessions[session_text(s)] = sheet["sessions"][key]
        self.calls: list[str] = []

    @classmethod
    def from_files(cls, corpus: Corpus, sheet_path: Union[str, Path]) -> "FactSheetBackend":
        return cls(corpus, json.loads(Path(sheet_path).read_text(encoding="utf-8")))

    def _session_in(self, text: str) -> dict:
        # longest match first so a session is never confused with a prefix of another
        for stext in sorted(self._sessions, key=len, reverse=True):
            if stext and stext in text:
                return self._sessions[stext]
        raise KeyError("prompt does not contain a known session")

    def complete(self, request: ChatRequest) -> str:
        self.calls.append(request.role_tag)
        return getattr(self, "_" + request.role_tag)(request)

    def _memory_summarizer(self, req: ChatRequest) -> str:
        sheet = self._session_in(req.user_prompt)
        amended = self.prompts.strategy["amendments_header"] in req.system_prompt
        lines = [
            f"{s['summary']} | {', '.join(s['keywords'])}"
            for s in sheet["summaries"]
            if amended or not s.get("needs_amendment", False)
        ]
        return "\n".join(lines)

    def _challenger(self, req: ChatRequest) -> str:
        sheet = self._session_in(req.user_prompt)
        m = re.search(r"\b(\d+) (?:question|questions)\b", req.user_prompt)
        k = int(m.group(1)) if m else len(sheet["probes"])
        out = []
        for q in sheet["probes"][:k]:
            out.append(f"Q: {q}\nA: {self.facts[q]['gold']}")
        return "\n".join(out)

    def _evaluator_answer(self, req: ChatRequest) -> str:
        context, _, question = req.user_prompt.rpartition("\n\nQuestion: ")
        fact = self.facts.get(question.strip())
        if fact is None or fact["evidence"].lower() not in context.lower():
            return self.refusal
        return fact.get("predicted", fact["gold"])

    def _field(self, text: str, label: str) -> str:
        m = re.search(rf"^{re.escape(label)}: (.*)$", text, re.MULTILINE)
        return m.group(1).strip() if m else ""

    def _evaluator_judge(self, req: ChatRequest) -> str:
        predicted = self._field(req.user_prompt, "Memory-based answer")
        question = self._field(req.user_prompt, "Question")
        if predicted and predicted != self.refusal:
            return "CORRECT"
        fact = self.facts.get(question, {})
        defect = fact.get("defect") or f"The memory holds nothing that supports the answer: {fact.get('gold', '?')}"
        return f"INCORRECT\n{defect}"

    def _adapter_content(self, req: ChatRequest) -> str:
        questions = re.findall(r"^\[\d+\] Question: (.*)$", req.user_prompt, re.MULTILINE)
        lines = [self.facts[q]["supplement"] for q in questions if self.facts.get(q, {}).get("supplement")]
        return "\n".join(lines) or "NONE"

    def _adapter_strategy(self, req: ChatRequest) -> str:
        if re.search(r"^\[\d+\] Question: ", req.user_prompt, re.MULTILINE):
            return self.sheet.get("improve_instruction") or "NONE"
        return "NONE"

    def _llm_judge(self, req: ChatRequest) -> str:
        predicted = self._field(req.user_prompt, "Predicted answer")
        return "1" if predicted and predicted != self.refusal else "0"
