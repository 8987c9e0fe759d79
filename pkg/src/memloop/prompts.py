"""Prompt templates, loaded from a versioned JSON file."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Union

TEMPLATE_KEYS = (
    "challenger_guided",
    "challenger_unguided",
    "evaluator_answer",
    "evaluator_judge",
    "adapter_content",
    "adapter_strategy",
    "llm_judge",
)


@dataclass(frozen=True)
class PromptSet:
    version: str
    templates: dict
    strategy: dict

    def render(self, key: str, **fields) -> tuple[str, str]:
        t = self.templates[key]
        return t["system"].format(**fields), t["user"].format(**fields)

    @classmethod
    def from_dict(cls, doc: dict) -> "PromptSet":
        missing = [k for k in TEMPLATE_KEYS if k not in doc]
        if missing or "strategy" not in doc:
            raise ValueError(f"prompt file is missing {missing or ['strategy']}")
        return cls(str(doc.get("version", "0")), {k: doc[k] for k in TEMPLATE_KEYS}, dict(doc["strategy"]))


def load_prompts(path: Optional[Union[str, Path]] = None) -> PromptSet:
    if path is None:
        return default_prompts()
    return PromptSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=1)
def default_prompts() -> PromptSet:
    text = resources.files("memloop").joinpath("data/prompts.json").read_text(encoding="utf-8")
    return PromptSet.from_dict(json.loads(text))
