"""The extraction strategy: a fixed base instruction plus learned amendments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .prompts import PromptSet, default_prompts


@dataclass(frozen=True)
class ExtractionStrategy:
    base_instruction: str
    amendments: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "amendments", tuple(self.amendments))
        if any(not a.strip() for a in self.amendments):
            raise ValueError("amendments must be non-empty")

    @property
    def version(self) -> int:
        return 1 + len(self.amendments)

    @classmethod
    def default(cls, prompts: Optional[PromptSet] = None) -> "ExtractionStrategy":
        prompts = prompts or default_prompts()
        return cls(prompts.strategy["base_instruction"])

    def render(self, prompts: Optional[PromptSet] = None) -> str:
        prompts = prompts or default_prompts()
        parts = [self.base_instruction]
        if self.amendments:
            parts.append(prompts.strategy["amendments_header"] + "\n" + "\n".join(f"- {a}" for a in self.amendments))
        parts.append(prompts.strategy["format"])
        return "\n\n".join(parts)

    def to_dict(self) -> dict:
        return {"base_instruction": self.base_instruction, "amendments": list(self.amendments), "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionStrategy":
        s = cls(d["base_instruction"], tuple(d.get("amendments", ())))
        if "version" in d and d["version"] != s.version:
            raise ValueError(f"strategy version {d['version']} does not match {len(s.amendments)} amendments")
        return s


def apply_strategy_update(strategy: ExtractionStrategy, amendment: str) -> ExtractionStrategy:
    """Append ``amendment`` unless it is empty or already present."""
    amendment = " ".join(amendment.split())
    if not amendment or amendment in (a.strip() for a in strategy.amendments):
        return strategy
    return ExtractionStrategy(strategy.base_instruction, strategy.amendments + (amendment,))
