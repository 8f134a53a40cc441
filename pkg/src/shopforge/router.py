"""Heuristic task-type routing and prompt templating.

Questions are classified into one of five task types by ordered keyword
rules, then rendered into a system/user prompt pair. The system prompt names
the routed task type so a model trained with the same template knows which
output format is expected.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass

RULESET_VERSION = "1"

SYSTEM_TEMPLATE = "You are a helpful online shopping assistant. Your task is {task_type}."


class TaskType(enum.Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    RANKING = "ranking"
    NAMED_ENTITY_RECOGNITION = "named_entity_recognition"
    RETRIEVAL = "retrieval"
    GENERATION = "generation"

    @property
    def phrase(self) -> str:
        """Lowercase phrase substituted into the system template."""
        return _PHRASES[self]


_PHRASES = {
    TaskType.MULTIPLE_CHOICE: "multiple choice",
    TaskType.RANKING: "ranking",
    TaskType.NAMED_ENTITY_RECOGNITION: "named entity recognition",
    TaskType.RETRIEVAL: "retrieval",
    TaskType.GENERATION: "generation",
}

# Ordered routing rules, first match wins. Keyword lists and exclude patterns
# are data so they can be tuned without touching the matching code; bump
# RULESET_VERSION on change. Requests for several ids ("select 3 ...",
# "candidates IDs") are excluded from the multiple-choice rule so retrieval
# questions with numbered candidate lists fall through to their own rule.
ROUTING_RULES: list[dict] = [
    {
        "task_type": TaskType.MULTIPLE_CHOICE,
        "requires_option_lines": True,
        "keywords": ["select", "choose", "answer", "which of", "pick"],
        "excludes": [r"select\s+(?:the\s+)?(?:\d+|two|three)\b", r"ids\s+separated", r"\bcandidates\b"],
    },
    {
        "task_type": TaskType.RANKING,
        "keywords": ["rank", "order the"],
        "requires_candidates": True,
    },
    {
        "task_type": TaskType.NAMED_ENTITY_RECOGNITION,
        "keywords": ["extract", "named entit"],
    },
    {
        "task_type": TaskType.RETRIEVAL,
        "keywords": ["candidate", "ids separated"],
        "patterns": [r"select\s+(?:the\s+)?(?:\d+|one|two|three)\b", r"\b\d+\s+candidates?\b"],
        "excludes": [r"\brank"],
    },
]

# Two or more "0." / "1." / "A." / "B)" style lines signal an options list.
_OPTION_LINE_RE = re.compile(r"(?m)^\s*(?:\d{1,2}|[A-Z])[.)]\s")


@dataclass
class Question:
    """One evaluation item. ``gold`` is absent at inference time."""

    id: str
    instruction: str
    input_field: str = ""
    task_type: TaskType | None = None
    track: int = 1
    gold: dict | None = None

    def __post_init__(self):
        if not self.instruction:
            raise ValueError(f"question {self.id!r}: instruction must be non-empty")
        if self.track not in (1, 2, 3, 4, 5):
            raise ValueError(f"question {self.id!r}: track must be 1..5, got {self.track}")

    def full_text(self) -> str:
        return self.instruction + ("\n" + self.input_field if self.input_field else "")


@dataclass
class PromptPair:
    system: str
    user: str


def _has_option_lines(text: str) -> bool:
    return len(_OPTION_LINE_RE.findall(text)) >= 2


def route(question: Question) -> TaskType:
    """Classify by the ordered rules; Generation is the total fallback."""
    text = question.full_text()
    lowered = text.casefold()
    option_lines = _has_option_lines(text)
    for rule in ROUTING_RULES:
        if any(re.search(p, lowered) for p in rule.get("excludes", [])):
            continue
        hit = any(kw in lowered for kw in rule.get("keywords", []))
        if not hit and any(re.search(p, lowered) for p in rule.get("patterns", [])):
            hit = True
        if not hit:
            continue
        if rule.get("requires_option_lines") and not option_lines:
            continue
        if rule.get("requires_candidates") and not (option_lines or "candidate" in lowered):
            continue
        return rule["task_type"]
    return TaskType.GENERATION


def build_prompt(question: Question) -> PromptPair:
    """Render the system/user pair for a routed question."""
    if question.task_type is None:
        raise ValueError(f"question {question.id!r} has no routed task type")
    system = SYSTEM_TEMPLATE.format(task_type=question.task_type.phrase)
    return PromptPair(system=system, user=question.full_text())


def question_from_json(obj: dict) -> Question:
    task_type = obj.get("task_type")
    return Question(
        id=str(obj["id"]),
        instruction=obj["instruction"],
        input_field=obj.get("input_field", "") or "",
        task_type=TaskType(task_type) if task_type else None,
        track=int(obj.get("track", 1)),
        gold=obj.get("gold"),
    )


def load_questions(path) -> list[Question]:
    """Read one JSON question object per line."""
    questions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                questions.append(question_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad question record: {exc}") from exc
    return questions


def question_to_json(question: Question) -> dict:
    obj: dict = {
        "id": question.id,
        "instruction": question.instruction,
        "input_field": question.input_field,
        "track": question.track,
    }
    if question.task_type is not None:
        obj["task_type"] = question.task_type.value
    if question.gold is not None:
        obj["gold"] = question.gold
    return obj
