"""Parse generated text into typed answers, competition style.

Failures are values, never exceptions: anything the parser cannot read
becomes a ParseFailure that scores 0 downstream. The default mode is
permissive (stray whitespace, "Answer:" prefixes, trailing punctuation, and
letter options are tolerated) and every recovery it performs is recorded in
the outcome for audit; strict mode insists the whole trimmed output match the
expected format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .router import TaskType


@dataclass(frozen=True)
class Choice:
    index: int


@dataclass(frozen=True)
class RankedList:
    ids: tuple[int, ...]


@dataclass(frozen=True)
class EntitySet:
    spans: tuple[str, ...]


@dataclass(frozen=True)
class RetrievedSet:
    ids: tuple[int, ...]  # unique, kept in first-occurrence order


@dataclass(frozen=True)
class FreeText:
    text: str


ParsedAnswer = Choice | RankedList | EntitySet | RetrievedSet | FreeText


@dataclass
class ParseOutcome:
    answer: ParsedAnswer | None = None
    failure_reason: str | None = None
    recoveries: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.answer is not None


def _fail(reason: str, recoveries: list[str]) -> ParseOutcome:
    return ParseOutcome(failure_reason=reason, recoveries=tuple(recoveries))


_PREFIX_RE = re.compile(r"^\s*(?:answer|output|response)\s*[:：]\s*", re.IGNORECASE)
_INT_RE = re.compile(r"\d+")
_LETTER_RE = re.compile(r"\b([A-Ja-j])\b")
_SPAN_SPLIT_RE = re.compile(r"[,\n]+")
_STRICT_INT = re.compile(r"\d+")
_STRICT_ID_LIST = re.compile(r"\d+(?:[\s,]+\d+)*")
RETRIEVAL_MAX_IDS = 3


def _prepare(generated, recoveries: list[str], strip_prefix: bool = True) -> str:
    if isinstance(generated, bytes):
        generated = generated.decode("utf-8", errors="replace")
        recoveries.append("decoded_bytes")
    elif not isinstance(generated, str):
        generated = str(generated)
    text = generated.strip()
    if not strip_prefix:
        return text
    stripped = _PREFIX_RE.sub("", text)
    if stripped != text:
        recoveries.append("stripped_answer_prefix")
    return stripped


def _parse_ids(text: str, num_candidates, recoveries: list[str]) -> list[int] | str:
    """Integer id list from comma/space separated text; a string return is a
    failure reason."""
    found = _INT_RE.findall(text)
    if not found:
        return "no candidate ids found"
    ids = []
    seen = set()
    for tok in found:
        val = int(tok)
        if val in seen:
            continue
        seen.add(val)
        ids.append(val)
    if len(ids) < len(found):
        recoveries.append("deduplicated_ids")
    if num_candidates is not None:
        bad = [i for i in ids if i >= num_candidates]
        if bad:
            return f"candidate id {bad[0]} out of range (num_candidates={num_candidates})"
    return ids


def parse(
    task_type: TaskType,
    generated,
    num_candidates: int | None = None,
    strict: bool = False,
) -> ParseOutcome:
    """Parse arbitrary generated text for the given task type.

    Total over every input: returns a ParseOutcome, never raises.
    """
    if isinstance(task_type, str):
        try:
            task_type = TaskType(task_type)
        except ValueError:
            return ParseOutcome(failure_reason=f"unknown task type {task_type!r}")
    recoveries: list[str] = []
    text = _prepare(generated, recoveries, strip_prefix=not strict)

    if task_type is TaskType.GENERATION:
        return ParseOutcome(answer=FreeText(text), recoveries=tuple(recoveries))

    if task_type is TaskType.MULTIPLE_CHOICE:
        if strict and not _STRICT_INT.fullmatch(text):
            return _fail("strict mode: output is not a bare option index", recoveries)
        m = _INT_RE.search(text)
        if m:
            index = int(m.group())
            if m.group() != text:
                recoveries.append("ignored_surrounding_text")
        else:
            lm = _LETTER_RE.search(text)
            if lm is None:
                return _fail("no option index found", recoveries)
            index = ord(lm.group(1).upper()) - ord("A")
            recoveries.append("letter_option")
        if num_candidates is not None and index >= num_candidates:
            return _fail(
                f"option index {index} out of range (num_candidates={num_candidates})", recoveries
            )
        return ParseOutcome(answer=Choice(index), recoveries=tuple(recoveries))

    if task_type in (TaskType.RANKING, TaskType.RETRIEVAL):
        if strict and not _STRICT_ID_LIST.fullmatch(text):
            return _fail("strict mode: output is not a bare id list", recoveries)
        ids = _parse_ids(text, num_candidates, recoveries)
        if isinstance(ids, str):
            return _fail(ids, recoveries)
        if task_type is TaskType.RANKING:
            return ParseOutcome(answer=RankedList(tuple(ids)), recoveries=tuple(recoveries))
        if len(ids) > RETRIEVAL_MAX_IDS:
            return _fail(f"{len(ids)} ids exceed the retrieval limit of {RETRIEVAL_MAX_IDS}", recoveries)
        return ParseOutcome(answer=RetrievedSet(tuple(ids)), recoveries=tuple(recoveries))

    if task_type is TaskType.NAMED_ENTITY_RECOGNITION:
        spans = []
        for raw_span in _SPAN_SPLIT_RE.split(text):
            span = raw_span.strip()
            trimmed = span.rstrip(".;:")
            if trimmed != span:
                recoveries.append("stripped_trailing_punctuation")
                span = trimmed.strip()
            if span:
                spans.append(span)
        if not spans:
            return _fail("no entity spans found", recoveries)
        return ParseOutcome(answer=EntitySet(tuple(spans)), recoveries=tuple(recoveries))

    return _fail(f"unrouted task type {task_type!r}", recoveries)


def format_answer(answer: ParsedAnswer) -> str:
    """Canonical text form; parsing it back yields the same answer."""
    if isinstance(answer, Choice):
        return str(answer.index)
    if isinstance(answer, (RankedList, RetrievedSet)):
        return ", ".join(str(i) for i in answer.ids)
    if isinstance(answer, EntitySet):
        return ", ".join(answer.spans)
    if isinstance(answer, FreeText):
        return answer.text
    raise TypeError(f"not a parsed answer: {answer!r}")


def answer_to_json(answer: ParsedAnswer) -> dict:
    if isinstance(answer, Choice):
        return {"kind": "choice", "index": answer.index}
    if isinstance(answer, RankedList):
        return {"kind": "ranked_list", "ids": list(answer.ids)}
    if isinstance(answer, EntitySet):
        return {"kind": "entity_set", "spans": list(answer.spans)}
    if isinstance(answer, RetrievedSet):
        return {"kind": "retrieved_set", "ids": list(answer.ids)}
    if isinstance(answer, FreeText):
        return {"kind": "free_text", "text": answer.text}
    raise TypeError(f"not a parsed answer: {answer!r}")


def answer_from_json(obj: dict) -> ParsedAnswer:
    kind = obj["kind"]
    if kind == "choice":
        return Choice(int(obj["index"]))
    if kind == "ranked_list":
        return RankedList(tuple(int(i) for i in obj["ids"]))
    if kind == "entity_set":
        return EntitySet(tuple(obj["spans"]))
    if kind == "retrieved_set":
        return RetrievedSet(tuple(int(i) for i in obj["ids"]))
    if kind == "free_text":
        return FreeText(obj["text"])
    raise ValueError(f"unknown answer kind {kind!r}")
