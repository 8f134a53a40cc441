"""Evaluation metrics and the two-level scoring protocol.

Each task type has its metric (accuracy, nDCG, Micro-F1, Hit@3, and one of
ROUGE-L / BLEU / token-cosine for generation); all metrics return values in
[0, 1]. A track's score is the plain mean over its questions; when several
systems are compared, the overall score is the sum of per-track leaderboard
positions (lower is better). An unparseable answer scores 0.

The sentence-embedding cosine metric is a bag-of-tokens stand-in and is
flagged as such in report metadata; pass ``embed_fn`` to plug in a real
embedding backend.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field

from .parsing import (
    Choice,
    EntitySet,
    FreeText,
    ParseOutcome,
    RankedList,
    RetrievedSet,
    parse,
)
from .router import RULESET_VERSION, Question, TaskType

GENERATION_METRICS = ("rouge_l", "bleu", "cosine")

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens, shared by all text metrics."""
    return _WORD_RE.findall(text.casefold())


def normalize_span(span: str) -> str:
    return " ".join(span.casefold().split())


def accuracy(pred_index: int, gold_index: int) -> float:
    return 1.0 if pred_index == gold_index else 0.0


def ndcg(pred_ids, grades: dict[int, float]) -> float:
    """Normalized DCG with log2(position+1) discount.

    IDCG comes from the grades sorted descending; predicted ids missing from
    the grade table contribute 0. All-zero grades define a score of 1.0
    (there is nothing to rank).
    """
    vals = sorted(grades.values(), reverse=True)
    if not vals or vals[0] <= 0:
        return 1.0
    idcg = sum(g / math.log2(i + 2) for i, g in enumerate(vals))
    dcg = sum(grades.get(int(pid), 0.0) / math.log2(i + 2) for i, pid in enumerate(pred_ids))
    return dcg / idcg


def micro_f1(pred_spans, gold_spans, token_level: bool = False) -> float:
    """Span-level Micro-F1 over exact matches of normalized spans, with
    multiplicity. Both empty counts as a perfect 1.0. ``token_level`` pools
    word tokens across spans instead of matching whole spans."""
    if token_level:
        pred = Counter(t for s in pred_spans for t in tokenize(s))
        gold = Counter(t for s in gold_spans for t in tokenize(s))
    else:
        pred = Counter(normalize_span(s) for s in pred_spans)
        gold = Counter(normalize_span(s) for s in gold_spans)
    if not pred and not gold:
        return 1.0
    tp = sum(min(c, gold[s]) for s, c in pred.items())
    fp = sum(pred.values()) - tp
    fn = sum(gold.values()) - tp
    denom = 2 * tp + fp + fn
    return (2 * tp / denom) if denom else 0.0


def hit_at_3(pred_ids, gold_ids) -> float:
    """Gold items among the (at most 3) predicted ids, normalized by
    min(3, |gold|)."""
    gold = set(int(i) for i in gold_ids)
    if not gold:
        warnings.warn("hit_at_3 called with empty gold set; scoring 0", stacklevel=2)
        return 0.0
    pred = set(int(i) for i in pred_ids)
    return len(pred & gold) / min(3, len(gold))


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(pred: str, ref: str) -> float:
    """LCS-based F-measure over word tokens."""
    p = tokenize(pred)
    r = tokenize(ref)
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    lcs = _lcs_len(p, r)
    if lcs == 0:
        return 0.0
    prec = lcs / len(p)
    rec = lcs / len(r)
    return 2 * prec * rec / (prec + rec)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(pred: str, ref: str) -> float:
    """Sentence BLEU, n-grams 1..4, add-one smoothing on orders >= 2, with
    the standard brevity penalty."""
    p = tokenize(pred)
    r = tokenize(ref)
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        pred_ngrams = _ngrams(p, n)
        ref_ngrams = _ngrams(r, n)
        total = max(len(p) - n + 1, 0)
        matched = sum(min(c, ref_ngrams[g]) for g, c in pred_ngrams.items())
        if n == 1:
            if matched == 0:
                return 0.0
            log_sum += math.log(matched / total)
        else:
            log_sum += math.log((matched + 1) / (total + 1))
    bp = 1.0 if len(p) >= len(r) else math.exp(1.0 - len(r) / len(p))
    return bp * math.exp(log_sum / 4.0)


def embedding_cosine(pred: str, ref: str, embed_fn=None) -> float:
    """Cosine similarity of sentence embeddings, clipped to [0, 1].

    The default embedding is a bag-of-token count vector (a stand-in, not a
    learned model); supply ``embed_fn: text -> vector`` to replace it.
    """
    if embed_fn is not None:
        u = list(embed_fn(pred))
        v = list(embed_fn(ref))
        dot = sum(a * b for a, b in zip(u, v))
        uu = sum(a * a for a in u)
        vv = sum(b * b for b in v)
        if uu == 0 and vv == 0:
            return 1.0
        if uu == 0 or vv == 0:
            return 0.0
        return max(0.0, min(1.0, dot / math.sqrt(uu * vv)))
    cp = Counter(tokenize(pred))
    cr = Counter(tokenize(ref))
    if not cp and not cr:
        return 1.0
    if not cp or not cr:
        return 0.0
    dot = sum(c * cr[t] for t, c in cp.items())
    # one sqrt of the exact integer product keeps identical texts at 1.0
    norm_sq = sum(c * c for c in cp.values()) * sum(c * c for c in cr.values())
    return max(0.0, min(1.0, dot / math.sqrt(norm_sq)))


def track_score(scores) -> float:
    """Arithmetic mean of one track's per-question scores."""
    scores = list(scores)
    if not scores:
        raise ValueError("cannot average an empty score set")
    return sum(scores) / len(scores)


def rank_sum(systems: dict[str, dict]) -> dict[str, int]:
    """Sum of per-track leaderboard positions, lower is better.

    Systems are ranked per track by descending score; ties share the better
    rank. A system missing a track is simply excluded from that track's
    ranking and collects no rank for it.
    """
    tracks = sorted({t for scores in systems.values() for t in scores})
    sums = {name: 0 for name in systems}
    for track in tracks:
        entrants = [(name, scores[track]) for name, scores in systems.items() if track in scores]
        for name, score in entrants:
            rank = 1 + sum(1 for _, other in entrants if other > score)
            sums[name] += rank
    return sums


def rank_table(systems: dict[str, dict]) -> dict:
    """Per-track ranks for every entrant, for report output."""
    tracks = sorted({t for scores in systems.values() for t in scores})
    table: dict = {}
    for track in tracks:
        entrants = [(name, scores[track]) for name, scores in systems.items() if track in scores]
        table[str(track)] = {
            name: 1 + sum(1 for _, other in entrants if other > score)
            for name, score in entrants
        }
    return table


@dataclass
class GoldAnswer:
    """Reference answer plus whatever the task's metric needs."""

    task_type: TaskType
    choice_index: int | None = None
    grades: dict[int, float] | None = None
    spans: tuple[str, ...] | None = None
    ids: tuple[int, ...] | None = None
    text: str | None = None
    text_metric: str = "rouge_l"
    num_candidates: int | None = None

    @classmethod
    def from_json(cls, task_type: TaskType, obj: dict) -> "GoldAnswer":
        kind = obj.get("type")
        num_candidates = obj.get("num_candidates")
        if kind == "choice":
            return cls(task_type, choice_index=int(obj["index"]), num_candidates=num_candidates)
        if kind == "ranking":
            grades = {int(k): float(v) for k, v in obj["grades"].items()}
            if any(not math.isfinite(g) or g < 0 for g in grades.values()):
                raise ValueError("relevance grades must be finite and non-negative")
            if grades and max(grades.values()) <= 0:
                raise ValueError("ranking gold needs at least one positive grade")
            return cls(
                task_type,
                grades=grades,
                num_candidates=num_candidates if num_candidates is not None else len(grades),
            )
        if kind == "entities":
            return cls(task_type, spans=tuple(obj["spans"]))
        if kind == "retrieval":
            return cls(task_type, ids=tuple(int(i) for i in obj["ids"]), num_candidates=num_candidates)
        if kind == "text":
            metric = obj.get("metric", "rouge_l")
            if metric not in GENERATION_METRICS:
                raise ValueError(f"unknown generation metric {metric!r}")
            return cls(task_type, text=obj["text"], text_metric=metric)
        raise ValueError(f"unknown gold answer type {kind!r}")


def score_question(gold: GoldAnswer, outcome: ParseOutcome) -> float:
    """Score one parsed answer against its gold; any failure scores 0."""
    if not outcome.ok:
        return 0.0
    answer = outcome.answer
    tt = gold.task_type
    if tt is TaskType.MULTIPLE_CHOICE and isinstance(answer, Choice):
        return accuracy(answer.index, gold.choice_index)
    if tt is TaskType.RANKING and isinstance(answer, RankedList):
        return ndcg(answer.ids, gold.grades or {})
    if tt is TaskType.NAMED_ENTITY_RECOGNITION and isinstance(answer, EntitySet):
        return micro_f1(answer.spans, gold.spans or ())
    if tt is TaskType.RETRIEVAL and isinstance(answer, RetrievedSet):
        return hit_at_3(answer.ids, gold.ids or ())
    if tt is TaskType.GENERATION and isinstance(answer, FreeText):
        ref = gold.text or ""
        if gold.text_metric == "bleu":
            return bleu(answer.text, ref)
        if gold.text_metric == "cosine":
            return embedding_cosine(answer.text, ref)
        return rouge_l(answer.text, ref)
    return 0.0


@dataclass
class MetricReport:
    per_question: dict[str, float] = field(default_factory=dict)
    per_track: dict[int, float] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    overall_rank_sum: dict[str, int] | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        obj = {
            "per_question": dict(sorted(self.per_question.items())),
            "per_track": {str(k): v for k, v in sorted(self.per_track.items())},
            "num_questions": len(self.per_question),
            "failures": dict(sorted(self.failures.items())),
            "metadata": dict(sorted(self.metadata.items())),
        }
        if self.overall_rank_sum is not None:
            obj["overall_rank_sum"] = dict(sorted(self.overall_rank_sum.items()))
        return obj


def evaluate_answers(
    questions: list[Question],
    raw_answers: dict[str, str],
    strict: bool = False,
) -> MetricReport:
    """Parse and score raw answer text for every gold question.

    Missing answers and parse failures both score 0 and are listed in the
    report's failure map.
    """
    report = MetricReport(
        metadata={
            "ruleset_version": RULESET_VERSION,
            "rouge_l": "word-level LCS, no stemming",
            "embedding_cosine": "bag-of-tokens stand-in (pluggable)",
        }
    )
    by_track: dict[int, list[float]] = {}
    for question in questions:
        if question.gold is None:
            raise ValueError(f"question {question.id!r} has no gold answer")
        task_type = question.task_type or TaskType.GENERATION
        gold = GoldAnswer.from_json(task_type, question.gold)
        raw = raw_answers.get(question.id)
        if raw is None:
            outcome = ParseOutcome(failure_reason="missing answer")
        else:
            outcome = parse(task_type, raw, num_candidates=gold.num_candidates, strict=strict)
        if not outcome.ok:
            report.failures[question.id] = outcome.failure_reason or "unparseable"
        score = score_question(gold, outcome)
        report.per_question[question.id] = score
        by_track.setdefault(question.track, []).append(score)
    report.per_track = {track: track_score(scores) for track, scores in by_track.items()}
    return report
