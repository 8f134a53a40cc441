"""Deterministic instruction-sample construction from seed records.

Every builder is a pure function of (seed records, rng seed): building twice
with the same inputs produces byte-identical JSONL. The recipe registry
covers the full 38-recipe catalogue; recipes whose construction needs an
external LLM, or whose seed data has no schema here, are registered as stubs
that refuse to run instead of silently missing. Samples carry a loss-mask
marker saying loss applies to answer tokens only; that marker and the build
seed go into the sidecar metadata, not the sample lines.

Seed data ships as small CSV fixtures (see data/seed/); the schemas are thin
enough that real ESCI / reviews / session dumps drop in.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .prompts import PROMPT_VERSION, RECIPE_PROMPTS, numbered
from .router import TaskType

ESCI_LABELS = ("E", "S", "C", "I")
_LABEL_PRIORITY = {label: i for i, label in enumerate(ESCI_LABELS)}
_RELATION_OPTIONS = ("Exact match", "Substitute", "Complement", "Irrelevant")

LOSS_MASK = "answer_only"

DEFAULT_MC_OPTIONS = 4
MAX_RANK_CANDIDATES = 6
DEFAULT_RETRIEVAL_CANDIDATES = 8


class RecipeSkip(Exception):
    """A seed group cannot support this recipe; move on."""


class RecipeUnavailableError(Exception):
    """The recipe is registered but cannot be built here."""


@dataclass(frozen=True)
class EsciRow:
    query: str
    product_id: str
    title: str
    description: str
    brand: str
    esci_label: str
    locale: str

    def __post_init__(self):
        if self.esci_label not in ESCI_LABELS:
            raise ValueError(f"esci_label must be one of {ESCI_LABELS}, got {self.esci_label!r}")
        if not self.title:
            raise ValueError("title must be non-empty")


@dataclass(frozen=True)
class ReviewRow:
    product_title: str
    review_text: str
    rating: int
    helpful_votes: int

    def __post_init__(self):
        if not self.product_title:
            raise ValueError("product_title must be non-empty")
        if not 1 <= self.rating <= 5:
            raise ValueError(f"rating must be 1..5, got {self.rating}")


@dataclass(frozen=True)
class SessionRow:
    clicked_titles: tuple[str, ...]
    purchased_title: str

    def __post_init__(self):
        if not self.purchased_title:
            raise ValueError("purchased_title must be non-empty")


@dataclass
class TrainingSample:
    prompt: str
    answer: str
    task_type: TaskType
    recipe_id: int
    loss_mask: str = LOSS_MASK
    audit: dict | None = None  # builder-internal facts for tests, never serialized

    def to_json(self) -> dict:
        return {
            "prompt": self.prompt,
            "answer": self.answer,
            "task_type": self.task_type.value,
            "recipe_id": self.recipe_id,
        }


# Recipe catalogue: number -> (source, task type, needs_llm, description).
RECIPE_CATALOGUE: dict[int, tuple[str, TaskType, bool, str]] = {
    1: ("amazon-m2", TaskType.MULTIPLE_CHOICE, True, "product categories from attributes"),
    2: ("reviews", TaskType.RETRIEVAL, True, "likely review snippets for product and sentiment"),
    3: ("reviews", TaskType.RETRIEVAL, True, "aspects covered by a review"),
    4: ("reviews", TaskType.MULTIPLE_CHOICE, True, "complementary category for a product type"),
    5: ("esci", TaskType.RANKING, False, "rank products for a query"),
    6: ("reviews", TaskType.RANKING, False, "other titles a buyer will like"),
    7: ("reviews", TaskType.MULTIPLE_CHOICE, False, "estimate review rating"),
    8: ("esci", TaskType.MULTIPLE_CHOICE, False, "product title for a query"),
    9: ("amazon-m2", TaskType.GENERATION, False, "session-based generation"),
    10: ("amazon-m2", TaskType.MULTIPLE_CHOICE, False, "session-based choice"),
    11: ("ecinstruct", TaskType.NAMED_ENTITY_RECOGNITION, True, "attribute value extraction"),
    12: ("ecinstruct", TaskType.MULTIPLE_CHOICE, True, "multiclass product classification"),
    13: ("ecinstruct", TaskType.MULTIPLE_CHOICE, True, "product relation prediction"),
    14: ("ecinstruct", TaskType.RETRIEVAL, True, "query product rank"),
    15: ("ecinstruct", TaskType.MULTIPLE_CHOICE, True, "sequential recommendation"),
    16: ("ecinstruct", TaskType.MULTIPLE_CHOICE, False, "answerability prediction"),
    17: ("ecinstruct", TaskType.MULTIPLE_CHOICE, False, "product matching"),
    18: ("ecinstruct", TaskType.MULTIPLE_CHOICE, False, "product substitute identification"),
    19: ("ecinstruct", TaskType.MULTIPLE_CHOICE, False, "sentiment analysis"),
    20: ("amazon-m2", TaskType.GENERATION, True, "explain product type"),
    21: ("esci", TaskType.MULTIPLE_CHOICE, True, "query matching product description"),
    22: ("esci", TaskType.MULTIPLE_CHOICE, True, "query matching product features"),
    23: ("esci", TaskType.MULTIPLE_CHOICE, True, "query matching product title"),
    24: ("esci", TaskType.MULTIPLE_CHOICE, True, "title for product description"),
    25: ("esci", TaskType.MULTIPLE_CHOICE, True, "title for product features"),
    26: ("esci", TaskType.MULTIPLE_CHOICE, True, "product title for user query"),
    27: ("esci", TaskType.RETRIEVAL, False, "bullet points matching a product"),
    28: ("ecinstruct", TaskType.RANKING, False, "rank reviews positive to negative"),
    29: ("esci", TaskType.MULTIPLE_CHOICE, False, "pick product to match query"),
    30: ("esci", TaskType.RANKING, False, "given product, rank queries"),
    31: ("sessions", TaskType.RETRIEVAL, False, "purchase to previous clicks"),
    32: ("esci", TaskType.MULTIPLE_CHOICE, False, "brand from title"),
    33: ("esci", TaskType.MULTIPLE_CHOICE, False, "query-product relationship"),
    34: ("esci", TaskType.RANKING, False, "rank query-product pairs by relatedness"),
    35: ("esci", TaskType.RETRIEVAL, False, "exact matches for a query"),
    36: ("reviews", TaskType.RANKING, False, "rank reviews by helpfulness"),
    37: ("alpaca", TaskType.GENERATION, False, "passthrough instruction data"),
    38: ("mmlu", TaskType.MULTIPLE_CHOICE, False, "passthrough multiple choice"),
}

# Recipes with builders in this module. Everything else is a stub: LLM rows
# need an external generator; the rest have no seed schema modeled here.
IMPLEMENTED_RECIPES = (5, 7, 8, 29, 31, 32, 33, 36)


def recipe_registry() -> dict[int, dict]:
    """Full catalogue with availability status per recipe."""
    registry = {}
    for no, (source, task_type, needs_llm, description) in RECIPE_CATALOGUE.items():
        if no in IMPLEMENTED_RECIPES:
            status = "implemented"
        elif needs_llm:
            status = "requires external generator"
        else:
            status = "seed schema not modeled"
        registry[no] = {
            "source": source,
            "task_type": task_type.value,
            "llm": needs_llm,
            "description": description,
            "status": status,
        }
    return registry


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def build_esci_mc(
    rows: list[EsciRow],
    rng_seed,
    num_options: int = DEFAULT_MC_OPTIONS,
    recipe_id: int = 8,
) -> TrainingSample:
    """Choice sample for one query group: the answer is an E-labeled title,
    distractors come only from S/C/I rows."""
    rng = _rng(rng_seed)
    exact = [r for r in rows if r.esci_label == "E"]
    if not exact:
        raise RecipeSkip("no E-labeled rows in group")
    correct = exact[int(rng.integers(len(exact)))]
    pool = [r for r in rows if r.esci_label != "E" and r.title != correct.title]
    if len(pool) < num_options - 1:
        raise RecipeSkip(f"need {num_options - 1} distractors, have {len(pool)}")
    picks = rng.choice(len(pool), size=num_options - 1, replace=False)
    option_rows = [correct] + [pool[int(i)] for i in picks]
    order = rng.permutation(num_options)
    options = [option_rows[int(i)] for i in order]
    answer_index = next(i for i, r in enumerate(options) if r is correct)
    prompt = RECIPE_PROMPTS[recipe_id].format(
        query=correct.query, options=numbered(r.title for r in options)
    )
    return TrainingSample(
        prompt=prompt,
        answer=str(answer_index),
        task_type=TaskType.MULTIPLE_CHOICE,
        recipe_id=recipe_id,
        audit={"option_labels": [r.esci_label for r in options], "answer_index": answer_index},
    )


def esci_gold_order(labels: list[str], rng: np.random.Generator) -> list[int]:
    """Candidate indices sorted by label priority E > S > C > I, ties broken
    by the given rng."""
    tiebreak = rng.random(len(labels))
    order = sorted(range(len(labels)), key=lambda i: (_LABEL_PRIORITY[labels[i]], tiebreak[i]))
    return order


def build_esci_ranking(rows: list[EsciRow], rng_seed, recipe_id: int = 5) -> TrainingSample:
    rng = _rng(rng_seed)
    if len(set(r.esci_label for r in rows)) < 2:
        raise RecipeSkip("group has a single label; nothing to rank")
    candidates = list(rows)
    if len(candidates) > MAX_RANK_CANDIDATES:
        picks = rng.choice(len(candidates), size=MAX_RANK_CANDIDATES, replace=False)
        candidates = [candidates[int(i)] for i in sorted(picks)]
        if len(set(r.esci_label for r in candidates)) < 2:
            raise RecipeSkip("sampled candidates collapsed to a single label")
    presented = [candidates[int(i)] for i in rng.permutation(len(candidates))]
    order = esci_gold_order([r.esci_label for r in presented], rng)
    prompt = RECIPE_PROMPTS[recipe_id].format(
        query=presented[0].query, candidates=numbered(r.title for r in presented)
    )
    return TrainingSample(
        prompt=prompt,
        answer=", ".join(str(i) for i in order),
        task_type=TaskType.RANKING,
        recipe_id=recipe_id,
        audit={"presented_labels": [r.esci_label for r in presented]},
    )


def build_review_rating_mc(row: ReviewRow, recipe_id: int = 7) -> TrainingSample:
    """Five-way rating choice; the option index is rating - 1."""
    if not 1 <= row.rating <= 5:
        raise ValueError(f"rating must be 1..5, got {row.rating}")
    options = [str(r) for r in range(1, 6)]
    prompt = RECIPE_PROMPTS[recipe_id].format(review=row.review_text, options=numbered(options))
    return TrainingSample(
        prompt=prompt,
        answer=str(row.rating - 1),
        task_type=TaskType.MULTIPLE_CHOICE,
        recipe_id=recipe_id,
        audit={"rating": row.rating},
    )


def build_session_retrieval(
    row: SessionRow,
    distractor_pool: list[str],
    rng_seed,
    num_candidates: int = DEFAULT_RETRIEVAL_CANDIDATES,
    recipe_id: int = 31,
) -> TrainingSample:
    """Retrieval sample: find 3 previously clicked products among candidates."""
    rng = _rng(rng_seed)
    clicks = list(row.clicked_titles)
    if len(clicks) < 3:
        raise RecipeSkip(f"need 3 clicked titles, have {len(clicks)}")
    excluded = set(clicks) | {row.purchased_title}
    pool = [t for t in distractor_pool if t not in excluded]
    n_distractors = max(num_candidates - 3, 0)
    if len(pool) < n_distractors:
        raise ValueError(
            f"distractor pool too small: need {n_distractors}, have {len(pool)}"
        )
    if len(clicks) > 3:
        picks = rng.choice(len(clicks), size=3, replace=False)
        true_clicks = [clicks[int(i)] for i in sorted(picks)]
    else:
        true_clicks = clicks
    distractors = (
        [pool[int(i)] for i in rng.choice(len(pool), size=n_distractors, replace=False)]
        if n_distractors
        else []
    )
    candidates = true_clicks + distractors
    presented = [candidates[int(i)] for i in rng.permutation(len(candidates))]
    true_set = set(true_clicks)
    answer_ids = sorted(i for i, t in enumerate(presented) if t in true_set)
    prompt = RECIPE_PROMPTS[recipe_id].format(
        purchased=row.purchased_title, candidates=numbered(presented)
    )
    return TrainingSample(
        prompt=prompt,
        answer=", ".join(str(i) for i in answer_ids),
        task_type=TaskType.RETRIEVAL,
        recipe_id=recipe_id,
        audit={"true_clicks": true_clicks, "candidates": presented},
    )


def build_esci_brand_mc(
    row: EsciRow, brand_pool: list[str], rng_seed, num_options: int = DEFAULT_MC_OPTIONS
) -> TrainingSample:
    rng = _rng(rng_seed)
    if not row.brand:
        raise RecipeSkip("row has no brand")
    pool = sorted(set(b for b in brand_pool if b and b != row.brand))
    if len(pool) < num_options - 1:
        raise RecipeSkip(f"need {num_options - 1} distractor brands, have {len(pool)}")
    picks = rng.choice(len(pool), size=num_options - 1, replace=False)
    options = [row.brand] + [pool[int(i)] for i in picks]
    order = rng.permutation(num_options)
    options = [options[int(i)] for i in order]
    answer_index = options.index(row.brand)
    prompt = RECIPE_PROMPTS[32].format(title=row.title, options=numbered(options))
    return TrainingSample(
        prompt=prompt,
        answer=str(answer_index),
        task_type=TaskType.MULTIPLE_CHOICE,
        recipe_id=32,
        audit={"brand": row.brand},
    )


def build_esci_relation_mc(row: EsciRow) -> TrainingSample:
    answer_index = _LABEL_PRIORITY[row.esci_label]
    prompt = RECIPE_PROMPTS[33].format(
        query=row.query, title=row.title, options=numbered(_RELATION_OPTIONS)
    )
    return TrainingSample(
        prompt=prompt,
        answer=str(answer_index),
        task_type=TaskType.MULTIPLE_CHOICE,
        recipe_id=33,
        audit={"label": row.esci_label},
    )


def build_review_helpfulness_ranking(rows: list[ReviewRow], rng_seed) -> TrainingSample:
    rng = _rng(rng_seed)
    if len(rows) < 2:
        raise RecipeSkip("need at least 2 reviews to rank")
    candidates = list(rows)
    if len(candidates) > MAX_RANK_CANDIDATES:
        picks = rng.choice(len(candidates), size=MAX_RANK_CANDIDATES, replace=False)
        candidates = [candidates[int(i)] for i in sorted(picks)]
    presented = [candidates[int(i)] for i in rng.permutation(len(candidates))]
    tiebreak = rng.random(len(presented))
    order = sorted(
        range(len(presented)), key=lambda i: (-presented[i].helpful_votes, tiebreak[i])
    )
    prompt = RECIPE_PROMPTS[36].format(
        title=presented[0].product_title, candidates=numbered(r.review_text for r in presented)
    )
    return TrainingSample(
        prompt=prompt,
        answer=", ".join(str(i) for i in order),
        task_type=TaskType.RANKING,
        recipe_id=36,
        audit={"helpful_votes": [r.helpful_votes for r in presented]},
    )


def _esci_groups(rows: list[EsciRow]) -> list[tuple[str, list[EsciRow]]]:
    groups: dict[str, list[EsciRow]] = {}
    for row in rows:
        groups.setdefault(row.query, []).append(row)
    return sorted(groups.items())


def _review_groups(rows: list[ReviewRow]) -> list[tuple[str, list[ReviewRow]]]:
    groups: dict[str, list[ReviewRow]] = {}
    for row in rows:
        groups.setdefault(row.product_title, []).append(row)
    return sorted(groups.items())


def build_dataset(
    recipe_ids,
    seed: int,
    esci_rows: list[EsciRow] | None = None,
    review_rows: list[ReviewRow] | None = None,
    session_rows: list[SessionRow] | None = None,
) -> list[TrainingSample]:
    """Run the requested recipes over the seed records, in a fixed order:
    ascending recipe id, then group order."""
    registry = recipe_registry()
    samples: list[TrainingSample] = []
    esci_rows = esci_rows or []
    review_rows = review_rows or []
    session_rows = session_rows or []
    all_brands = [r.brand for r in esci_rows]
    session_titles = sorted(
        {t for row in session_rows for t in row.clicked_titles} | {r.purchased_title for r in session_rows}
    )

    for recipe_id in sorted(set(int(r) for r in recipe_ids)):
        if recipe_id not in registry:
            raise RecipeUnavailableError(f"unknown recipe {recipe_id}")
        status = registry[recipe_id]["status"]
        if status != "implemented":
            raise RecipeUnavailableError(f"recipe {recipe_id}: {status}")
        units: list = []
        if recipe_id in (5, 8, 29):
            units = _esci_groups(esci_rows)
        elif recipe_id in (32, 33):
            units = [(f"{i:06d}", row) for i, row in enumerate(esci_rows)]
        elif recipe_id == 7:
            units = [(f"{i:06d}", row) for i, row in enumerate(review_rows)]
        elif recipe_id == 36:
            units = _review_groups(review_rows)
        elif recipe_id == 31:
            units = [(f"{i:06d}", row) for i, row in enumerate(session_rows)]
        for index, (_, unit) in enumerate(units):
            rng_seed = [seed, recipe_id, index]
            try:
                if recipe_id in (5,):
                    samples.append(build_esci_ranking(unit, rng_seed, recipe_id=recipe_id))
                elif recipe_id in (8, 29):
                    samples.append(build_esci_mc(unit, rng_seed, recipe_id=recipe_id))
                elif recipe_id == 32:
                    samples.append(build_esci_brand_mc(unit, all_brands, rng_seed))
                elif recipe_id == 33:
                    samples.append(build_esci_relation_mc(unit))
                elif recipe_id == 7:
                    samples.append(build_review_rating_mc(unit))
                elif recipe_id == 36:
                    samples.append(build_review_helpfulness_ranking(unit, rng_seed))
                elif recipe_id == 31:
                    samples.append(build_session_retrieval(unit, session_titles, rng_seed))
            except RecipeSkip:
                continue
    return samples


def emit_jsonl(samples: list[TrainingSample], path) -> None:
    """One JSON object per line with exactly the keys prompt, answer,
    task_type, recipe_id; byte-stable given identical samples."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_json(), ensure_ascii=False))
            fh.write("\n")


def dataset_metadata(seed: int, recipe_ids, samples: list[TrainingSample]) -> dict:
    """Sidecar metadata: the build seed, wording version, and the loss-mask
    marker saying loss applies to answer tokens only."""
    return {
        "seed": seed,
        "recipes": sorted(set(int(r) for r in recipe_ids)),
        "prompt_version": PROMPT_VERSION,
        "loss_mask": LOSS_MASK,
        "num_samples": len(samples),
        "rng": "numpy PCG64",
    }


def load_esci_csv(path) -> list[EsciRow]:
    """Columns: query, product_id, title, description, brand, esci_label, locale."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                EsciRow(
                    query=record["query"],
                    product_id=record["product_id"],
                    title=record["title"],
                    description=record.get("description", ""),
                    brand=record.get("brand", ""),
                    esci_label=record["esci_label"],
                    locale=record.get("locale", "us"),
                )
            )
    return rows


def load_reviews_csv(path) -> list[ReviewRow]:
    """Columns: product_title, review_text, rating, helpful_votes."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                ReviewRow(
                    product_title=record["product_title"],
                    review_text=record["review_text"],
                    rating=int(record["rating"]),
                    helpful_votes=int(record.get("helpful_votes", 0)),
                )
            )
    return rows


def load_sessions_csv(path) -> list[SessionRow]:
    """Columns: clicked_titles (pipe-separated), purchased_title."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for record in csv.DictReader(fh):
            clicked = tuple(t for t in record["clicked_titles"].split("|") if t)
            rows.append(SessionRow(clicked_titles=clicked, purchased_title=record["purchased_title"]))
    return rows
