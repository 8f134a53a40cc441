import json

import numpy as np
import pytest

from shopforge.router import (
    SYSTEM_TEMPLATE,
    Question,
    TaskType,
    build_prompt,
    load_questions,
    question_to_json,
    route,
)

# Shaped like the public development example: a shopping-concept question
# with numbered options and an instruction to answer with one of them.
MC_INSTRUCTION = (
    "Which of the following product categories best complements a coffee maker? "
    "Please select your answer from the options below."
)
MC_INPUT = "0. coffee beans\n1. lawn mower\n2. snow boots\n3. fish tank"


def _q(instruction, input_field="", track=1):
    return Question(id="t", instruction=instruction, input_field=input_field, track=track)


def test_mc_question_routes_multiple_choice():
    assert route(_q(MC_INSTRUCTION, MC_INPUT)) is TaskType.MULTIPLE_CHOICE


def test_candidates_ids_routes_retrieval():
    q = _q(
        "You will return 3 candidates IDs separated by a comma.",
        "0. item a\n1. item b\n2. item c\n3. item d",
    )
    assert route(q) is TaskType.RETRIEVAL


def test_translation_falls_back_to_generation():
    assert route(_q("Translate the following product title into French: office chair")) is TaskType.GENERATION


def test_ranking_routes():
    q = _q(
        "Rank the candidate products from most to least relevant to the query.",
        "0. mug\n1. tent\n2. cup",
    )
    assert route(q) is TaskType.RANKING


def test_ner_routes():
    assert route(_q("Extract all brand names mentioned in the following review.")) is TaskType.NAMED_ENTITY_RECOGNITION


def test_route_is_deterministic():
    q = _q(MC_INSTRUCTION, MC_INPUT)
    assert route(q) is route(q)


def test_build_prompt_templates():
    phrases = {
        TaskType.MULTIPLE_CHOICE: "multiple choice",
        TaskType.RANKING: "ranking",
        TaskType.NAMED_ENTITY_RECOGNITION: "named entity recognition",
        TaskType.RETRIEVAL: "retrieval",
        TaskType.GENERATION: "generation",
    }
    for task_type, phrase in phrases.items():
        q = _q("Do the thing.")
        q.task_type = task_type
        pair = build_prompt(q)
        assert pair.system == SYSTEM_TEMPLATE.format(task_type=phrase)
        assert pair.system == f"You are a helpful online shopping assistant. Your task is {phrase}."


def test_build_prompt_user_field():
    q = _q("Instruction only.")
    q.task_type = TaskType.GENERATION
    assert build_prompt(q).user == "Instruction only."
    q2 = _q("Instruction.", "payload")
    q2.task_type = TaskType.GENERATION
    assert build_prompt(q2).user == "Instruction.\npayload"


def test_prompt_prefix_scan_over_random_questions():
    prefix = "You are a helpful online shopping assistant. Your task"
    assert len(prefix) == 54
    rng = np.random.default_rng(99)
    words = ["rank", "select", "extract", "translate", "candidates", "review", "please", "answer"]
    for i in range(1000):
        text = " ".join(words[int(j)] for j in rng.integers(0, len(words), size=6))
        q = _q(text + ".")
        q.task_type = route(q)
        assert build_prompt(q).system.startswith(prefix)


def test_unrouted_build_prompt_errors():
    with pytest.raises(ValueError):
        build_prompt(_q("No task type assigned yet."))


def test_question_validation():
    with pytest.raises(ValueError):
        Question(id="x", instruction="")
    with pytest.raises(ValueError):
        Question(id="x", instruction="ok", track=6)


def test_question_jsonl_round_trip(tmp_path):
    q = Question(
        id="q1", instruction="Pick one.", input_field="0. a\n1. b",
        task_type=TaskType.MULTIPLE_CHOICE, track=3, gold={"type": "choice", "index": 1},
    )
    path = tmp_path / "questions.jsonl"
    path.write_text(json.dumps(question_to_json(q)) + "\n", encoding="utf-8")
    loaded = load_questions(path)
    assert len(loaded) == 1
    assert loaded[0] == q


def test_bad_question_file_errors(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "1"}\n', encoding="utf-8")
    with pytest.raises(ValueError):
        load_questions(path)
