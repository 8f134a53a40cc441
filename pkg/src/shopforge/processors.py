"""Composable logits processors for constrained decoding.

A processor is a pure map ``(prompt_ids, generated_ids, logits) -> logits``.
The two shipped here mirror the tricks that matter for format-following at
answer time: a character whitelist that masks every token whose surface
leaves the allowed set (digits and commas for choice/ranking/retrieval
answers), and an additive boost on tokens that occurred in the prompt so the
model cites verbatim (useful for entity extraction).

Masked logits use the most negative finite float32 instead of -inf so a
downstream softmax stays well-defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

NEG_INF = float(np.finfo(np.float32).min)

Processor = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

DIGIT_COMMA_CHARS = "0123456789,"
DEFAULT_PROMPT_BOOST = 5.0


class ChainConfigError(ValueError):
    """A chain configuration cannot produce a usable processor."""


@dataclass
class Vocab:
    """Dense token table: index i's surface is tokens[i]."""

    tokens: list[str]
    eos_id: int

    def __post_init__(self):
        if not (0 <= self.eos_id < len(self.tokens)):
            raise ValueError(f"eos_id {self.eos_id} out of range for {len(self.tokens)} tokens")

    def __len__(self) -> int:
        return len(self.tokens)


def whitelist_processor(vocab: Vocab, allowed_chars: str) -> Processor:
    """Mask every token whose surface contains a character outside
    ``allowed_chars`` plus space. EOS is always allowed."""
    if not allowed_chars:
        raise ChainConfigError("allowed_chars must be non-empty")
    allowed = set(allowed_chars) | {" "}
    mask = np.array(
        [not all(c in allowed for c in surface) for surface in vocab.tokens],
        dtype=bool,
    )
    mask[vocab.eos_id] = False
    if mask.sum() >= len(vocab.tokens) - 1:
        raise ChainConfigError(
            f"whitelist {allowed_chars!r} leaves no token except EOS"
        )

    def process(prompt_ids: np.ndarray, generated_ids: np.ndarray, logits: np.ndarray) -> np.ndarray:
        out = logits.copy()
        out[mask] = NEG_INF
        return out

    return process


def prompt_boost_processor(boost: float) -> Processor:
    """Add ``boost`` to the logit of every token id present in the prompt."""
    if not np.isfinite(boost):
        raise ChainConfigError(f"boost must be finite, got {boost}")
    boost32 = np.float32(boost)

    def process(prompt_ids: np.ndarray, generated_ids: np.ndarray, logits: np.ndarray) -> np.ndarray:
        if boost32 == 0 or len(prompt_ids) == 0:
            return logits.copy()
        out = logits.copy()
        ids = np.unique(np.asarray(prompt_ids, dtype=np.int64))
        out[ids] += boost32
        return out

    return process


@dataclass
class LogitsProcessorChain:
    """Ordered stages applied left to right at every decode step."""

    stages: list[Processor] = field(default_factory=list)

    def apply(
        self, prompt_ids: np.ndarray, generated_ids: np.ndarray, logits: np.ndarray
    ) -> np.ndarray:
        out = np.asarray(logits, dtype=np.float32)
        n = out.shape[0]
        for i, stage in enumerate(self.stages):
            out = stage(prompt_ids, generated_ids, out)
            if out.shape != (n,):
                raise ValueError(f"stage {i} changed logits length: {out.shape} != ({n},)")
            if np.isnan(out).any():
                raise ValueError(f"stage {i} introduced NaN logits")
        return out


def apply_chain(
    chain: LogitsProcessorChain,
    prompt_ids: np.ndarray,
    generated_ids: np.ndarray,
    logits: np.ndarray,
) -> np.ndarray:
    return chain.apply(prompt_ids, generated_ids, logits)


def chain_from_config(config: list[dict], vocab: Vocab) -> LogitsProcessorChain:
    """Build a chain from its JSON form, e.g.
    ``[{"type": "whitelist", "chars": "0123456789,"},
       {"type": "prompt_boost", "boost": 5.0}]``."""
    stages: list[Processor] = []
    for i, spec in enumerate(config):
        if not isinstance(spec, dict) or "type" not in spec:
            raise ChainConfigError(f"stage {i}: expected an object with a 'type' key")
        kind = spec["type"]
        if kind == "whitelist":
            stages.append(whitelist_processor(vocab, spec.get("chars", DIGIT_COMMA_CHARS)))
        elif kind == "prompt_boost":
            stages.append(prompt_boost_processor(float(spec.get("boost", DEFAULT_PROMPT_BOOST))))
        else:
            raise ChainConfigError(f"stage {i}: unknown processor type {kind!r}")
    return LogitsProcessorChain(stages=stages)


def default_chain_config() -> dict[str, list[dict]]:
    """Per-task-type chain defaults: digit/comma whitelist for answers that
    are id lists or option numbers, prompt boost for entity extraction,
    nothing for free-form generation. Opt-in by task type."""
    whitelist = [{"type": "whitelist", "chars": DIGIT_COMMA_CHARS}]
    return {
        "multiple_choice": whitelist,
        "ranking": whitelist,
        "retrieval": whitelist,
        "named_entity_recognition": [{"type": "prompt_boost", "boost": DEFAULT_PROMPT_BOOST}],
        "generation": [],
    }


def load_chain_config(path) -> list[dict] | dict[str, list[dict]]:
    """Read a chain config JSON file: either one stage list applied to every
    task type, or a map of task type to stage list."""
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if isinstance(cfg, list):
        return cfg
    if isinstance(cfg, dict):
        return {k: v for k, v in cfg.items()}
    raise ChainConfigError("chain config must be a JSON list or object")
