"""Deterministic toy language model, tokenizer, and greedy decode loop.

The model is a keyed hash, not a neural net: the next-token logit vector is a
pure function of (seed, last 8 context token ids, position), produced by a
SplitMix64-style finalizer and mapped into [-4, 4). That makes every decode
bit-identical across runs and platforms, which is exactly what the logits
processors and answer parsers need for end-to-end tests. A worker pool can
decode independent questions in parallel without changing any output.
"""

from __future__ import annotations

import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .processors import LogitsProcessorChain, Vocab, chain_from_config

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

CONTEXT_SUFFIX = 8

# Lossless partition of any string: letter runs, single digits, single
# whitespace characters, then any other single character.
_SPLIT_RE = re.compile(r"[A-Za-z]+|[0-9]|\s|.")

EOS_SURFACE = ""
UNK_SURFACE = "<unk>"

DEFAULT_CORPUS = (
    "the customer will buy a new wireless bluetooth speaker with deep bass "
    "stainless steel water bottle keeps drinks cold for hours "
    "organic cotton t shirt soft and breathable for everyday wear "
    "ergonomic office chair with lumbar support and adjustable height "
    "portable phone charger fast charging usb cable included "
    "kitchen knife set sharp blades with wooden block storage "
    "running shoes lightweight cushioned sole for road and trail "
    "laptop backpack waterproof with padded compartment and pockets "
    "ceramic coffee mug large handle holds heat dishwasher safe "
    "noise cancelling headphones over ear long battery life "
    "review rating query product title brand option answer rank order "
    "select the best item from this list of candidates please respond"
)


def _splitmix(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


def _splitmix_vec(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


class ToyTokenizer:
    """Whitespace/punctuation tokenizer over a fixed seed corpus.

    The vocabulary is the corpus tokens plus the digits, comma, space, EOS
    and UNK. encode/decode round-trips exactly on in-vocab text; unknown
    words map to UNK.
    """

    def __init__(self, corpus: str = DEFAULT_CORPUS):
        tokens = [EOS_SURFACE, UNK_SURFACE] + [str(d) for d in range(10)] + [",", " "]
        seen = set(tokens)
        for tok in _SPLIT_RE.findall(corpus):
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
        self.vocab = Vocab(tokens=tokens, eos_id=0)
        self.unk_id = 1
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def encode(self, text: str) -> np.ndarray:
        ids = [self._ids.get(tok, self.unk_id) for tok in _SPLIT_RE.findall(text)]
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> str:
        surfaces = self.vocab.tokens
        return "".join(surfaces[int(i)] for i in ids)

    def __len__(self) -> int:
        return len(self.vocab)


@dataclass
class ToyLM:
    """Reproducible pseudo-random logits keyed on (seed, context suffix)."""

    seed: int
    context_window: int = 64

    def next_logits(self, context_ids, vocab_size: int) -> np.ndarray:
        key = _splitmix(self.seed & _MASK64)
        suffix = list(context_ids)[-CONTEXT_SUFFIX:]
        for tok in suffix:
            key = _splitmix(key ^ ((int(tok) + 1) & _MASK64))
        key = _splitmix(key ^ len(context_ids))
        hashed = _splitmix_vec(
            np.uint64(key) ^ (np.arange(1, vocab_size + 1, dtype=np.uint64) * np.uint64(_GOLDEN))
        )
        unit = (hashed >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (unit * 8.0 - 4.0).astype(np.float32)


def greedy_decode_ids(
    lm: ToyLM,
    tokenizer: ToyTokenizer,
    prompt: str,
    chain: LogitsProcessorChain,
    max_new: int,
) -> list[int]:
    """Argmax decoding under the processor chain; stops at EOS or max_new.
    Returns the generated token ids (EOS excluded)."""
    if max_new < 1:
        raise ValueError(f"max_new must be >= 1, got {max_new}")
    prompt_ids = tokenizer.encode(prompt)
    if len(prompt_ids) == 0:
        raise ValueError("prompt tokenized to nothing")
    eos = tokenizer.vocab.eos_id
    window = lm.context_window
    generated: list[int] = []
    context = list(prompt_ids)
    for _ in range(max_new):
        logits = lm.next_logits(context[-window:], len(tokenizer))
        logits = chain.apply(prompt_ids, np.asarray(generated, dtype=np.int64), logits)
        token = int(np.argmax(logits))
        if token == eos:
            break
        generated.append(token)
        context.append(token)
    return generated


def greedy_decode(
    lm: ToyLM,
    tokenizer: ToyTokenizer,
    prompt: str,
    chain: LogitsProcessorChain,
    max_new: int,
) -> str:
    return tokenizer.decode(greedy_decode_ids(lm, tokenizer, prompt, chain, max_new))


@dataclass
class DecodeStats:
    questions: int
    elapsed_seconds: float
    questions_per_minute: float


_WORKER: dict = {}


def _init_worker(seed: int, context_window: int, corpus: str, chain_configs: dict):
    tokenizer = ToyTokenizer(corpus)
    _WORKER["lm"] = ToyLM(seed=seed, context_window=context_window)
    _WORKER["tokenizer"] = tokenizer
    _WORKER["chains"] = {
        key: chain_from_config(cfg, tokenizer.vocab) for key, cfg in chain_configs.items()
    }


def _decode_chunk(args) -> list[str]:
    items, max_new = args
    lm = _WORKER["lm"]
    tokenizer = _WORKER["tokenizer"]
    chains = _WORKER["chains"]
    return [greedy_decode(lm, tokenizer, prompt, chains[key], max_new) for prompt, key in items]


def decode_prompts(
    seed: int,
    prompts_with_chain_keys: list[tuple[str, str]],
    chain_configs: dict[str, list[dict]],
    max_new: int,
    corpus: str = DEFAULT_CORPUS,
    context_window: int = 64,
    jobs: int = 1,
) -> tuple[list[str], DecodeStats]:
    """Decode many (prompt, chain-key) pairs, reporting throughput.

    Output order matches input order regardless of worker count; every chain
    key must be present in ``chain_configs``.
    """
    start = time.perf_counter()
    if jobs <= 1:
        _init_worker(seed, context_window, corpus, chain_configs)
        outputs = _decode_chunk((prompts_with_chain_keys, max_new))
    else:
        n = len(prompts_with_chain_keys)
        chunk = max(1, (n + jobs - 1) // jobs)
        chunks = [
            (prompts_with_chain_keys[i : i + chunk], max_new) for i in range(0, n, chunk)
        ]
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(seed, context_window, corpus, chain_configs),
        ) as pool:
            outputs = [text for part in pool.map(_decode_chunk, chunks) for text in part]
    elapsed = time.perf_counter() - start
    n = len(prompts_with_chain_keys)
    qpm = (n / elapsed * 60.0) if elapsed > 0 else float("inf")
    return outputs, DecodeStats(questions=n, elapsed_seconds=elapsed, questions_per_minute=qpm)
