"""Independent reference implementations used to freeze expected values.

These deliberately avoid the library's code paths: scalar loops instead of
vectorized numpy, memoized recursion instead of DP tables, dict walks instead
of Counters. They stay the oracle side of every dual-route check.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


def dense_merge_oracle(base: np.ndarray, deltas: list[tuple[np.ndarray, np.ndarray, float]]) -> np.ndarray:
    """One-shot sum of scaled outer-product factors, scalar matmul loops."""
    out = np.array(base, dtype=np.float64)
    rows, cols = out.shape
    for a, b, scale in deltas:
        r = a.shape[1]
        for i in range(rows):
            for j in range(cols):
                acc = 0.0
                for k in range(r):
                    acc += float(a[i, k]) * float(b[k, j])
                out[i, j] += scale * acc
    return out.astype(np.float32)


def ndcg_oracle(pred_ids, grades: dict[int, float]) -> float:
    vals = sorted(grades.values(), reverse=True)
    if not vals or vals[0] <= 0:
        return 1.0
    idcg = 0.0
    for i, g in enumerate(vals):
        idcg += g / math.log2(i + 2)
    dcg = 0.0
    for i, p in enumerate(pred_ids):
        dcg += grades.get(p, 0.0) / math.log2(i + 2)
    return dcg / idcg


def micro_f1_oracle(pred_spans, gold_spans) -> float:
    def norm(s):
        return " ".join(s.casefold().split())

    pred = sorted(norm(s) for s in pred_spans)
    gold = sorted(norm(s) for s in gold_spans)
    if not pred and not gold:
        return 1.0
    remaining = list(gold)
    tp = 0
    for span in pred:
        if span in remaining:
            remaining.remove(span)
            tp += 1
    fp = len(pred) - tp
    fn = len(gold) - tp
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def hit_at_3_oracle(pred_ids, gold_ids) -> float:
    gold = set(gold_ids)
    if not gold:
        return 0.0
    hits = 0
    for g in gold:
        if g in set(pred_ids):
            hits += 1
    return hits / min(3, len(gold))


def lcs_oracle(a: tuple, b: tuple) -> int:
    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def _words(text: str) -> list[str]:
    import re

    return re.findall(r"[a-z0-9]+", text.casefold())


def rouge_l_oracle(pred: str, ref: str) -> float:
    p, r = _words(pred), _words(ref)
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    lcs = lcs_oracle(tuple(p), tuple(r))
    if lcs == 0:
        return 0.0
    prec, rec = lcs / len(p), lcs / len(r)
    return 2 * prec * rec / (prec + rec)


def bleu_oracle(pred: str, ref: str) -> float:
    p, r = _words(pred), _words(ref)
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    logs = 0.0
    for n in range(1, 5):
        pred_grams: dict = {}
        for i in range(len(p) - n + 1):
            g = tuple(p[i : i + n])
            pred_grams[g] = pred_grams.get(g, 0) + 1
        ref_grams: dict = {}
        for i in range(len(r) - n + 1):
            g = tuple(r[i : i + n])
            ref_grams[g] = ref_grams.get(g, 0) + 1
        total = max(len(p) - n + 1, 0)
        matched = 0
        for g, c in pred_grams.items():
            matched += min(c, ref_grams.get(g, 0))
        if n == 1:
            if matched == 0:
                return 0.0
            logs += math.log(matched / total)
        else:
            logs += math.log((matched + 1) / (total + 1))
    bp = 1.0 if len(p) >= len(r) else math.exp(1.0 - len(r) / len(p))
    return bp * math.exp(logs / 4.0)


def cosine_oracle(pred: str, ref: str) -> float:
    cp: dict = {}
    for w in _words(pred):
        cp[w] = cp.get(w, 0) + 1
    cr: dict = {}
    for w in _words(ref):
        cr[w] = cr.get(w, 0) + 1
    if not cp and not cr:
        return 1.0
    if not cp or not cr:
        return 0.0
    dot = 0.0
    for w, c in cp.items():
        dot += c * cr.get(w, 0)
    norm = math.sqrt(sum(c * c for c in cp.values())) * math.sqrt(sum(c * c for c in cr.values()))
    return max(0.0, min(1.0, dot / norm))


def quantize_scalar_oracle(matrix: np.ndarray, group_size: int):
    """Per-element scalar re-implementation of asymmetric int4 grouping.

    Returns (codes, scales, zeros) with float32 scalar arithmetic to match
    the vectorized implementation bit-for-bit.
    """
    arr = np.asarray(matrix, dtype=np.float32)
    rows, cols = arr.shape
    assert cols % group_size == 0
    n_groups = cols // group_size
    codes = np.zeros((rows, cols), dtype=np.uint8)
    scales = np.zeros((rows, n_groups), dtype=np.float32)
    zeros = np.zeros((rows, n_groups), dtype=np.float32)
    for i in range(rows):
        for g in range(n_groups):
            lo, hi = g * group_size, (g + 1) * group_size
            group = arr[i, lo:hi]
            gmax = np.float32(max(group))
            gmin = np.float32(min(group))
            if gmax == gmin:
                scales[i, g] = np.float32(1.0)
                zeros[i, g] = gmax
                continue
            scale = np.float32((gmax - gmin) / np.float32(15.0))
            scales[i, g] = scale
            zeros[i, g] = gmin
            for j in range(lo, hi):
                v = np.float32((arr[i, j] - gmin) / scale)
                code = int(math.floor(float(v) + 0.5))
                codes[i, j] = min(max(code, 0), 15)
    return codes, scales, zeros
