"""Sentence-level BLEU-1..4 and ROUGE-L, hand-rolled.

BLEU uses uniform weights over orders 1..n, clipped n-gram counts, and the
standard brevity penalty. Zero modified-precision counts are smoothed with
add-epsilon (1e-9). When the candidate is too short to have any n-gram of
some order, that order's precision is 1 if the reference also has none and
epsilon otherwise. ROUGE-L is the LCS F-measure with beta=1.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter

BLEU_EPS = 1e-9

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:\.[0-9]+)?")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(candidate: str, reference: str, max_order: int = 4) -> list[float]:
    """Returns [BLEU-1, ..., BLEU-max_order]."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        warnings.warn("empty tokenization; BLEU scored 0", stacklevel=2)
        return [0.0] * max_order

    precisions: list[float] = []
    for n in range(1, max_order + 1):
        cg = _ngrams(cand, n)
        rg = _ngrams(ref, n)
        total = sum(cg.values())
        if total == 0:
            precisions.append(1.0 if sum(rg.values()) == 0 else BLEU_EPS)
            continue
        clipped = sum(min(count, rg[g]) for g, count in cg.items())
        precisions.append(clipped / total if clipped > 0 else BLEU_EPS)

    bp = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    scores = []
    for n in range(1, max_order + 1):
        log_avg = sum(math.log(p) for p in precisions[:n]) / n
        scores.append(bp * math.exp(log_avg))
    return scores


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F-measure with equal precision/recall weight."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        warnings.warn("empty tokenization; ROUGE-L scored 0", stacklevel=2)
        return 0.0
    m, n = len(cand), len(ref)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if cand[i - 1] == ref[j - 1]:
                dp[i][j] = dp[i - 1][j - 1] + 1
            else:
                dp[i][j] = max(dp[i - 1][j], dp[i][j - 1])
    lcs = dp[m][n]
    if lcs == 0:
        return 0.0
    precision = lcs / m
    recall = lcs / n
    return 2.0 * precision * recall / (precision + recall)


def score_text(candidate: str, reference: str) -> dict[str, float]:
    """BLEU-1..4 plus ROUGE-L in one call."""
    b = sentence_bleu(candidate, reference)
    return {"bleu1": b[0], "bleu2": b[1], "bleu3": b[2], "bleu4": b[3],
            "rougeL": rouge_l(candidate, reference)}
