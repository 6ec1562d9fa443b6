"""Text-overlap metrics: BLEU-4 and ROUGE-1/2/L, deterministic and unsmoothed.

Tokenization is deliberately simple and fully documented: lowercase, delete
punctuation characters, split on whitespace. BLEU uses clipped n-gram
precisions up to n = min(4, candidate length) with the brevity penalty
exp(1 - |ref|/|cand|) for short candidates and no smoothing, so every score
is reproducible by naive counting. ROUGE values are F1 variants.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import InputError

__all__ = [
    "ScoreReport",
    "tokenize",
    "bleu4",
    "rouge_n",
    "rouge_l",
    "evaluate_corpus",
]

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation characters, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class ScoreReport:
    """Corpus-level metric values, each in [0, 1]."""

    bleu4: float
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float

    def to_dict(self) -> dict:
        return {
            "bleu4": self.bleu4,
            "rouge1_f": self.rouge1_f,
            "rouge2_f": self.rouge2_f,
            "rougeL_f": self.rougeL_f,
        }


def bleu4(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Clipped n-gram precision BLEU with n up to min(4, |candidate|).

    Returns 0.0 whenever any used precision is zero (no smoothing), so short
    or disjoint candidates score exactly 0.
    """
    if len(reference) == 0:
        raise InputError("BLEU reference must be non-empty")
    if len(candidate) == 0:
        return 0.0

    max_n = min(4, len(candidate))
    log_precisions = []
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        clipped = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = len(candidate) - n + 1
        if clipped == 0:
            return 0.0
        log_precisions.append(math.log(clipped / total))

    geo_mean = math.exp(sum(log_precisions) / max_n)
    if len(candidate) < len(reference):
        brevity = math.exp(1.0 - len(reference) / len(candidate))
    else:
        brevity = 1.0
    return brevity * geo_mean


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[float, float, float]:
    """N-gram overlap (precision, recall, F1), clipped against the reference multiset."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    ref_total = len(reference) - n + 1
    if ref_total < 1:
        raise InputError(f"reference has {len(reference)} tokens, fewer than n={n}")
    cand_total = max(len(candidate) - n + 1, 0)

    cand_counts = _ngram_counts(candidate, n)
    ref_counts = _ngram_counts(reference, n)
    overlap = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())

    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # Classic O(|a| * |b|) dynamic program, rolling one row.
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Longest-common-subsequence F1: p = LCS/|cand|, r = LCS/|ref|."""
    if len(reference) == 0:
        raise InputError("ROUGE-L reference must be non-empty")
    if len(candidate) == 0:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


def evaluate_corpus(predictions: Sequence[str], references: Sequence[str]) -> ScoreReport:
    """Arithmetic mean of per-pair scores over tokenized prediction/reference pairs."""
    if len(predictions) != len(references):
        raise InputError(
            f"got {len(predictions)} predictions but {len(references)} references"
        )
    if len(predictions) == 0:
        raise InputError("need at least one prediction/reference pair")

    bleu_sum = r1_sum = r2_sum = rl_sum = 0.0
    for pred, ref in zip(predictions, references):
        cand_tokens = tokenize(pred)
        ref_tokens = tokenize(ref)
        bleu_sum += bleu4(cand_tokens, ref_tokens)
        r1_sum += rouge_n(cand_tokens, ref_tokens, 1)[2]
        r2_sum += rouge_n(cand_tokens, ref_tokens, 2)[2]
        rl_sum += rouge_l(cand_tokens, ref_tokens)

    count = len(predictions)
    return ScoreReport(
        bleu4=bleu_sum / count,
        rouge1_f=r1_sum / count,
        rouge2_f=r2_sum / count,
        rougeL_f=rl_sum / count,
    )
