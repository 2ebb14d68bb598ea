"""Sentence-level quality metrics and the orderings they induce.

All metrics take a tokenized candidate and a list of tokenized references
and return a score in [0, 1].
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

Tokens = Sequence[str]


def _check_inputs(candidate: Tokens, references: Sequence[Tokens]) -> None:
    if len(candidate) == 0:
        raise ValueError("empty candidate")
    if len(references) == 0:
        raise ValueError("empty reference list")
    if any(len(r) == 0 for r in references):
        raise ValueError("empty reference")


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_sentence(candidate: Tokens, references: Sequence[Tokens], max_n: int = 4) -> float:
    """Smoothed sentence BLEU.

    Modified n-gram precisions are clipped by the maximum count of each
    n-gram in any single reference. A zero precision for n >= 2 is floored
    to ``1 / (2 * len(candidate))``; a zero unigram precision gives 0.
    Orders longer than the candidate itself are skipped, so any sentence
    scores 1.0 against itself.
    """
    _check_inputs(candidate, references)
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    c = len(candidate)
    orders = min(max_n, c)
    log_sum = 0.0
    for n in range(1, orders + 1):
        cand_counts = _ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for gram, cnt in _ngrams(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        clipped = sum(min(cnt, max_ref[gram]) for gram, cnt in cand_counts.items())
        total = sum(cand_counts.values())
        if clipped == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (2.0 * c)
        else:
            p = clipped / total
        log_sum += math.log(p)
    # closest reference length, ties to the shorter one
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return min(1.0, bp * math.exp(log_sum / orders))


def _f1(overlap: float, cand_total: int, ref_total: int) -> float:
    if overlap == 0 or cand_total == 0 or ref_total == 0:
        return 0.0
    p = overlap / cand_total
    r = overlap / ref_total
    return 2 * p * r / (p + r)


def rouge2(candidate: Tokens, references: Sequence[Tokens]) -> float:
    """Bigram-overlap F1, maximised over references."""
    _check_inputs(candidate, references)
    if len(candidate) < 2:
        return 0.0
    cand = _ngrams(candidate, 2)
    cand_total = len(candidate) - 1
    best = 0.0
    for ref in references:
        ref_grams = _ngrams(ref, 2)
        overlap = sum((cand & ref_grams).values())
        best = max(best, _f1(overlap, cand_total, max(len(ref) - 1, 0)))
    return best


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, references: Sequence[Tokens]) -> float:
    """LCS-based F1, maximised over references."""
    _check_inputs(candidate, references)
    return max(_f1(lcs_length(candidate, ref), len(candidate), len(ref)) for ref in references)


class Metric(str, Enum):
    BLEU3 = "bleu3"
    BLEU4 = "bleu4"
    ROUGE2 = "rouge2"
    ROUGEL = "rougeL"

    def __call__(self, candidate: Tokens, references: Sequence[Tokens]) -> float:
        return METRIC_FUNCTIONS[self](candidate, references)


METRIC_FUNCTIONS: dict[Metric, Callable[[Tokens, Sequence[Tokens]], float]] = {
    Metric.BLEU3: lambda c, refs: bleu_sentence(c, refs, 3),
    Metric.BLEU4: lambda c, refs: bleu_sentence(c, refs, 4),
    Metric.ROUGE2: rouge2,
    Metric.ROUGEL: rouge_l,
}

DEFAULT_METRIC = Metric.BLEU4


def get_metric(name: str | Metric) -> Metric:
    try:
        return Metric(name)
    except ValueError:
        choices = ", ".join(m.value for m in Metric)
        raise ValueError(f"unknown metric {name!r}; expected one of {choices}") from None


def descending_order(scores: Sequence[float]) -> list[int]:
    """Indices sorted by descending score, ties by ascending index."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


@dataclass(frozen=True)
class QualityOrdering:
    order: tuple[int, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.order)

    @classmethod
    def from_scores(cls, scores: Sequence[float]) -> "QualityOrdering":
        return cls(tuple(descending_order(scores)), tuple(float(s) for s in scores))


def quality_order(
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
    metric: Metric | str = DEFAULT_METRIC,
) -> QualityOrdering:
    if not candidates:
        raise ValueError("no candidates to order")
    metric = get_metric(metric)
    return QualityOrdering.from_scores([metric(c, references) for c in candidates])


def kendall_tau(order_a: Sequence[int], order_b: Sequence[int]) -> float:
    """Kendall rank correlation between two rankings of the same items.

    Each argument lists item indices from best to worst.
    """
    if len(order_a) != len(order_b):
        raise ValueError(f"length mismatch: {len(order_a)} vs {len(order_b)}")
    n = len(order_a)
    if sorted(order_a) != sorted(order_b) or len(set(order_a)) != n:
        raise ValueError("orders are not permutations of the same items")
    if n < 2:
        raise ValueError("kendall tau needs at least two items")
    pos_b = {item: i for i, item in enumerate(order_b)}
    ranks = [pos_b[item] for item in order_a]
    net = 0
    for i in range(n):
        for j in range(i + 1, n):
            net += 1 if ranks[i] < ranks[j] else -1
    return net / (n * (n - 1) / 2)
