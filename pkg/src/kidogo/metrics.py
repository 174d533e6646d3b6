"""Corpus BLEU and macro-F1.

BLEU is the corpus-level geometric mean of modified 1-4-gram precisions
times the brevity penalty exp(min(0, 1 - ref_len/hyp_len)). The smoothing
rule is fixed: when a precision numerator for n >= 2 is zero, both numerator
and denominator get +1 (an empty denominator therefore contributes a factor
of one). A zero unigram precision or empty hypothesis corpus scores 0.
Tokenization splits punctuation from words, then whitespace.
"""

from __future__ import annotations

import math
import re
from collections import Counter

from .errors import CorpusMismatch

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
MAX_ORDER = 4


def bleu_tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: list[str], references: list[str]) -> float:
    """Corpus BLEU-4 in [0, 100], reported to full precision."""
    if len(hypotheses) != len(references):
        raise CorpusMismatch(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not references or any(not r.strip() for r in references):
        raise CorpusMismatch("references must be non-empty")

    hyp_len = 0
    ref_len = 0
    numerators = [0] * MAX_ORDER
    denominators = [0] * MAX_ORDER
    for hyp, ref in zip(hypotheses, references):
        hyp_toks = bleu_tokenize(hyp)
        ref_toks = bleu_tokenize(ref)
        hyp_len += len(hyp_toks)
        ref_len += len(ref_toks)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp_toks, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref_toks, n)
            numerators[n - 1] += sum(min(c, ref_counts[g])
                                     for g, c in hyp_counts.items())
            denominators[n - 1] += sum(hyp_counts.values())

    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, MAX_ORDER + 1):
        num, den = numerators[n - 1], denominators[n - 1]
        if num == 0:
            if n == 1:
                return 0.0
            num, den = num + 1, den + 1
        log_sum += math.log(num / den)
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_sum / MAX_ORDER)


def macro_f1(predictions: list[str], golds: list[str],
             labels=None) -> float:
    """Unweighted mean of per-label F1 in [0, 100]; labels never seen in
    either list still count (with F1 zero) when passed explicitly."""
    if len(predictions) != len(golds):
        raise CorpusMismatch(
            f"{len(predictions)} predictions vs {len(golds)} golds")
    if labels is None:
        labels = sorted(set(golds) | set(predictions))
    if not labels:
        return 0.0
    scores = []
    for label in labels:
        tp = sum(1 for p, g in zip(predictions, golds) if p == label == g)
        fp = sum(1 for p, g in zip(predictions, golds) if p == label != g)
        fn = sum(1 for p, g in zip(predictions, golds) if g == label != p)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        scores.append(f1)
    return 100.0 * sum(scores) / len(scores)


def accuracy(predictions, golds) -> float:
    if len(predictions) != len(golds):
        raise CorpusMismatch(
            f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        return 0.0
    hits = sum(1 for p, g in zip(predictions, golds) if p == g)
    return 100.0 * hits / len(golds)
