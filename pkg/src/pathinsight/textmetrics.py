"""Deterministic text metrics: tokenizer, ROUGE-1, and corpus redundancy scores."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Sequence

_SPLIT = re.compile(r"[^0-9a-z]+")


class InsufficientCorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every maximal run of non-alphanumeric characters.

    Only ASCII letters and digits count as alphanumeric, so the result does not
    depend on the Unicode tables of the running interpreter.
    """
    return [tok for tok in _SPLIT.split(text.lower()) if tok]


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def rouge1(a: str, b: str) -> float:
    """Unigram ROUGE F-measure with clipped counts.

    ``a`` plays the reference role (recall denominator) and ``b`` the candidate,
    though the F-measure itself is symmetric.
    """
    ta, tb = Counter(tokenize(a)), Counter(tokenize(b))
    len_a, len_b = sum(ta.values()), sum(tb.values())
    if not len_a or not len_b:
        return 0.0
    overlap = sum((ta & tb).values())
    if not overlap:
        return 0.0
    precision = overlap / len_b
    recall = overlap / len_a
    return 2 * precision * recall / (precision + recall)


def _require_corpus(sentences: Sequence[str]) -> None:
    if len(sentences) < 2:
        raise InsufficientCorpusError("insufficient corpus: need at least 2 sentences")


def avg_tfidf_cosine(sentences: Sequence[str]) -> float:
    """Mean pairwise cosine similarity of smoothed TF-IDF sentence vectors."""
    _require_corpus(sentences)
    counts = [Counter(tokenize(s)) for s in sentences]
    n_docs = len(counts)
    df: Counter[str] = Counter()
    for c in counts:
        df.update(c.keys())
    idf = {term: math.log((1 + n_docs) / (1 + d)) + 1.0 for term, d in df.items()}

    vectors = [{t: tf * idf[t] for t, tf in c.items()} for c in counts]
    norms = [math.sqrt(sum(w * w for w in v.values())) for v in vectors]

    total = 0.0
    pairs = 0
    for i, j in combinations(range(n_docs), 2):
        pairs += 1
        if not norms[i] or not norms[j]:
            continue
        small, large = sorted((vectors[i], vectors[j]), key=len)
        dot = sum(w * large.get(t, 0.0) for t, w in small.items())
        total += min(1.0, dot / (norms[i] * norms[j]))
    return total / pairs


def sentence_bleu(hypothesis: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    """BLEU of one tokenized hypothesis against several tokenized references.

    Uniform weights over orders 1..min(4, len(hypothesis)). An order n >= 2
    with no clipped matches gets add-one smoothing, (0 + 1) / (total + 1); zero
    unigram matches means no overlap at all and the score is 0.
    """
    hyp_len = len(hypothesis)
    if hyp_len == 0 or not references:
        return 0.0
    max_order = min(4, hyp_len)

    log_sum = 0.0
    for n in range(1, max_order + 1):
        hyp_counts = Counter(ngrams(hypothesis, n))
        max_ref: Counter[tuple[str, ...]] = Counter()
        for ref in references:
            for gram, c in Counter(ngrams(ref, n)).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        matched = sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
        total = hyp_len - n + 1
        if matched == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1)
        else:
            precision = matched / total
        log_sum += math.log(precision)

    ref_lens = [len(r) for r in references]
    closest = min(ref_lens, key=lambda r: (abs(r - hyp_len), r))
    brevity = 1.0 if hyp_len > closest else math.exp(1 - closest / hyp_len)
    return brevity * math.exp(log_sum / max_order)


def self_bleu(sentences: Sequence[str]) -> float:
    """Mean BLEU of each sentence scored against all the others."""
    _require_corpus(sentences)
    tokenized = [tokenize(s) for s in sentences]
    scores = []
    for i, hyp in enumerate(tokenized):
        refs = tokenized[:i] + tokenized[i + 1 :]
        scores.append(sentence_bleu(hyp, refs))
    return sum(scores) / len(scores)


def distinct2(sentences: Sequence[str]) -> float:
    """Unique bigrams over total bigrams, counting bigrams within sentences only."""
    bigrams: list[tuple[str, ...]] = []
    for s in sentences:
        bigrams.extend(ngrams(tokenize(s), 2))
    if not bigrams:
        raise InsufficientCorpusError("insufficient tokens: corpus has no bigrams")
    return len(set(bigrams)) / len(bigrams)


@dataclass(frozen=True)
class RedundancyReport:
    tfidf_cosine: float
    self_bleu: float
    distinct2: float
    sentence_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def redundancy_report(sentences: Sequence[str]) -> RedundancyReport:
    return RedundancyReport(
        tfidf_cosine=avg_tfidf_cosine(sentences),
        self_bleu=self_bleu(sentences),
        distinct2=distinct2(sentences),
        sentence_count=len(sentences),
    )
