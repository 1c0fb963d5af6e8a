"""BLEU (corpus and smoothed sentence level) and the costs built on it."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    def format(self) -> str:
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (f"BLEU={100 * self.score:.2f} BP={self.brevity_penalty:.4f} "
                f"p1..p4={ps} hyp_len={self.hyp_len} ref_len={self.ref_len}")


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _lower(seq):
    return [t.lower() for t in seq]


def _segment_stats(hyp, ref, max_order):
    """Clipped matches and hypothesis n-gram totals for one segment."""
    matches = [0] * max_order
    totals = [0] * max_order
    for n in range(1, max_order + 1):
        h = ngram_counts(hyp, n)
        r = ngram_counts(ref, n)
        matches[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        totals[n - 1] = max(0, len(hyp) - n + 1)
    return matches, totals


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def corpus_bleu(hyps: Sequence[Sequence[str]], refs: Sequence[Sequence[str]],
                max_order: int = MAX_ORDER) -> BleuScore:
    """Unsmoothed BLEU with n-gram statistics pooled over all segments."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ValueError("corpus_bleu needs at least one segment")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp, ref = _lower(hyp), _lower(ref)
        m, t = _segment_stats(hyp, ref, max_order)
        for k in range(max_order):
            matches[k] += m[k]
            totals[k] += t[k]
        hyp_len += len(hyp)
        ref_len += len(ref)

    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    bp = brevity_penalty(hyp_len, ref_len)
    if hyp_len == 0 or min(matches) == 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_order)
    return BleuScore(score, precisions, bp, hyp_len, ref_len)


def sentence_bleu_smoothed(hyp: Sequence[str], ref: Sequence[str],
                           max_order: int = MAX_ORDER) -> BleuScore:
    """Single-segment BLEU; an order with no matches gets precision 2**-k.

    k counts the zero-match orders seen so far (starting at 1). Orders the
    hypothesis is too short to have count as zero-match. Without a single
    unigram match there is nothing to smooth and the score is 0.
    """
    if len(ref) == 0:
        raise ValueError("empty reference")
    hyp, ref = _lower(hyp), _lower(ref)
    if not hyp:
        return BleuScore(0.0, (0.0,) * max_order, 0.0, 0, len(ref))
    matches, totals = _segment_stats(hyp, ref, max_order)
    if matches[0] == 0:
        return BleuScore(0.0, (0.0,) * max_order, brevity_penalty(len(hyp), len(ref)),
                         len(hyp), len(ref))
    precisions = []
    invcnt = 1
    for m, t in zip(matches, totals):
        if m == 0:
            precisions.append(0.5 ** invcnt)
            invcnt += 1
        else:
            precisions.append(m / t)
    bp = brevity_penalty(len(hyp), len(ref))
    score = bp * math.exp(sum(math.log(p) for p in precisions) / max_order)
    return BleuScore(score, tuple(precisions), bp, len(hyp), len(ref))


def sbleu_cost(hyp, ref) -> float:
    return 1.0 - sentence_bleu_smoothed(hyp, ref).score


def document_cost(doc: Sequence[Sequence[str]], ref_doc: Sequence[Sequence[str]]) -> float:
    """1 - BLEU of a whole minibatch-level document against its references."""
    return 1.0 - corpus_bleu(doc, ref_doc).score


def mean_sbleu_cost(doc, ref_doc) -> float:
    """Per-segment cost averaged over a document (equals sbleu_cost when S=1)."""
    if len(doc) != len(ref_doc):
        raise ValueError(f"{len(doc)} segments vs {len(ref_doc)} references")
    return sum(sbleu_cost(h, r) for h, r in zip(doc, ref_doc)) / len(doc)


COSTS = {"sbleu": mean_sbleu_cost, "document": document_cost}
