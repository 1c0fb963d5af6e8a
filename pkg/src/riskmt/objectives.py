"""MLE, sentence-level MRT and document-level MRT: loss values and exact gradients.

Both risk objectives use the renormalised sharpened distribution over the
sampled candidates, ``Q(y_n) = P(y_n)^alpha / sum_m P(y_m)^alpha``, and treat
the candidate set (and, for doc-MRT, the document assignment) as fixed, so
the gradient flows only through the model log-probabilities:

    d risk = alpha * sum_n Q_n (cost_n - risk) * d ln P(y_n)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metrics import COSTS, sbleu_cost
from .model import EOS, Seq2Seq
from .model.params import ParamSet


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float = 0.6
    tau: float = 0.3
    n_samples: int = 8
    cost: str | None = None  # "sbleu" | "document"; None = objective default
    include_reference: bool = False
    tempered_q: bool = False  # score Q with the temperature-tau model instead of tau=1

    def __post_init__(self):
        if self.alpha <= 0 or self.tau <= 0:
            raise ValueError("alpha and tau must be > 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.cost not in (None, *COSTS):
            raise ValueError(f"unknown cost {self.cost!r}")

    def cost_fn(self, default: str):
        return COSTS[self.cost or default]

    @property
    def q_temperature(self) -> float:
        return self.tau if self.tempered_q else 1.0


@dataclass
class SampleSet:
    """N candidates per source sentence with their untempered log-probs."""

    sources: list  # EOS-framed id arrays
    references: list  # token tuples
    samples: list  # per sentence: list of N token tuples
    sample_ids: list  # per sentence: list of N id arrays
    log_probs: np.ndarray  # (S, N), at sampling time
    truncated: np.ndarray = field(default=None)
    # costs and documents depend only on the frozen samples; computed once
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        S = len(self.sources)
        if self.log_probs.ndim != 2 or self.log_probs.shape[0] != S:
            raise ValueError("log_probs must have shape (S, N)")
        N = self.log_probs.shape[1]
        if any(len(s) != N for s in self.samples) or any(len(s) != N for s in self.sample_ids):
            raise ValueError("every sentence needs the same number of samples")
        if not np.isfinite(self.log_probs).all():
            raise ValueError("non-finite sample log-probabilities")
        if self.truncated is None:
            self.truncated = np.zeros((S, N), dtype=bool)

    @property
    def S(self) -> int:
        return len(self.sources)

    @property
    def N(self) -> int:
        return self.log_probs.shape[1]

    def flat_pairs(self, order=None):
        """(source ids, sample ids) for every candidate, sentence-major."""
        srcs, tgts = [], []
        for s in range(self.S):
            for n in range(self.N):
                srcs.append(self.sources[s])
                tgts.append(self.sample_ids[s][n])
        return srcs, tgts


def draw_samples(model: Seq2Seq, pairs: Sequence, cfg: ObjectiveConfig,
                 rng: np.random.Generator) -> SampleSet:
    """Temperature-tau ancestral samples for each (source, reference) pair."""
    sources, refs, samples, ids, lps, trunc = [], [], [], [], [], []
    for pair in pairs:
        src, ref = (pair.source, pair.target) if hasattr(pair, "source") else pair
        src_ids = model.ids(src, strict=False)
        toks, lens, lp, tr = model.sample_ids(src_ids, cfg.tau, rng, cfg.n_samples)
        cand_ids = [np.append(toks[k, :lens[k]], EOS) for k in range(cfg.n_samples)]
        cands = [model.vocab.decode(toks[k, :lens[k]]) for k in range(cfg.n_samples)]
        lp = list(lp)
        tr = list(tr)
        if cfg.include_reference:
            ref_ids = model.ids(ref, strict=False)
            cand_ids.append(ref_ids)
            cands.append(tuple(ref))
            lp.append(model.log_prob_ids(src_ids, ref_ids))
            tr.append(False)
        sources.append(src_ids)
        refs.append(tuple(ref))
        samples.append(cands)
        ids.append(cand_ids)
        lps.append(lp)
        trunc.append(tr)
    return SampleSet(sources, refs, samples, ids, np.array(lps), np.array(trunc, dtype=bool))


def sharpened(log_probs: np.ndarray, alpha: float) -> np.ndarray:
    """Q proportional to P^alpha, normalised over the last axis."""
    z = alpha * np.asarray(log_probs, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    q = np.exp(z)
    return q / q.sum(axis=-1, keepdims=True)


def expected_risk(log_probs, costs, alpha: float):
    """Risk, Q and per-candidate gradient weights for one candidate set."""
    q = sharpened(log_probs, alpha)
    costs = np.asarray(costs, dtype=np.float64)
    risk = float(np.dot(q, costs))
    return risk, q, alpha * q * (costs - risk)


def _candidate_log_probs(model: Seq2Seq, samples: SampleSet, temperature: float) -> np.ndarray:
    srcs, tgts = samples.flat_pairs()
    return model.batch_log_prob(srcs, tgts, temperature=temperature).reshape(samples.S, samples.N)


def _weighted_grad(model: Seq2Seq, samples: SampleSet, weights: np.ndarray,
                   temperature: float) -> ParamSet:
    grad = model.params.zeros_like()
    srcs, tgts = samples.flat_pairs()
    model.batch_log_prob(srcs, tgts, weights.ravel(), grad, temperature)
    return grad


def mle_loss_and_grad(model: Seq2Seq, pairs: Sequence, want_grad: bool = True):
    """Summed negative log-likelihood under teacher forcing, and its gradient."""
    if not pairs:
        raise ValueError("empty batch")
    srcs, tgts = [], []
    for pair in pairs:
        src, tgt = (pair.source, pair.target) if hasattr(pair, "source") else pair
        srcs.append(model.ids(src))
        tgts.append(model.ids(tgt))
    if not want_grad:
        return -float(model.batch_log_prob(srcs, tgts).sum()), None
    grad = model.params.zeros_like()
    lps = model.batch_log_prob(srcs, tgts, -np.ones(len(srcs)), grad)
    return -float(lps.sum()), grad


def candidate_costs(samples: SampleSet, cost_fn=None) -> np.ndarray:
    cost_fn = cost_fn or (lambda h, r: sbleu_cost(h, r))
    return np.array([[cost_fn(h, ref) for h in cands]
                     for cands, ref in zip(samples.samples, samples.references)])


def mrt_loss_and_grad(model: Seq2Seq, samples: SampleSet, cfg: ObjectiveConfig,
                      want_grad: bool = True):
    """Expected sentence cost summed over the minibatch (grad is None if not wanted)."""
    name = cfg.cost or "sbleu"
    key = ("sentence_costs", name)
    if key not in samples._cache:
        cost = cfg.cost_fn("sbleu")
        samples._cache[key] = candidate_costs(samples, lambda h, r: cost([h], [r]))
    costs = samples._cache[key]
    lps = _candidate_log_probs(model, samples, cfg.q_temperature)
    risk = 0.0
    weights = np.zeros_like(lps)
    for s in range(samples.S):
        r, _, w = expected_risk(lps[s], costs[s], cfg.alpha)
        risk += r
        weights[s] = w
    if not want_grad:
        return risk, None
    return risk, _weighted_grad(model, samples, weights, cfg.q_temperature)


@dataclass
class DocumentBatch:
    """Rank-aligned documents: ``order[n, s]`` is the sample of sentence s in document n."""

    order: np.ndarray  # (N, S) sample indices
    documents: list  # N lists of S token tuples
    reference: list  # S reference token tuples
    log_probs: np.ndarray  # (N,) document log-probs from the frozen sample table
    costs: dict = field(default_factory=dict)  # cost name -> (N,) document costs

    @property
    def N(self) -> int:
        return self.order.shape[0]


def build_documents(samples: SampleSet) -> DocumentBatch:
    """Sort each sentence's candidates best-first and group them by rank.

    Key: sentence-level cost ascending, then higher log-prob, then index.
    """
    if "documents" in samples._cache:
        return samples._cache["documents"]
    S, N = samples.S, samples.N
    order = np.empty((N, S), dtype=np.int64)
    for s in range(S):
        ref = samples.references[s]
        keyed = sorted(range(N), key=lambda n: (sbleu_cost(samples.samples[s][n], ref),
                                                -samples.log_probs[s, n], n))
        order[:, s] = keyed
    docs = [[samples.samples[s][order[n, s]] for s in range(S)] for n in range(N)]
    doc_lps = np.array([sum(samples.log_probs[s, order[n, s]] for s in range(S)) for n in range(N)])
    docs = DocumentBatch(order, docs, list(samples.references), doc_lps)
    samples._cache["documents"] = docs
    return docs


def doc_mrt_loss_and_grad(model: Seq2Seq, samples: SampleSet, cfg: ObjectiveConfig,
                          docs: DocumentBatch | None = None, want_grad: bool = True):
    """Expected document cost over the N rank-aligned minibatch documents."""
    docs = build_documents(samples) if docs is None else docs
    name = cfg.cost or "document"
    if name not in docs.costs:
        cost = cfg.cost_fn("document")
        docs.costs[name] = np.array([cost(d, docs.reference) for d in docs.documents])
    doc_cost = docs.costs[name]
    lps = _candidate_log_probs(model, samples, cfg.q_temperature)
    S = samples.S
    doc_lp = np.array([sum(lps[s, docs.order[n, s]] for s in range(S)) for n in range(docs.N)])
    risk, _, w = expected_risk(doc_lp, doc_cost, cfg.alpha)
    if not want_grad:
        return risk, None
    weights = np.zeros_like(lps)
    for n in range(docs.N):
        for s in range(S):
            weights[s, docs.order[n, s]] += w[n]
    return risk, _weighted_grad(model, samples, weights, cfg.q_temperature)


def accumulate_gradients(grads: Sequence[ParamSet]) -> ParamSet:
    grads = list(grads)
    if not grads:
        raise ValueError("nothing to accumulate")
    total = grads[0].copy()
    for g in grads[1:]:
        total += g
    return total
