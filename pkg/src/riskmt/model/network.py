"""Token-level front end for the encoder-decoder kernels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .kernels import EOS
from .params import ModelConfig, ParamSet, init_params
from .vocab import Vocab


@dataclass(frozen=True)
class Sample:
    tokens: tuple
    log_prob: float  # under the untempered model
    truncated: bool  # max_len reached before EOS


def _frame(ids: np.ndarray) -> np.ndarray:
    """Cut an id array after its first EOS (appending one if absent)."""
    ids = np.asarray(ids, dtype=np.int64)
    hits = np.flatnonzero(ids == EOS)
    if hits.size:
        return np.ascontiguousarray(ids[:hits[0] + 1])
    return np.append(ids, EOS)


def pack(seqs: Sequence[np.ndarray]):
    """CSR-pack EOS-framed id arrays for the batch kernels."""
    off = np.zeros(len(seqs) + 1, dtype=np.int64)
    for i, s in enumerate(seqs):
        off[i + 1] = off[i] + len(s)
    flat = np.concatenate(seqs) if seqs else np.zeros(0, dtype=np.int64)
    return flat.astype(np.int64), off


class Seq2Seq:
    """Attention encoder-decoder bound to a vocabulary and a parameter set."""

    def __init__(self, config: ModelConfig, vocab: Vocab, params: ParamSet | None = None):
        if len(vocab) != config.vocab_size:
            raise ValueError(f"vocab has {len(vocab)} entries, config says {config.vocab_size}")
        self.config = config
        self.vocab = vocab
        self.params = init_params(config) if params is None else params
        if self.params.shapes != {k: tuple(v) for k, v in config.shapes().items()}:
            raise ValueError("parameter shapes do not match the model config")
        self.dims = (config.vocab_size, config.embed_dim, config.hidden_dim)

    @property
    def max_tokens(self) -> int:
        """Longest unframed sequence (EOS takes the last slot of max_len)."""
        return self.config.max_len - 1

    def with_params(self, params: ParamSet) -> "Seq2Seq":
        return Seq2Seq(self.config, self.vocab, params)

    # -- encoding -------------------------------------------------------------
    def ids(self, tokens: Sequence[str], strict: bool = True) -> np.ndarray:
        if len(tokens) > self.max_tokens:
            raise ValueError(f"sequence of {len(tokens)} tokens exceeds max_len={self.config.max_len}")
        return self.vocab.encode(tokens, strict=strict)

    # -- scoring --------------------------------------------------------------
    def log_prob(self, source, target, temperature: float = 1.0) -> float:
        return self.log_prob_ids(self.ids(source), self.ids(target), temperature)

    def log_prob_ids(self, src_ids, tgt_ids, temperature: float = 1.0) -> float:
        src, tgt = _frame(src_ids), _frame(tgt_ids)
        V, D, H = self.dims
        return kernels.pair_logprob(self.params.flat, V, D, H, src, tgt, float(temperature),
                                    0.0, self.params.flat, False)

    def grad_log_prob(self, source, target, temperature: float = 1.0) -> ParamSet:
        grad = self.params.zeros_like()
        V, D, H = self.dims
        kernels.pair_logprob(self.params.flat, V, D, H, self.ids(source), self.ids(target),
                             float(temperature), 1.0, grad.flat, True)
        return grad

    def batch_log_prob(self, srcs, tgts, weights=None, grad: ParamSet | None = None,
                       temperature: float = 1.0) -> np.ndarray:
        """Log-probs of id-array pairs; with ``grad`` also adds sum_k w_k d lnP_k."""
        s_flat, s_off = pack([_frame(s) for s in srcs])
        t_flat, t_off = pack([_frame(t) for t in tgts])
        want = grad is not None
        w = np.ones(len(srcs)) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
        V, D, H = self.dims
        target = grad.flat if want else self.params.flat
        return kernels.batch_logprob(self.params.flat, V, D, H, s_flat, s_off, t_flat, t_off,
                                     float(temperature), w, target, want)

    # -- decoding -------------------------------------------------------------
    def sample_ids(self, src_ids, temperature: float, rng: np.random.Generator, n: int = 1):
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        uniforms = rng.random((n, self.max_tokens))
        V, D, H = self.dims
        return kernels.sample_many(self.params.flat, V, D, H, _frame(src_ids),
                                   float(temperature), uniforms, self.max_tokens)

    def sample(self, source, temperature: float, rng: np.random.Generator, n: int = 1) -> list:
        toks, lens, lps, trunc = self.sample_ids(self.ids(source, strict=False), temperature, rng, n)
        return [Sample(self.vocab.decode(toks[k, :lens[k]]), float(lps[k]), bool(trunc[k]))
                for k in range(n)]

    def greedy_ids(self, src_ids):
        V, D, H = self.dims
        return kernels.greedy(self.params.flat, V, D, H, _frame(src_ids), self.max_tokens)

    def greedy(self, source) -> tuple:
        toks, _ = self.greedy_ids(self.ids(source, strict=False))
        return self.vocab.decode(toks)

    def beam_ids(self, src_ids, beam_size: int = 4):
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        V, D, H = self.dims
        return kernels.beam(self.params.flat, V, D, H, _frame(src_ids), int(beam_size),
                            self.max_tokens)

    def beam_search(self, source, beam_size: int = 4) -> tuple:
        toks, _ = self.beam_ids(self.ids(source, strict=False), beam_size)
        return self.vocab.decode(toks)
