import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riskmt.metrics import (corpus_bleu, document_cost, mean_sbleu_cost, sbleu_cost,
                            sentence_bleu_smoothed)

from oracles import bleu_oracle

TOKS = st.lists(st.sampled_from(list("abcde")), max_size=8)


class TestCorpusBleu:
    def test_perfect(self):
        refs = [("a", "b", "c", "d"), ("e", "f", "g", "h", "i")]
        s = corpus_bleu(refs, refs)
        assert s.score == 1.0 and s.brevity_penalty == 1.0

    def test_no_overlap(self):
        assert corpus_bleu([("a", "b")], [("c", "d")]).score == 0.0

    def test_clipping(self):
        # oracle value: clip = min(4, count_ref("the") = 1) -> p1 = 1/4
        s = corpus_bleu([("the",) * 4], [("the", "cat", "sat")])
        assert s.precisions[0] == pytest.approx(0.25, abs=1e-15)
        assert s.precisions[1] == 0.0
        assert s.score == 0.0

    def test_case_insensitive(self):
        assert corpus_bleu([("A", "B", "C", "D")], [("a", "b", "c", "d")]).score == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            corpus_bleu([("a",)], [])
        with pytest.raises(ValueError):
            corpus_bleu([], [])

    def test_empty_hypothesis(self):
        s = corpus_bleu([()], [("a",)])
        assert s.score == 0.0 and s.hyp_len == 0

    def test_exhaustive_small_grid_against_oracle(self):
        # every hypothesis/reference pair over a 2-letter alphabet, lengths <= 6,
        # plus a 5-letter alphabet with lengths <= 3
        seqs = [s for n in range(7) for s in itertools.product("ab", repeat=n)]
        seqs += [s for n in range(4) for s in itertools.product("abcde", repeat=n) if len(set(s)) > 2]
        rng = np.random.default_rng(0)
        refs = [s for s in seqs if s]
        for ref in refs[::7]:
            for hyp in seqs[::3]:
                got = corpus_bleu([hyp], [ref]).score
                want = bleu_oracle([hyp], [ref])[0]
                assert abs(got - want) <= 1e-12


class TestSentenceBleu:
    def test_perfect(self):
        assert sentence_bleu_smoothed(list("abcd"), list("abcd")).score == 1.0

    def test_empty_hyp(self):
        assert sentence_bleu_smoothed([], ["a"]).score == 0.0

    def test_empty_ref(self):
        with pytest.raises(ValueError):
            sentence_bleu_smoothed(["a"], [])

    def test_smoothing_example(self):
        # oracle: p = (2/3, 1/2, 1/2 [2^-1], 1/4 [2^-2, hyp too short]) -> 24 ** -0.25
        s = sentence_bleu_smoothed(["a", "b", "c"], ["a", "b", "d"])
        assert s.precisions == pytest.approx((2 / 3, 0.5, 0.5, 0.25), abs=1e-15)
        assert s.brevity_penalty == 1.0
        assert s.score == pytest.approx(0.4518010018049224, abs=1e-12)
        assert s.score == pytest.approx(bleu_oracle([["a", "b", "c"]], [["a", "b", "d"]], smooth=True)[0],
                                        abs=1e-12)

    @given(TOKS, TOKS.filter(bool))
    def test_matches_smoothed_oracle(self, hyp, ref):
        assert abs(sentence_bleu_smoothed(hyp, ref).score
                   - bleu_oracle([hyp], [ref], smooth=True)[0]) <= 1e-12

    @given(TOKS.filter(bool), TOKS.filter(bool))
    def test_corpus_equals_sentence_when_no_zero_orders(self, hyp, ref):
        c = corpus_bleu([hyp], [ref])
        if min(c.precisions) > 0:
            assert c.score == pytest.approx(sentence_bleu_smoothed(hyp, ref).score, abs=0, rel=1e-15)


class TestCosts:
    def test_sbleu_cost(self):
        assert sbleu_cost(list("abcd"), list("abcd")) == 0.0
        assert sbleu_cost(["a", "b"], ["c", "d"]) == 1.0
        assert sbleu_cost(["a", "b", "c"], ["a", "b", "d"]) == pytest.approx(1 - 0.4518010018049224)

    def test_document_cost(self):
        doc = [list("abcde"), list("xyz"), list("pqrs")]
        ref = [list("abcdf"), list("xywz"), list("pqrs")]
        assert document_cost(ref, ref) == 0.0
        assert document_cost([["q"], ["r"]], [["a"], ["b"]]) == 1.0
        # value frozen from the brute-force oracle
        assert document_cost(doc, ref) == pytest.approx(1 - 0.6902873362642153, abs=1e-12)
        with pytest.raises(ValueError):
            document_cost(doc, ref[:2])

    def test_mean_sbleu_single_segment(self):
        assert mean_sbleu_cost([list("abc")], [list("abd")]) == sbleu_cost(list("abc"), list("abd"))


class TestProperties:
    @given(TOKS, TOKS.filter(bool), st.permutations(list("abcde")))
    def test_bounds_and_relabeling(self, hyp, ref, perm):
        rename = dict(zip("abcde", perm))
        for fn in (lambda h, r: corpus_bleu([h], [r]).score,
                   lambda h, r: sentence_bleu_smoothed(h, r).score):
            s = fn(hyp, ref)
            assert 0.0 <= s <= 1.0
            assert fn([rename[t] for t in hyp], [rename[t] for t in ref]) == pytest.approx(s, abs=1e-15)

    @given(TOKS.filter(bool), st.integers(0, 8))
    def test_brevity_penalty_monotone(self, ref, cut):
        # growing a too-short hypothesis along the reference never lowers BP
        bps = [corpus_bleu([ref[:k]], [ref]).brevity_penalty for k in range(1, len(ref) + 1)]
        assert all(a <= b for a, b in zip(bps, bps[1:]))
        assert math.isclose(bps[-1], 1.0)
