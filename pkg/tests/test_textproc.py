from hypothesis import given, settings, strategies as st

from riskmt.textproc import (BracketSpan, detokenize, find_bracket_spans, merge_sentences,
                             split_sentences, strip_bracket_tokens, tokenize)

WORDS = st.sampled_from(["a", "B", "cat", "Dog", ".", "?", "!", "[", "]", "x1", "Y"])
SEQS = st.lists(WORDS, max_size=20).map(tuple)


def _rejoin(tokens):
    # character-level oracle: glue punctuation back onto its neighbours
    out = " ".join(tokens)
    for p in (".", "?", "!", "]"):
        out = out.replace(" " + p, p)
    return out.replace("[ ", "[")


class TestTokenize:
    def test_empty(self):
        assert tokenize("") == ()
        assert tokenize("   \t ") == ()

    def test_plain(self):
        assert tokenize("a b") == ("a", "b")

    def test_title(self):
        line = "[Effects of X]."
        toks = tokenize(line)
        assert toks == ("[", "Effects", "of", "X", "]", ".")
        assert _rejoin(toks) == line

    def test_only_sentence_final_punct_detached(self):
        assert tokenize("e.g. fine!") == ("e.g", ".", "fine", "!")
        assert tokenize("3.5") == ("3.5",)

    @given(st.text(alphabet="ab .?![]\n\t", max_size=40))
    def test_round_trip(self, line):
        toks = tokenize(line)
        assert all(t and not any(c.isspace() for c in t) for t in toks)
        assert tokenize(detokenize(toks)) == toks


class TestSplitMerge:
    def test_examples(self):
        assert split_sentences(("Hello", ".", "World", ".")) == [("Hello", "."), ("World", ".")]
        assert split_sentences(("One", "sentence", ".")) == [("One", "sentence", ".")]
        assert split_sentences(("A", ".", "[", "B", "]", ".")) == [("A", "."), ("[", "B", "]", ".")]

    def test_lowercase_follower_does_not_split(self):
        assert split_sentences(("a", ".", "b")) == [("a", ".", "b")]

    def test_merge(self):
        assert merge_sentences([("A", "."), ("B", ".")]) == ("A", ".", "B", ".")
        assert merge_sentences([]) == ()

    @settings(max_examples=1000)
    @given(SEQS)
    def test_round_trip(self, seq):
        parts = split_sentences(seq)
        assert all(parts)
        assert merge_sentences(parts) == seq


class TestBrackets:
    def test_spans(self):
        assert find_bracket_spans(("[", "A", "B", "]")) == [BracketSpan(0, 4)]
        assert find_bracket_spans(("no", "brackets")) == []
        assert find_bracket_spans(("[", "A", "]", "x", "[", "B", "C", "]")) == [
            BracketSpan(0, 3), BracketSpan(4, 8)]

    def test_unmatched(self):
        assert find_bracket_spans(("[", "A")) == []
        assert find_bracket_spans(("A", "]", "[")) == []

    def test_nested_open_is_maximal(self):
        assert find_bracket_spans(("[", "a", "[", "b", "]")) == [BracketSpan(0, 5)]

    @given(SEQS)
    def test_span_invariants(self, seq):
        for sp in find_bracket_spans(seq):
            assert 0 <= sp.start < sp.end <= len(seq)
            assert seq[sp.start] == "[" and seq[sp.end - 1] == "]"

    def test_strip(self):
        assert strip_bracket_tokens(("[", "A", "]")) == ("A",)
        assert strip_bracket_tokens(("A", "B")) == ("A", "B")
        assert strip_bracket_tokens(("[", "x", "]", "[", "y", "]")) == ("x", "y")

    @given(SEQS)
    def test_strip_idempotent(self, seq):
        once = strip_bracket_tokens(seq)
        assert strip_bracket_tokens(once) == once
        assert [t for t in seq if t not in "[]"] == list(once)
