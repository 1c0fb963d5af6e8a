"""Tokenization, sentence splitting and bracket-span helpers.

Token sequences are plain tuples of strings throughout the package.
"""
from __future__ import annotations

import re
from typing import NamedTuple, Sequence

TokenSeq = tuple  # tuple[str, ...]

TERMINALS = frozenset({".", "?", "!"})
OPEN, CLOSE = "[", "]"

_BRACKETS = re.compile(r"([\[\]])")


class BracketSpan(NamedTuple):
    start: int  # index of "[" (inclusive)
    end: int  # one past the index of "]"

    def __len__(self):
        return self.end - self.start

    @property
    def inner(self) -> int:
        """Number of tokens strictly between the brackets."""
        return self.end - self.start - 2


def _split_word(word: str) -> list[str]:
    out = []
    for piece in _BRACKETS.split(word):
        if not piece:
            continue
        if piece in (OPEN, CLOSE):
            out.append(piece)
            continue
        # peel trailing sentence terminals ("word." -> "word", ".")
        tail = []
        while len(piece) > 1 and piece[-1] in TERMINALS:
            tail.append(piece[-1])
            piece = piece[:-1]
        out.append(piece)
        out.extend(reversed(tail))
    return out


def tokenize(line: str) -> TokenSeq:
    """Split on whitespace, then detach brackets and sentence-final punctuation.

    >>> tokenize("[Effects of X].")
    ('[', 'Effects', 'of', 'X', ']', '.')
    """
    tokens: list[str] = []
    for word in line.split():
        tokens.extend(_split_word(word))
    return tuple(tokens)


def detokenize(seq: Sequence[str]) -> str:
    return " ".join(seq)


def split_sentences(seq: Sequence[str]) -> list[TokenSeq]:
    """Break after a terminal token followed by a capitalised token or "["."""
    seq = tuple(seq)
    if not seq:
        return []
    parts = []
    start = 0
    for i in range(len(seq) - 1):
        nxt = seq[i + 1]
        if seq[i] in TERMINALS and (nxt == OPEN or nxt[:1].isupper()):
            parts.append(seq[start:i + 1])
            start = i + 1
    parts.append(seq[start:])
    return parts


def merge_sentences(parts: Sequence[Sequence[str]]) -> TokenSeq:
    merged: list[str] = []
    for part in parts:
        merged.extend(part)
    return tuple(merged)


def find_bracket_spans(seq: Sequence[str]) -> list[BracketSpan]:
    """Non-nested spans from each "[" to the next "]", scanned left to right.

    A "[" seen while a span is already open is treated as an ordinary token,
    so spans are maximal; unmatched brackets produce nothing.
    """
    spans = []
    start = None
    for i, tok in enumerate(seq):
        if tok == OPEN:
            if start is None:
                start = i
        elif tok == CLOSE and start is not None:
            spans.append(BracketSpan(start, i + 1))
            start = None
    return spans


def strip_bracket_tokens(seq: Sequence[str]) -> TokenSeq:
    return tuple(tok for tok in seq if tok not in (OPEN, CLOSE))
