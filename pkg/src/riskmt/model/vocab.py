from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .kernels import EOS, UNK

RESERVED = ("<pad>", "<s>", "</s>", "<unk>")


class Vocab:
    """Token <-> id bijection with PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Iterable[str]):
        self.itos = list(RESERVED)
        for tok in tokens:
            if tok in RESERVED:
                continue
            if tok in self.itos:
                raise ValueError(f"duplicate token {tok!r}")
            self.itos.append(tok)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.itos) < 5:
            raise ValueError("vocabulary needs at least one non-reserved token")

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        seen = set()
        for sent in sentences:
            seen.update(sent)
        return cls(sorted(seen - set(RESERVED)))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str], strict: bool = False) -> np.ndarray:
        """Ids framed with a trailing EOS. Unknown tokens map to UNK unless strict."""
        ids = np.empty(len(tokens) + 1, dtype=np.int64)
        for i, tok in enumerate(tokens):
            idx = self.stoi.get(tok)
            if idx is None:
                if strict:
                    raise KeyError(f"token {tok!r} not in vocabulary")
                idx = UNK
            ids[i] = idx
        ids[-1] = EOS
        return ids

    def decode(self, ids) -> tuple:
        return tuple(self.itos[int(i)] for i in ids)
