"""Synthetic parallel corpora with title noise, and the corpus filters.

The base task is a token cipher with local reordering: every source word is
mapped through a fixed permutation into the target language and adjacent
target positions (0,1), (2,3), ... are swapped. Title noise prepends a
bracketed title, drawn from a vocabulary disjoint from the body words, to the
source side; optionally a share of those titled pairs also carry the title's
translation on the target side.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .textproc import CLOSE, OPEN, find_bracket_spans

# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class ParallelPair:
    source: tuple
    target: tuple
    id: int


@dataclass
class Corpus:
    pairs: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = tuple(self.pairs)
        for i, p in enumerate(self.pairs):
            if p.id != i:
                raise ValueError(f"pair ids must be dense 0..n-1 (pair {i} has id {p.id})")

    @classmethod
    def from_sides(cls, sources, targets, metadata=None) -> "Corpus":
        sources, targets = list(sources), list(targets)
        if len(sources) != len(targets):
            raise ValueError(f"{len(sources)} source lines vs {len(targets)} target lines")
        pairs = [ParallelPair(tuple(s), tuple(t), i) for i, (s, t) in enumerate(zip(sources, targets))]
        return cls(tuple(pairs), dict(metadata or {}))

    def subset(self, keep: Iterable[int]) -> "Corpus":
        """Surviving pairs in order, renumbered densely; tokens untouched."""
        pairs = [ParallelPair(self.pairs[i].source, self.pairs[i].target, j)
                 for j, i in enumerate(keep)]
        return Corpus(tuple(pairs), dict(self.metadata))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def sources(self) -> list:
        return [p.source for p in self.pairs]

    def targets(self) -> list:
        return [p.target for p in self.pairs]


def default_title_vocab(size: int = 16) -> tuple:
    return tuple(f"u{i}" for i in range(size))


@dataclass(frozen=True)
class NoiseSpec:
    title_probability: float = 0.0
    title_length_range: tuple = (3, 6)
    title_vocab: tuple = field(default_factory=default_title_vocab)
    seed: int = 0
    # share of titled pairs whose target also carries the bracketed title
    # translation (the well-aligned case); the rest are source-only titles
    aligned_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.title_probability <= 1.0:
            raise ValueError("title_probability must be in [0, 1]")
        if not 0.0 <= self.aligned_fraction <= 1.0:
            raise ValueError("aligned_fraction must be in [0, 1]")
        lo, hi = self.title_length_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad title_length_range {self.title_length_range}")
        if not self.title_vocab:
            raise ValueError("title_vocab is empty")
        if len(set(self.title_vocab)) != len(self.title_vocab):
            raise ValueError("title_vocab has duplicates")
        if OPEN in self.title_vocab or CLOSE in self.title_vocab:
            raise ValueError("brackets cannot be title words")


def swap_adjacent(seq: Sequence) -> tuple:
    out = list(seq)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return tuple(out)


@dataclass(frozen=True)
class Cipher:
    """Word-level mapping source -> target for body and title vocabularies."""

    mapping: dict
    body_source: tuple
    body_target: tuple
    title_source: tuple
    title_target: tuple

    @classmethod
    def make(cls, vocab_size: int, title_vocab: Sequence[str], seed: int = 0) -> "Cipher":
        rng = np.random.default_rng(seed)
        body_source = tuple(f"x{i}" for i in range(vocab_size))
        body_target = tuple(f"y{i}" for i in range(vocab_size))
        title_source = tuple(title_vocab)
        title_target = tuple(f"v{i}" for i in range(len(title_source)))
        overlap = set(title_source) & (set(body_source) | set(body_target) | set(title_target))
        if overlap:
            raise ValueError(f"title vocabulary overlaps body vocabulary: {sorted(overlap)[:5]}")
        perm = rng.permutation(vocab_size)
        tperm = rng.permutation(len(title_source))
        mapping = {s: body_target[perm[i]] for i, s in enumerate(body_source)}
        mapping.update({s: title_target[tperm[i]] for i, s in enumerate(title_source)})
        return cls(mapping, body_source, body_target, title_source, title_target)

    def map(self, tokens: Sequence[str]) -> tuple:
        return tuple(self.mapping.get(t, t) for t in tokens)

    def translate_body(self, body: Sequence[str]) -> tuple:
        return swap_adjacent(self.map(body))

    def translate(self, source: Sequence[str]) -> tuple:
        """Reference translation of a source line, titles included."""
        spans = find_bracket_spans(source)
        if spans and spans[0].start == 0:
            end = spans[0].end
            title = source[1:end - 1]
            return (OPEN,) + self.map(title) + (CLOSE,) + self.translate_body(source[end:])
        return self.translate_body(source)

    @property
    def source_vocab(self) -> frozenset:
        return frozenset(self.body_source) | frozenset(self.title_source)

    @property
    def target_vocab(self) -> frozenset:
        return frozenset(self.body_target) | frozenset(self.title_target)

    def to_lines(self) -> list:
        return [f"{s} {t}" for s, t in self.mapping.items()]


def generate_corpus(size: int, vocab_size: int, length_range: tuple, noise: NoiseSpec,
                    seed: int, cipher_seed: int = 0) -> Corpus:
    """Sample a cipher corpus; ``seed`` drives sentences, ``noise.seed`` titles.

    The cipher itself depends only on ``vocab_size``, the title vocabulary and
    ``cipher_seed``, so train/dev/test sets drawn with different seeds share it.
    """
    if vocab_size < 4:
        raise ValueError("vocab_size must be >= 4")
    if size < 1:
        raise ValueError("size must be >= 1")
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ValueError(f"bad length_range {length_range}")
    cipher = Cipher.make(vocab_size, noise.title_vocab, cipher_seed)
    rng = np.random.default_rng(seed)
    nrng = np.random.default_rng([noise.seed, seed])
    tlo, thi = noise.title_length_range

    pairs = []
    titled, aligned = [], []
    for i in range(size):
        n = int(rng.integers(lo, hi + 1))
        body = tuple(cipher.body_source[j] for j in rng.integers(0, vocab_size, n))
        source, target = body, cipher.translate_body(body)
        has_title = nrng.random() < noise.title_probability
        k = int(nrng.integers(tlo, thi + 1))
        words = nrng.integers(0, len(noise.title_vocab), k)
        is_aligned = nrng.random() < noise.aligned_fraction
        if has_title:
            title = tuple(noise.title_vocab[j] for j in words)
            source = (OPEN,) + title + (CLOSE,) + body
            titled.append(i)
            if is_aligned:
                target = (OPEN,) + cipher.map(title) + (CLOSE,) + target
                aligned.append(i)
        pairs.append(ParallelPair(source, target, i))

    metadata = {
        "seed": seed,
        "cipher_seed": cipher_seed,
        "size": size,
        "vocab_size": vocab_size,
        "length_range": f"{lo},{hi}",
        "title_probability": noise.title_probability,
        "title_length_range": f"{tlo},{thi}",
        "title_vocab_size": len(noise.title_vocab),
        "aligned_fraction": noise.aligned_fraction,
        "noise_seed": noise.seed,
        "titled": len(titled),
        "aligned_titles": len(aligned),
        "titled_ids": tuple(titled),
        "cipher": cipher,
    }
    return Corpus(tuple(pairs), metadata)


def count_titled(corpus: Corpus) -> int:
    """Independent audit: pairs whose source has a multi-token bracket span."""
    return sum(1 for p in corpus if any(s.inner >= 2 for s in find_bracket_spans(p.source)))


# --------------------------------------------------------------------------
# filtering


@dataclass
class FilterReport:
    input: int
    kept: int
    dropped: dict = field(default_factory=dict)  # rule name -> count, in order

    def __post_init__(self):
        if self.kept + sum(self.dropped.values()) != self.input:
            raise ValueError("kept + dropped must equal input size")

    @property
    def retention(self) -> float:
        return self.kept / self.input if self.input else 1.0

    def format(self) -> str:
        lines = [f"rule={name} dropped={n}" for name, n in self.dropped.items()]
        lines.append(f"kept={self.kept}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "FilterReport":
        dropped = {}
        kept = None
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = dict(kv.split("=", 1) for kv in line.split())
            if "rule" in fields:
                dropped[fields["rule"]] = int(fields["dropped"])
            elif "kept" in fields:
                kept = int(fields["kept"])
        if kept is None:
            raise ValueError("report has no kept= line")
        return cls(kept + sum(dropped.values()), kept, dropped)


def _apply(c: Corpus, name: str, drop: Callable[[ParallelPair], bool]):
    keep = [i for i, p in enumerate(c.pairs) if not drop(p)]
    return c.subset(keep), FilterReport(len(c), len(keep), {name: len(c) - len(keep)})


def filter_duplicates(c: Corpus):
    seen = set()

    def drop(p):
        key = (p.source, p.target)
        if key in seen:
            return True
        seen.add(key)
        return False

    return _apply(c, "duplicates", drop)


def filter_length_ratio(c: Corpus, max_ratio: float = 3.5):
    """Drop pairs whose length ratio exceeds ``max_ratio`` either way (strict)."""
    if max_ratio <= 1:
        raise ValueError("max_ratio must be > 1")

    def drop(p):
        ls, lt = len(p.source), len(p.target)
        if ls == 0 or lt == 0:
            return True
        return ls / lt > max_ratio or lt / ls > max_ratio

    return _apply(c, "ratio", drop)


def filter_max_length(c: Corpus, max_tokens: int = 120):
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    return _apply(c, "max_length", lambda p: len(p.source) > max_tokens or len(p.target) > max_tokens)


def has_title(seq) -> bool:
    return any(span.inner >= 2 for span in find_bracket_spans(seq))


def filter_titles(c: Corpus):
    """The aggressive "no-title" rule: any side with >= 2 bracketed tokens."""
    return _apply(c, "titles", lambda p: has_title(p.source) or has_title(p.target))


class Lang(enum.Enum):
    SOURCE = "source"
    TARGET = "target"
    UNKNOWN = "unknown"


class VocabularyDetector:
    """Labels a sentence by which (disjoint) vocabulary covers more than ``margin`` of it."""

    def __init__(self, source_vocab, target_vocab, margin: float = 0.5):
        self.source_vocab = frozenset(source_vocab)
        self.target_vocab = frozenset(target_vocab)
        if self.source_vocab & self.target_vocab:
            raise ValueError("language vocabularies must be disjoint")
        self.margin = margin

    @classmethod
    def from_cipher(cls, cipher: Cipher, margin: float = 0.5):
        return cls(cipher.source_vocab, cipher.target_vocab, margin)

    def __call__(self, seq) -> Lang:
        if not seq:
            return Lang.UNKNOWN
        n = len(seq)
        src = sum(t in self.source_vocab for t in seq) / n
        tgt = sum(t in self.target_vocab for t in seq) / n
        if src > self.margin and src > tgt:
            return Lang.SOURCE
        if tgt > self.margin and tgt > src:
            return Lang.TARGET
        return Lang.UNKNOWN


def filter_language_direction(c: Corpus, detector: Callable, mode: str = "or"):
    """Drop pairs whose source looks like the target language and/or vice versa.

    ``mode="or"`` drops if either directional check fires, ``"and"`` only if
    both do. Unknown detections never drop.
    """
    if mode not in ("or", "and"):
        raise ValueError("mode must be 'or' or 'and'")

    def drop(p):
        a = detector(p.source) == Lang.TARGET
        b = detector(p.target) == Lang.SOURCE
        return (a or b) if mode == "or" else (a and b)

    return _apply(c, "language", drop)


DEFAULT_RULES = ("language", "duplicates", "ratio", "max_length")


def make_rule(name: str, detector=None, max_ratio: float = 3.5, max_tokens: int = 120,
              lang_mode: str = "or"):
    if name == "language":
        if detector is None:
            raise ValueError("the language rule needs a detector")
        return lambda c: filter_language_direction(c, detector, lang_mode)
    if name == "duplicates":
        return filter_duplicates
    if name == "ratio":
        return lambda c: filter_length_ratio(c, max_ratio)
    if name == "max_length":
        return lambda c: filter_max_length(c, max_tokens)
    if name == "titles":
        return filter_titles
    raise ValueError(f"unknown filter rule {name!r}")


def run_pipeline(c: Corpus, rules: Sequence, **options):
    """Apply rules in order; a dropped pair is charged to the first rule that drops it.

    ``rules`` may mix rule names (see ``make_rule``) and callables returning
    ``(Corpus, FilterReport)``.
    """
    report = FilterReport(len(c), len(c), {})
    current = c
    for rule in rules:
        fn = make_rule(rule, **options) if isinstance(rule, str) else rule
        current, r = fn(current)
        for name, n in r.dropped.items():
            report.dropped[name] = report.dropped.get(name, 0) + n
        report.kept = r.kept
    report.__post_init__()
    return current, report


# --------------------------------------------------------------------------
# files


def write_corpus(prefix, corpus: Corpus) -> None:
    prefix = str(prefix)
    with open(prefix + ".src", "w", encoding="utf-8", newline="\n") as fs, \
            open(prefix + ".tgt", "w", encoding="utf-8", newline="\n") as ft:
        for p in corpus:
            fs.write(" ".join(p.source) + "\n")
            ft.write(" ".join(p.target) + "\n")


def read_lines(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [tuple(line.split()) for line in f.read().splitlines()]


def read_corpus(prefix) -> Corpus:
    prefix = str(prefix)
    src = read_lines(prefix + ".src")
    tgt = read_lines(prefix + ".tgt")
    if len(src) != len(tgt):
        raise ValueError(f"{prefix}: {len(src)} source lines vs {len(tgt)} target lines")
    corpus = Corpus.from_sides(src, tgt)
    manifest = Path(prefix + ".manifest")
    if manifest.exists():
        corpus.metadata.update(read_manifest(manifest))
    return corpus


def write_manifest(path, corpus: Corpus) -> None:
    """Key=value noise statistics plus the cipher table (one ``cipher=`` line per word)."""
    meta = corpus.metadata
    lines = []
    for key, value in meta.items():
        if key in ("cipher", "titled_ids"):
            continue
        lines.append(f"{key}={value}")
    lines.append(f"titled_scan={count_titled(corpus)}")
    lines.append("titled_ids=" + ",".join(map(str, meta.get("titled_ids", ()))))
    cipher = meta.get("cipher")
    if cipher is not None:
        for kind, words in (("body_source", cipher.body_source), ("body_target", cipher.body_target),
                            ("title_source", cipher.title_source), ("title_target", cipher.title_target)):
            lines.append(f"{kind}=" + " ".join(words))
        lines.extend(f"cipher={s}:{t}" for s, t in cipher.mapping.items())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    meta: dict = {}
    mapping = {}
    words = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if key == "cipher":
            s, t = value.split(":")
            mapping[s] = t
        elif key in ("body_source", "body_target", "title_source", "title_target"):
            words[key] = tuple(value.split())
        elif key == "titled_ids":
            meta[key] = tuple(int(x) for x in value.split(",") if x)
        else:
            meta[key] = value
    if mapping:
        meta["cipher"] = Cipher(mapping, **words)
    return meta
