"""Title-coverage evaluation and the MLE vs doc-MRT exposure-bias study.

A titled test sentence counts as covered when its translation contains the
cipher images of at least half of the source title's words. Title and body
vocabularies are disjoint, so the check is exact.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Cipher, NoiseSpec, filter_titles, generate_corpus
from .metrics import corpus_bleu
from .model import ModelConfig, Seq2Seq, Vocab
from .model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .textproc import find_bracket_spans
from .training import TrainConfig, decode_corpus, finetune, train

log = logging.getLogger(__name__)

Translate = Callable[[Sequence[Sequence[str]]], list]


def title_words(source: Sequence[str]) -> tuple:
    """Words inside the first multi-token bracket span, or () if there is none."""
    for span in find_bracket_spans(source):
        if span.inner >= 2:
            return tuple(source[span.start + 1:span.end - 1])
    return ()


def covered_share(source, hyp, cipher: Cipher) -> float:
    title = title_words(source)
    if not title:
        return 0.0
    present = set(hyp)
    return sum(cipher.mapping[w] in present for w in title) / len(title)


def title_coverage(sources, hyps, cipher: Cipher, threshold: float = 0.5) -> tuple[float, float]:
    """(coverage rate at ``threshold``, exact-coverage rate) over titled sources."""
    shares = [covered_share(s, h, cipher) for s, h in zip(sources, hyps) if title_words(s)]
    if not shares:
        return 0.0, 0.0
    return (sum(x >= threshold for x in shares) / len(shares),
            sum(x == 1.0 for x in shares) / len(shares))


@dataclass(frozen=True)
class BiasRow:
    name: str
    clean_bleu: float
    titled_bleu: float
    coverage: float
    exact_coverage: float

    def format(self) -> str:
        return (f"model={self.name} clean_bleu={100 * self.clean_bleu:.4f} "
                f"titled_bleu={100 * self.titled_bleu:.4f} coverage={self.coverage:.4f} "
                f"exact_coverage={self.exact_coverage:.4f}")

    @classmethod
    def parse(cls, line: str) -> "BiasRow":
        fields = dict(item.split("=", 1) for item in line.split())
        try:
            return cls(fields["model"], float(fields["clean_bleu"]) / 100,
                       float(fields["titled_bleu"]) / 100, float(fields["coverage"]),
                       float(fields["exact_coverage"]))
        except KeyError as e:
            raise ValueError(f"bias report line lacks {e}: {line!r}") from None


def format_report(rows: Sequence[BiasRow]) -> str:
    return "".join(r.format() + "\n" for r in rows)


def parse_report(text: str) -> list[BiasRow]:
    return [BiasRow.parse(line) for line in text.splitlines() if line.strip()]


def bias_row(name: str, translate: Translate, titled, clean, cipher: Cipher,
             threshold: float = 0.5) -> BiasRow:
    clean_hyps = translate(clean.sources())
    titled_hyps = translate(titled.sources())
    cov, exact = title_coverage(titled.sources(), titled_hyps, cipher, threshold)
    return BiasRow(name, corpus_bleu(clean_hyps, clean.targets()).score,
                   corpus_bleu(titled_hyps, titled.targets()).score, cov, exact)


def cipher_oracle(cipher: Cipher) -> Translate:
    """A perfect translator: the reference mapping applied to every source."""
    return lambda sources: [cipher.translate(s) for s in sources]


def model_translator(model: Seq2Seq, beam_size: int = 4) -> Translate:
    return lambda sources: decode_corpus(model, sources, beam_size)


# --------------------------------------------------------------------------
# the study


@dataclass(frozen=True)
class StudyConfig:
    vocab_size: int = 20
    length_range: tuple = (4, 8)
    train_size: int = 20000
    eval_size: int = 500
    title_probability: float = 0.3
    aligned_fraction: float = 0.5
    embed_dim: int = 16
    hidden_dim: int = 32
    max_len: int = 24
    init_scale: float = 0.3
    base: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=2e-3, max_updates=4000, checkpoint_every=200))
    # fine-tuning: MLE keeps 256-token micro-batches x 4; doc-MRT uses 4x smaller
    # micro-batches (its documents) with 4x more accumulation, same update size
    tuned_mle: TrainConfig = field(default_factory=lambda: TrainConfig(
        max_updates=2000, checkpoint_every=50))
    tuned_doc_mrt: TrainConfig = field(default_factory=lambda: TrainConfig(
        objective="doc_mrt", micro_batch_tokens=64, accumulation_factor=16,
        max_updates=2000, checkpoint_every=50))


@dataclass
class StudyData:
    train: object
    dev: object
    titled_test: object
    clean_test: object
    no_title: object
    cipher: Cipher
    vocab: Vocab


def study_data(cfg: StudyConfig, seed: int) -> StudyData:
    """Train / clean dev / titled test / clean test sets for one seed."""
    def gen(size, noise, offset):
        return generate_corpus(size, cfg.vocab_size, cfg.length_range, noise,
                               seed=offset + seed)

    train_c = gen(cfg.train_size, NoiseSpec(cfg.title_probability, seed=seed,
                                            aligned_fraction=cfg.aligned_fraction), 100)
    dev = gen(cfg.eval_size, NoiseSpec(seed=seed), 200)
    titled = gen(cfg.eval_size, NoiseSpec(1.0, seed=seed, aligned_fraction=1.0), 300)
    clean = gen(cfg.eval_size, NoiseSpec(seed=seed), 400)
    no_title, _ = filter_titles(train_c)
    # the titled test set supplies title target words the model may never emit
    vocab = Vocab.build(train_c.sources() + train_c.targets() + titled.targets())
    return StudyData(train_c, dev, titled, clean, no_title, train_c.metadata["cipher"], vocab)


RUNS = (("doc_mrt_all", "doc_mrt", "train"),
        ("mle_no_title", "mle", "no_title"),
        ("doc_mrt_no_title", "doc_mrt", "no_title"))


def run_seed(cfg: StudyConfig, seed: int, work_dir=None) -> list[BiasRow]:
    """MLE base model plus the three fine-tuned variants, evaluated on both test sets."""
    data = study_data(cfg, seed)
    work = Path(work_dir) / f"seed{seed}" if work_dir is not None else None
    base_path = work / "mle_all.bin" if work is not None else None
    if base_path is not None and base_path.exists():
        base = load_checkpoint(base_path)
    else:
        mcfg = ModelConfig(len(data.vocab), cfg.embed_dim, cfg.hidden_dim, max_len=cfg.max_len,
                           seed=seed, init_scale=cfg.init_scale)
        t0 = time.time()
        base, _ = train(cfg.base.replace(seed=seed), Seq2Seq(mcfg, data.vocab), data.train,
                        data.dev)
        log.info("seed %d: MLE base trained in %.0fs", seed, time.time() - t0)
        if base_path is not None:
            base_path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(base, base_path)

    def row(name, ck: Checkpoint):
        return bias_row(name, model_translator(ck.model()), data.titled_test, data.clean_test,
                        data.cipher)

    rows = [row("mle_all", base)]
    for name, objective, corpus in RUNS:
        t0 = time.time()
        tuned = cfg.tuned_mle if objective == "mle" else cfg.tuned_doc_mrt
        ck, _ = finetune(base, tuned.replace(objective=objective, seed=seed),
                         getattr(data, corpus), data.dev, run_name=name)
        rows.append(row(name, ck))
        log.info("seed %d: %s done in %.0fs", seed, name, time.time() - t0)
    return rows


@dataclass(frozen=True)
class StudyVerdict:
    coverage_wins: int
    coverage_ok: bool
    max_clean_drop: float
    clean_ok: bool
    no_title_coverage: float
    doc_mrt_all_coverage: float
    no_title_ok: bool

    @property
    def passed(self) -> bool:
        return self.coverage_ok and self.clean_ok and self.no_title_ok


def judge(per_seed: Sequence[Sequence[BiasRow]], min_wins: int | None = None) -> StudyVerdict:
    """Check the three study outcomes over all seeds.

    - doc-MRT on all data beats the MLE base on title coverage in all but at most one seed;
    - no fine-tuned model drops more than 1 BLEU on the clean test set;
    - MLE on no-title data covers fewer titles than doc-MRT on all data, on average.
    """
    n = len(per_seed)
    need = n - 1 if min_wins is None else min_wins
    wins, drop, nt, dm = 0, 0.0, 0.0, 0.0
    for rows in per_seed:
        by = {r.name: r for r in rows}
        wins += by["doc_mrt_all"].coverage > by["mle_all"].coverage
        for name, _, _ in RUNS:
            drop = max(drop, 100 * (by["mle_all"].clean_bleu - by[name].clean_bleu))
        nt += by["mle_no_title"].coverage / n
        dm += by["doc_mrt_all"].coverage / n
    return StudyVerdict(wins, wins >= need, drop, drop <= 1.0, nt, dm, nt < dm)


def study_summary(cfg: StudyConfig) -> dict:
    d = asdict(cfg)
    for key in ("base", "tuned_mle", "tuned_doc_mrt"):
        d[key] = getattr(cfg, key).dumps()
    return d
