"""``riskmt`` command line: data generation, filtering, training, decoding, evaluation."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bias import (StudyConfig, bias_row, cipher_oracle, format_report, judge,
                   model_translator, run_seed, study_summary)
from .corpus import (DEFAULT_RULES, NoiseSpec, VocabularyDetector, generate_corpus, read_corpus,
                     read_lines, run_pipeline, write_corpus, write_manifest)
from .metrics import corpus_bleu
from .model import (CheckpointError, ModelConfig, Seq2Seq, Vocab, average_checkpoints,
                    load_checkpoint, save_checkpoint)
from .textproc import merge_sentences, split_sentences, strip_bracket_tokens
from .training import TrainConfig, TrainingDiverged, decode_corpus, finetune, train

log = logging.getLogger("riskmt")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI but got {text!r}") from None
    return lo, hi


def _write_lines(path, seqs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in seqs:
            f.write(" ".join(s) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(a) -> int:
    noise = NoiseSpec(a.title_prob, a.title_length, seed=a.seed if a.noise_seed is None
                      else a.noise_seed, aligned_fraction=a.aligned_fraction)
    corpus = generate_corpus(a.size, a.vocab_size, a.length, noise, a.seed, a.cipher_seed)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    write_corpus(a.out, corpus)
    write_manifest(a.out + ".manifest", corpus)
    print(f"wrote {len(corpus)} pairs to {a.out}.src/.tgt "
          f"(titled={corpus.metadata['titled']})")
    return 0


def cmd_filter(a) -> int:
    corpus = read_corpus(a.input)
    rules = list(a.rules.split(",")) if a.rules else list(DEFAULT_RULES)
    if a.no_title and "titles" not in rules:
        rules.append("titles")
    options = {"max_ratio": a.max_ratio, "max_tokens": a.max_tokens, "lang_mode": a.lang_mode}
    if "language" in rules:
        cipher = corpus.metadata.get("cipher")
        if cipher is None:
            raise ValueError(f"{a.input}.manifest has no cipher table; the language rule "
                             "needs one (drop it with --rules)")
        options["detector"] = VocabularyDetector.from_cipher(cipher)
    kept, report = run_pipeline(corpus, rules, **options)
    write_corpus(a.output, kept)
    text = report.format()
    if a.report:
        Path(a.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _vocab_for(corpora) -> Vocab:
    sents = []
    for c in corpora:
        sents += c.sources() + c.targets()
    return Vocab.build(sents)


def _train_config(a) -> TrainConfig:
    cfg = TrainConfig.from_file(a.config) if a.config else TrainConfig()
    changes = {k: v for k, v in (("seed", a.seed), ("max_updates", a.max_updates),
                                 ("objective", getattr(a, "objective", None))) if v is not None}
    return cfg.replace(**changes)


def cmd_train(a) -> int:
    cfg = _train_config(a)
    tr, va = read_corpus(a.train), read_corpus(a.valid)
    vocab = _vocab_for([tr, va] + [read_corpus(p) for p in a.vocab_from])
    mcfg = ModelConfig(len(vocab), cfg.embed_dim, cfg.hidden_dim, max_len=cfg.max_len,
                       seed=cfg.seed, init_scale=cfg.init_scale)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    final, tlog = train(cfg, Seq2Seq(mcfg, vocab), tr, va, out_dir=out)
    print(tlog.text(), end="")
    return 0


def cmd_finetune(a) -> int:
    cfg = _train_config(a)
    base = load_checkpoint(a.init)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    final, tlog = finetune(base, cfg, read_corpus(a.train), read_corpus(a.valid), out_dir=out,
                           run_name=a.run_name)
    print(tlog.text(), end="")
    return 0


def cmd_avg(a) -> int:
    avg = average_checkpoints([load_checkpoint(p) for p in a.checkpoints])
    save_checkpoint(avg, a.out)
    print(f"averaged {len(a.checkpoints)} checkpoints -> {a.out} id={avg.id}")
    return 0


def translate_lines(model: Seq2Seq, lines, beam_size: int = 4, strip_brackets: bool = False):
    """Split each line into sentences, decode them separately and re-join."""
    out = []
    for line in lines:
        src = strip_bracket_tokens(line) if strip_brackets else tuple(line)
        pieces = split_sentences(src)
        out.append(merge_sentences(decode_corpus(model, pieces, beam_size)))
    return out


def cmd_translate(a) -> int:
    model = load_checkpoint(a.checkpoint).model()
    hyps = translate_lines(model, read_lines(a.input), a.beam, a.strip_brackets)
    if a.output:
        _write_lines(a.output, hyps)
    else:
        for h in hyps:
            print(" ".join(h))
    return 0


def cmd_evaluate(a) -> int:
    hyps, refs = read_lines(a.hyp), read_lines(a.ref)
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypothesis lines vs {len(refs)} reference lines")
    print(corpus_bleu(hyps, refs).format())
    return 0


def _named(spec: str) -> tuple:
    name, sep, path = spec.partition("=")
    if not sep:
        return Path(spec).stem, spec
    return name, path


def cmd_bias_report(a) -> int:
    titled, clean = read_corpus(a.titled), read_corpus(a.clean)
    cipher = titled.metadata.get("cipher")
    if cipher is None:
        raise ValueError(f"{a.titled}.manifest has no cipher table")
    if not a.checkpoint and not a.oracle:
        raise UsageError("give at least one --checkpoint or --oracle")
    rows = []
    if a.oracle:
        rows.append(bias_row("oracle", cipher_oracle(cipher), titled, clean, cipher, a.threshold))
    for spec in a.checkpoint:
        name, path = _named(spec)
        model = load_checkpoint(path).model()
        rows.append(bias_row(name, model_translator(model, a.beam), titled, clean, cipher,
                             a.threshold))
    text = format_report(rows)
    if a.output:
        Path(a.output).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_study(a) -> int:
    cfg = StudyConfig(aligned_fraction=a.aligned_fraction)
    if a.train_size is not None:
        cfg = dataclasses.replace(cfg, train_size=a.train_size)
    per_seed = []
    for seed in a.seeds:
        rows = run_seed(cfg, seed, a.work_dir)
        for r in rows:
            print(f"seed={seed} {r.format()}", flush=True)
        per_seed.append(rows)
    v = judge(per_seed)
    print(f"coverage_wins={v.coverage_wins}/{len(per_seed)} max_clean_drop={v.max_clean_drop:.4f} "
          f"no_title_coverage={v.no_title_coverage:.4f} "
          f"doc_mrt_all_coverage={v.doc_mrt_all_coverage:.4f} passed={v.passed}")
    if a.output:
        Path(a.output).write_text(json.dumps(
            {"config": study_summary(cfg), "seeds": list(a.seeds), "rows": [[r.__dict__ for r in rows] for rows in per_seed],
             "verdict": v.__dict__}, indent=1), encoding="utf-8")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riskmt", description=__doc__)
    p.add_argument("--version", action="version", version=f"riskmt {__version__}")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic cipher corpus")
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--vocab-size", type=int, default=20)
    g.add_argument("--length", type=_pair, default=(4, 8), help="sentence length range LO,HI")
    g.add_argument("--title-prob", type=float, default=0.0)
    g.add_argument("--title-length", type=_pair, default=(3, 6))
    g.add_argument("--aligned-fraction", type=float, default=0.0,
                   help="share of titled pairs whose target keeps the title")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-seed", type=int, default=None, help="defaults to --seed")
    g.add_argument("--cipher-seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output prefix")
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("filter", help="apply the corpus filters and print a report")
    f.add_argument("--input", required=True, help="input prefix")
    f.add_argument("--output", required=True, help="output prefix")
    f.add_argument("--rules", default=None, help="comma-separated rules, in order")
    f.add_argument("--no-title", action="store_true", help="also drop bracketed-title lines")
    f.add_argument("--max-ratio", type=float, default=3.5)
    f.add_argument("--max-tokens", type=int, default=120)
    f.add_argument("--lang-mode", choices=("or", "and"), default="or")
    f.add_argument("--report", default=None)
    f.set_defaults(func=cmd_filter)

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        t = sub.add_parser(name, help=f"{name} a model")
        if name == "finetune":
            t.add_argument("--init", required=True, help="base checkpoint")
            t.add_argument("--run-name", default=None)
            t.add_argument("--objective", choices=("mle", "mrt", "doc_mrt"), default=None)
        else:
            t.add_argument("--vocab-from", action="append", default=[],
                           help="extra corpus prefix whose words join the vocabulary")
        t.add_argument("--config", default=None, help="key=value training config file")
        t.add_argument("--train", required=True)
        t.add_argument("--valid", required=True)
        t.add_argument("--out", required=True, help="output directory")
        t.add_argument("--seed", type=int, default=None)
        t.add_argument("--max-updates", type=int, default=None)
        t.set_defaults(func=func)

    v = sub.add_parser("avg-checkpoints", help="average checkpoints parameter-wise")
    v.add_argument("checkpoints", nargs="+")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_avg)

    tr = sub.add_parser("translate", help="beam-decode a source file, one line per line")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--input", required=True)
    tr.add_argument("--output", default=None)
    tr.add_argument("--beam", type=int, default=4)
    tr.add_argument("--strip-brackets", action="store_true")
    tr.set_defaults(func=cmd_translate)

    e = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    e.add_argument("hyp")
    e.add_argument("ref")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bias-report", help="clean BLEU, titled BLEU and title coverage")
    b.add_argument("--checkpoint", action="append", default=[], help="[NAME=]PATH, repeatable")
    b.add_argument("--oracle", action="store_true", help="include the perfect cipher translator")
    b.add_argument("--titled", required=True, help="titled test prefix (with manifest)")
    b.add_argument("--clean", required=True, help="clean test prefix")
    b.add_argument("--beam", type=int, default=4)
    b.add_argument("--threshold", type=float, default=0.5)
    b.add_argument("--output", default=None)
    b.set_defaults(func=cmd_bias_report)

    s = sub.add_parser("study", help="run the MLE vs doc-MRT title-coverage study")
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.add_argument("--aligned-fraction", type=float, default=StudyConfig.aligned_fraction)
    s.add_argument("--train-size", type=int, default=None)
    s.add_argument("--work-dir", default=None, help="cache for trained base models")
    s.add_argument("--output", default=None, help="JSON results file")
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:  # --help, --version and usage errors
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except UsageError as e:
        print(f"riskmt {a.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, CheckpointError, TrainingDiverged) as e:
        print(f"riskmt {a.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
