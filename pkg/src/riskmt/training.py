"""Adam, the update loop, checkpoint schedule, early stopping and fine-tuning."""
from __future__ import annotations

import dataclasses
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .metrics import corpus_bleu
from .model import Seq2Seq
from .model.checkpoint import Checkpoint, average_checkpoints, save_checkpoint
from .model.params import ParamSet
from .objectives import (ObjectiveConfig, accumulate_gradients, doc_mrt_loss_and_grad,
                         draw_samples, mle_loss_and_grad, mrt_loss_and_grad)

log = logging.getLogger(__name__)

OBJECTIVES = ("mle", "mrt", "doc_mrt")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good: Checkpoint | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "mle"
    alpha: float = 0.6
    tau: float = 0.3
    n_samples: int = 8
    cost: str | None = None
    include_reference: bool = False
    tempered_q: bool = False
    learning_rate: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    micro_batch_tokens: int = 256
    accumulation_factor: int = 4
    checkpoint_every: int = 200
    patience: int = 3
    max_updates: int = 5000
    average_last: int = 3
    valid_beam: int = 4
    seed: int = 0
    # only used when a fresh model is built from this file
    embed_dim: int = 32
    hidden_dim: int = 64
    max_len: int = 48
    init_scale: float = 0.1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        positive = ("learning_rate", "adam_eps", "micro_batch_tokens", "accumulation_factor",
                    "checkpoint_every", "patience", "average_last", "valid_beam")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if self.max_updates < 0:
            raise ValueError("max_updates must be >= 0")
        self.objective_config()  # validates alpha/tau/n_samples/cost

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(self.alpha, self.tau, self.n_samples, self.cost,
                               self.include_reference, self.tempered_q)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def parse(cls, text: str) -> "TrainConfig":
        """Flat ``key=value`` lines; ``#`` starts a comment; unknown keys are errors."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name}={'none' if v is None else str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(out) + "\n"


def _coerce(type_name, value: str):
    t = str(type_name)
    if "bool" in t:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"bad boolean {value!r}")
    if "None" in t and value.lower() in ("none", ""):
        return None
    if t.startswith("int"):
        return int(value)
    if t.startswith("float"):
        return float(value)
    return value


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    params: ParamSet
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params: ParamSet) -> "AdamState":
        return cls(params, np.zeros_like(params.flat), np.zeros_like(params.flat), 0)


def adam_step(state: AdamState, grad: ParamSet, lr: float, beta1: float = 0.9,
              beta2: float = 0.98, eps: float = 1e-9) -> AdamState:
    """One bias-corrected Adam update, returned as a new state (minimisation)."""
    g = grad.flat
    if g.shape != state.m.shape:
        raise ValueError("gradient shape does not match the optimiser state")
    if not np.isfinite(g).all():
        raise TrainingDiverged("non-finite gradient")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    flat = state.params.flat - lr * mhat / (np.sqrt(vhat) + eps)
    return AdamState(ParamSet(state.params.shapes, flat), m, v, t)


# --------------------------------------------------------------------------
# batching, validation


def micro_batches(pairs: Sequence, token_budget: int, rng: np.random.Generator) -> Iterator[list]:
    """Endless stream of micro-batches, reshuffled every epoch.

    A batch is filled until adding the next pair would exceed the budget of
    target tokens (EOS included); it always holds at least one pair.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty training corpus")
    while True:
        batch, tokens = [], 0
        for i in rng.permutation(len(pairs)):
            p = pairs[i]
            n = len(p.target) + 1
            if batch and tokens + n > token_budget:
                yield batch
                batch, tokens = [], 0
            batch.append(p)
            tokens += n
        if batch:
            yield batch


def decode_corpus(model: Seq2Seq, sources: Sequence, beam_size: int = 4) -> list:
    out = []
    for src in sources:
        src = tuple(src)[:model.max_tokens]
        ids, _ = model.beam_ids(model.vocab.encode(src), beam_size)
        out.append(model.vocab.decode(ids))
    return out


def validation_bleu(model: Seq2Seq, corpus, beam_size: int = 4) -> float:
    hyps = decode_corpus(model, corpus.sources(), beam_size)
    return corpus_bleu(hyps, corpus.targets()).score


@dataclass
class TrainLog:
    lines: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def add(self, line: str, **record):
        self.lines.append(line)
        if record:
            self.records.append(record)
        log.info(line)

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def objective_step(model: Seq2Seq, batch, config: TrainConfig, rng: np.random.Generator):
    if config.objective == "mle":
        return mle_loss_and_grad(model, batch)
    cfg = config.objective_config()
    samples = draw_samples(model, batch, cfg, rng)
    if config.objective == "mrt":
        return mrt_loss_and_grad(model, samples, cfg)
    return doc_mrt_loss_and_grad(model, samples, cfg)


# --------------------------------------------------------------------------
# training


def train(config: TrainConfig, model: Seq2Seq, train_corpus, valid_corpus,
          out_dir=None, log_: TrainLog | None = None, metadata: dict | None = None):
    """Train until validation BLEU stalls for ``patience`` checkpoints.

    Returns the average of the last ``average_last`` recorded checkpoints and
    the training log.
    """
    if len(train_corpus) == 0 or len(valid_corpus) == 0:
        raise ValueError("training and validation corpora must be non-empty")
    tlog = log_ if log_ is not None else TrainLog()
    out = Path(out_dir) if out_dir is not None else None
    metadata = dict(metadata or {})
    metadata.setdefault("objective", config.objective)

    batch_rng = np.random.default_rng([config.seed, 0])
    sample_rng = np.random.default_rng([config.seed, 1])
    batches = micro_batches(train_corpus.pairs, config.micro_batch_tokens, batch_rng)
    state = AdamState.fresh(model.params.copy())
    ring: deque = deque(maxlen=config.average_last)
    best = None
    streak = 0
    interval_loss = 0.0
    interval_updates = 0

    def record(step, loss):
        nonlocal best, streak
        current = model.with_params(state.params)
        bleu = validation_bleu(current, valid_corpus, config.valid_beam)
        if best is None or bleu > best:
            best, streak = bleu, 0
        else:
            streak += 1
        ckpt = Checkpoint(state.params.copy(), model.config, model.vocab, step, bleu,
                          dict(metadata))
        ring.append(ckpt)
        tlog.add(f"step={step} objective={config.objective} loss={loss:.6f} "
                 f"val_bleu={100 * bleu:.4f} streak={streak}",
                 step=step, loss=loss, val_bleu=bleu, streak=streak)
        if out is not None:
            save_checkpoint(ckpt, out / f"ckpt-{step:06d}.bin")

    while state.t < config.max_updates:
        grads, loss = [], 0.0
        for _ in range(config.accumulation_factor):
            value, g = objective_step(model.with_params(state.params), next(batches),
                                      config, sample_rng)
            grads.append(g)
            loss += value
        grad = accumulate_gradients(grads)
        if not np.isfinite(loss) or not grad.all_finite():
            last = ring[-1] if ring else None
            if out is not None and last is not None:
                save_checkpoint(last, out / "last_good.bin")
            raise TrainingDiverged(f"non-finite loss/gradient at update {state.t + 1}", last)
        state = adam_step(state, grad, config.learning_rate, config.adam_beta1,
                          config.adam_beta2, config.adam_eps)
        interval_loss += loss
        interval_updates += 1
        if state.t % config.checkpoint_every == 0 or state.t == config.max_updates:
            record(state.t, interval_loss / interval_updates)
            interval_loss, interval_updates = 0.0, 0
            if streak >= config.patience:
                break

    if not ring:
        record(0, float("nan"))
    final = average_checkpoints(list(ring))
    final.metadata = {**metadata, "averaged": [c.step for c in ring]}
    tlog.add(f"final averaged_steps={','.join(str(c.step) for c in ring)} id={final.id}")
    if out is not None:
        save_checkpoint(final, out / "final.bin")
        (out / "train.log").write_text(tlog.text(), encoding="utf-8")
    return final, tlog


def finetune(base: Checkpoint, config: TrainConfig, corpus, validation, out_dir=None,
             run_name: str | None = None):
    """Continue training from ``base`` with fresh optimiser state."""
    tlog = TrainLog()
    tlog.add(f"init={base.id} objective={config.objective}"
             + (f" run={run_name}" if run_name else ""))
    lineage = list(base.metadata.get("lineage", [])) + [base.id]
    model = base.model().with_params(base.params.copy())
    meta = {"init": base.id, "lineage": lineage}
    if run_name:
        meta["run"] = run_name
    return train(config, model, corpus, validation, out_dir, tlog, meta)
