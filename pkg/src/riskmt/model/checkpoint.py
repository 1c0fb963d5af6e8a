"""Binary checkpoint files and checkpoint averaging.

Layout (all integers little-endian):

    8 bytes   magic b"RISKMTCK"
    uint32    format version
    uint32    header length, then a UTF-8 JSON header
              (config, vocab, step, validation_bleu, metadata, tensor count)
    per tensor: uint16 name length, name, uint8 ndim, uint32 * ndim shape,
              row-major float64 values
    32 bytes  SHA-256 of everything before it
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .params import ModelConfig, ParamSet
from .vocab import Vocab

MAGIC = b"RISKMTCK"
VERSION = 1


class CheckpointError(Exception):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ParamSet
    config: ModelConfig
    vocab: Vocab
    step: int = 0
    validation_bleu: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be >= 0")
        expected = {k: tuple(v) for k, v in self.config.shapes().items()}
        if self.params.shapes != expected:
            raise ShapeMismatch("parameters do not match the config")

    @property
    def id(self) -> str:
        """Content hash of the parameters (stable across runs and platforms)."""
        return hashlib.sha256(self.params.flat.astype("<f8").tobytes()).hexdigest()[:12]

    def model(self):
        from .network import Seq2Seq
        return Seq2Seq(self.config, self.vocab, self.params)


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.itos,
        "step": ckpt.step,
        "validation_bleu": ckpt.validation_bleu,
        "metadata": ckpt.metadata,
        "tensors": len(ckpt.params),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    for name, arr in ckpt.params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<HB", len(nb), arr.ndim) + nb)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def from_bytes(data: bytes, expect_config: ModelConfig | None = None) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 + 32 or data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic or too short)")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint("checksum mismatch (truncated or modified file)")
    pos = len(MAGIC) + 8
    try:
        header = json.loads(body[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        config = ModelConfig(**header["config"])
        shapes = {k: tuple(v) for k, v in config.shapes().items()}
        tensors = {}
        for _ in range(header["tensors"]):
            nlen, ndim = struct.unpack_from("<HB", body, pos)
            pos += 3
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            count = int(np.prod(shape))
            tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint: {exc}") from exc
    if pos != len(body):
        raise CorruptCheckpoint("trailing bytes after the last tensor")
    if set(tensors) != set(shapes):
        raise ShapeMismatch("tensor names differ from the config's parameter set")
    for name, arr in tensors.items():
        if arr.shape != shapes[name]:
            raise ShapeMismatch(f"{name}: file has {arr.shape}, header config implies {shapes[name]}")
    if expect_config is not None and expect_config.shapes() != config.shapes():
        raise ShapeMismatch(f"checkpoint config {config} does not fit model config {expect_config}")
    params = ParamSet(shapes)
    for name, arr in tensors.items():
        params[name][...] = arr
    return Checkpoint(params, config, Vocab(header["vocab"]), header["step"],
                      header["validation_bleu"], header.get("metadata", {}))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(to_bytes(ckpt))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expect_config)


def average_checkpoints(ckpts: Sequence[Checkpoint]) -> Checkpoint:
    """Element-wise mean of all parameters; step is the latest input step."""
    ckpts = list(ckpts)
    if not ckpts:
        raise ValueError("need at least one checkpoint")
    first = ckpts[0]
    for c in ckpts[1:]:
        if c.config != first.config or c.vocab != first.vocab:
            raise ValueError("cannot average checkpoints with different configs or vocabularies")
    # mean written as x0 + mean(x_i - x0): exact when all inputs are equal
    base = first.params.flat
    delta = np.zeros_like(base)
    for c in ckpts[1:]:
        delta += c.params.flat - base
    flat = base + delta / len(ckpts)
    meta = {"averaged": [c.id for c in ckpts]}
    return Checkpoint(ParamSet(first.params.shapes, flat), first.config, first.vocab,
                      max(c.step for c in ckpts), None, meta)
