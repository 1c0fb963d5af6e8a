from .checkpoint import (Checkpoint, CheckpointError, CorruptCheckpoint, ShapeMismatch,
                         VersionMismatch, average_checkpoints, load_checkpoint, save_checkpoint)
from .kernels import BOS, EOS, PAD, UNK
from .network import Sample, Seq2Seq
from .params import ModelConfig, ParamSet, init_params
from .vocab import Vocab

__all__ = [
    "BOS", "EOS", "PAD", "UNK", "Checkpoint", "CheckpointError", "CorruptCheckpoint",
    "ModelConfig", "ParamSet", "Sample", "Seq2Seq", "ShapeMismatch", "VersionMismatch",
    "Vocab", "average_checkpoints", "init_params", "load_checkpoint", "save_checkpoint",
]
