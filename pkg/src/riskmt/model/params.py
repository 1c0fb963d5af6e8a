"""Model configuration and the flat-backed parameter container."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .kernels import PARAM_NAMES, param_shapes


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    num_heads: int = 0  # 0 = recurrent encoder/decoder with one attention block
    max_len: int = 48
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must be >= 5")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.num_heads != 0:
            raise ValueError("only the recurrent variant (num_heads=0) is implemented")

    def shapes(self) -> dict:
        return param_shapes(self.vocab_size, self.embed_dim, self.hidden_dim)

    def to_dict(self) -> dict:
        return asdict(self)


class ParamSet:
    """Named float64 tensors that are views into one contiguous vector.

    Optimizers and checkpoint averaging work on ``flat``; the kernels unpack
    the same vector themselves, so names are only for humans and file I/O.
    """

    def __init__(self, shapes: dict, flat: np.ndarray | None = None):
        self.shapes = {name: tuple(shapes[name]) for name in PARAM_NAMES}
        size = sum(int(np.prod(s)) for s in self.shapes.values())
        if flat is None:
            flat = np.zeros(size)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {flat.shape}")
        self.flat = flat
        self.tensors = {}
        offset = 0
        for name, shape in self.shapes.items():
            k = int(np.prod(shape))
            self.tensors[name] = flat[offset:offset + k].reshape(shape)
            offset += k

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def __len__(self):
        return len(self.tensors)

    def copy(self) -> "ParamSet":
        return ParamSet(self.shapes, self.flat.copy())

    def zeros_like(self) -> "ParamSet":
        return ParamSet(self.shapes)

    def __add__(self, other: "ParamSet") -> "ParamSet":
        self._check(other)
        return ParamSet(self.shapes, self.flat + other.flat)

    def __iadd__(self, other: "ParamSet") -> "ParamSet":
        self._check(other)
        self.flat += other.flat
        return self

    def scaled(self, factor: float) -> "ParamSet":
        return ParamSet(self.shapes, self.flat * factor)

    def _check(self, other):
        if other.shapes != self.shapes:
            raise ValueError("parameter shapes differ")

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())

    def __repr__(self):
        return f"ParamSet({len(self.tensors)} tensors, {self.flat.size} values)"


def init_params(config: ModelConfig) -> ParamSet:
    rng = np.random.default_rng(config.seed)
    params = ParamSet(config.shapes())
    params.flat[:] = rng.uniform(-config.init_scale, config.init_scale, params.flat.size)
    params["out_b"][:] = 0.0
    return params
