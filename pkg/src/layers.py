"""Shared building blocks: affine and norm parameters, feed-forward sub-layer, run context."""

from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .tensor import Tensor, add, layer_norm, matmul, mul, relu


class ParamModel(BaseModel):
    """Pydantic container whose Tensor fields are learnable parameters."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def named_tensors(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        yield from iter_tensors(self, prefix)


def iter_tensors(value, prefix: str) -> Iterator[Tuple[str, Tensor]]:
    """Walk nested parameter containers in declaration order."""
    if isinstance(value, Tensor):
        yield prefix, value
    elif isinstance(value, BaseModel):
        for name, field in value:
            yield from iter_tensors(field, f"{prefix}.{name}" if prefix else name)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from iter_tensors(item, f"{prefix}.{i}")


def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class LinearParams(ParamModel):
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "LinearParams":
        return cls(weight=fan_in_uniform(rng, d_in, (d_in, d_out)), bias=zeros(d_out))


class LayerNormParams(ParamModel):
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(gain=Tensor(np.ones(d), requires_grad=True), bias=zeros(d))


class FeedForwardParams(ParamModel):
    """Position-wise two-layer ReLU network with its post/pre norm."""

    inner: LinearParams
    outer: LinearParams
    norm: LayerNormParams

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, d_ffn: int) -> "FeedForwardParams":
        return cls(inner=LinearParams.init(rng, d_model, d_ffn),
                   outer=LinearParams.init(rng, d_ffn, d_model),
                   norm=LayerNormParams.init(d_model))


def linear(x: Tensor, params: LinearParams) -> Tensor:
    return add(matmul(x, params.weight), params.bias)


def norm(x: Tensor, params: LayerNormParams) -> Tensor:
    return layer_norm(x, params.gain, params.bias)


def feed_forward(x: Tensor, params: FeedForwardParams, ctx: "RunContext") -> Tensor:
    return linear(ctx.dropout(relu(linear(x, params.inner))), params.outer)


def sinusoidal_encoding(length: int, d: int) -> np.ndarray:
    positions = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (2 * (np.arange(d) // 2)) / d)
    angles = positions * rates[None, :]
    return np.where(np.arange(d) % 2 == 0, np.sin(angles), np.cos(angles))


class RunContext:
    """Per-forward switches: training-mode dropout and attention recording."""

    def __init__(self, training: bool = False, dropout: float = 0.0,
                 rng: Optional[np.random.Generator] = None, record: bool = False,
                 per_head: bool = False):
        self.training = training
        self.rate = dropout if training else 0.0
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.record = record
        self.per_head = per_head
        self.attention: Dict[str, np.ndarray] = {}
        self.attention_heads: Dict[str, np.ndarray] = {}

    def dropout(self, x: Tensor) -> Tensor:
        if self.rate <= 0.0:
            return x
        keep = self.rng.random(x.shape) >= self.rate
        return mul(x, keep / (1.0 - self.rate))

    def record_attention(self, name: str, weights: np.ndarray) -> None:
        """Store head-averaged weights; ``weights`` is [..., h, Tq, Tk]."""
        if not self.record:
            return
        self.attention[name] = weights.mean(axis=-3)
        if self.per_head:
            self.attention_heads[name] = weights.copy()
