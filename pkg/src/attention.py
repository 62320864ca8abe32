"""Multi-head scaled dot-product attention in self, causal-self and cross configurations."""

from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .errors import ShapeError
from .layers import ParamModel, RunContext, fan_in_uniform
from .models import AttentionConfig
from .tensor import Tensor, matmul, mul, reshape, softmax_rows, transpose


class MaskKind(str, Enum):
    NONE = "none"
    PADDING = "padding"
    CAUSAL = "causal"
    COMBINED = "combined"


class AttentionMask(BaseModel):
    """Boolean [..., T_query, T_key] pattern of allowed keys."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    allowed: np.ndarray
    kind: MaskKind = MaskKind.NONE

    @property
    def is_causal(self) -> bool:
        return self.kind in (MaskKind.CAUSAL, MaskKind.COMBINED)

    def combine(self, other: "AttentionMask") -> "AttentionMask":
        kind = MaskKind.COMBINED if (self.is_causal or other.is_causal) else MaskKind.PADDING
        return AttentionMask(allowed=np.logical_and(self.allowed, other.allowed), kind=kind)

    @classmethod
    def full(cls, t_query: int, t_key: int) -> "AttentionMask":
        return cls(allowed=np.ones((t_query, t_key), dtype=bool), kind=MaskKind.NONE)


def make_causal_mask(length: int) -> AttentionMask:
    """Lower-triangular mask: query t may attend keys t' <= t."""
    if length < 1:
        raise ValueError("causal mask length must be >= 1")
    return AttentionMask(allowed=np.tril(np.ones((length, length), dtype=bool)), kind=MaskKind.CAUSAL)


def make_padding_mask(key_valid: np.ndarray, t_query: int) -> AttentionMask:
    """Mask out padded keys; ``key_valid`` is [B, T_key] or [T_key]."""
    key_valid = np.asarray(key_valid, dtype=bool)
    allowed = np.broadcast_to(key_valid[..., None, :], key_valid.shape[:-1] + (t_query, key_valid.shape[-1]))
    return AttentionMask(allowed=allowed.copy(), kind=MaskKind.PADDING)


class AttentionParams(ParamModel):
    """Per-head projections stacked along the output axis: head i owns columns i*d_k:(i+1)*d_k."""

    config: AttentionConfig
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, config: AttentionConfig) -> "AttentionParams":
        d, h = config.d_model, config.h
        return cls(config=config,
                   w_q=fan_in_uniform(rng, d, (d, h * config.d_k)),
                   w_k=fan_in_uniform(rng, d, (d, h * config.d_k)),
                   w_v=fan_in_uniform(rng, d, (d, h * config.d_v)),
                   w_o=fan_in_uniform(rng, h * config.d_v, (h * config.d_v, d)))

    def head(self, i: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """W_i^Q, W_i^K, W_i^V of head ``i`` as plain arrays."""
        dk, dv = self.config.d_k, self.config.d_v
        return (self.w_q.data[:, i * dk:(i + 1) * dk],
                self.w_k.data[:, i * dk:(i + 1) * dk],
                self.w_v.data[:, i * dv:(i + 1) * dv])


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor, mask: Optional[AttentionMask] = None,
                       ctx: Optional[RunContext] = None) -> Tuple[Tensor, Tensor]:
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes; returns (context, weights)."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError("scaled_dot_product", q.shape, k.shape, v.shape)
    scores = mul(matmul(q, _swap_last(k)), 1.0 / np.sqrt(q.shape[-1]))
    allowed = None if mask is None else mask.allowed
    if allowed is not None and allowed.ndim == scores.ndim - 1 and scores.ndim >= 4:
        allowed = allowed[..., None, :, :]
    weights = softmax_rows(scores, allowed)
    attended = weights if ctx is None else ctx.dropout(weights)
    return matmul(attended, v), weights


def _swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def _split_heads(x: Tensor, h: int) -> Tensor:
    """[..., T, h*w] -> [..., h, T, w]."""
    lead, t, width = x.shape[:-2], x.shape[-2], x.shape[-1]
    x = reshape(x, lead + (t, h, width // h))
    n = x.ndim
    return transpose(x, tuple(range(n - 3)) + (n - 2, n - 3, n - 1))


def _merge_heads(x: Tensor) -> Tensor:
    """[..., h, T, w] -> [..., T, h*w]."""
    n = x.ndim
    x = transpose(x, tuple(range(n - 3)) + (n - 2, n - 3, n - 1))
    return reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def project_values(x: Tensor, params: AttentionParams) -> Tensor:
    """Concatenated per-head values X W_i^V, width h*d_v."""
    return matmul(x, params.w_v)


def multi_head(xq: Tensor, xkv: Tensor, params: AttentionParams, mask: Optional[AttentionMask] = None,
               ctx: Optional[RunContext] = None, name: str = "attention") -> Tensor:
    """[head_1, ..., head_h] W^O with Q from ``xq`` and K, V from ``xkv``."""
    cfg = params.config
    if xq.shape[-1] != cfg.d_model or xkv.shape[-1] != cfg.d_model:
        raise ShapeError("multi_head", xq.shape, xkv.shape)
    q = _split_heads(matmul(xq, params.w_q), cfg.h)
    k = _split_heads(matmul(xkv, params.w_k), cfg.h)
    v = _split_heads(project_values(xkv, params), cfg.h)
    context, weights = scaled_dot_product(q, k, v, mask, ctx)
    if ctx is not None:
        ctx.record_attention(name, weights.data)
    return matmul(_merge_heads(context), params.w_o)


def attention_split(weights: np.ndarray, t: int) -> Tuple[float, float]:
    """Attention mass of row ``t`` on keys <= t (past) and keys > t (future)."""
    weights = np.asarray(weights.data if isinstance(weights, Tensor) else weights)
    if not 0 <= t < weights.shape[-2]:
        raise IndexError(f"position {t} out of range for {weights.shape[-2]} rows")
    row = weights[..., t, :]
    return float(row[..., : t + 1].sum()), float(row[..., t + 1:].sum())
