"""DFSMN memory block: ReLU projection, linear projection and a learnable FIR filter with skips.

Taps reaching outside [0, T) read zero vectors, so the filter is linear in
its input and a block with no lookahead never sees the future.
"""

from typing import Optional

import numpy as np

from .errors import ShapeError
from .layers import LinearParams, ParamModel, RunContext, linear
from .models import MemoryConfig
from .tensor import Tensor, add, mul, relu


class FirCoefficients(ParamModel):
    """Look-back taps a[0..N1] and lookahead taps c[1..N2], each a width-d vector."""

    a: Tensor
    c: Optional[Tensor] = None

    @classmethod
    def zeros(cls, cfg: MemoryConfig) -> "FirCoefficients":
        c = Tensor(np.zeros((cfg.n2, cfg.d)), requires_grad=True) if cfg.n2 else None
        return cls(a=Tensor(np.zeros((cfg.n1 + 1, cfg.d)), requires_grad=True), c=c)

    @classmethod
    def null(cls, cfg: MemoryConfig) -> "FirCoefficients":
        """The zero effective filter: a_0 = -1 cancels the explicit +p_t term."""
        fir = cls.zeros(cfg)
        fir.a.data[0] = -1.0
        return fir

    @classmethod
    def random(cls, rng: np.random.Generator, cfg: MemoryConfig, scale: float = 0.5) -> "FirCoefficients":
        fir = cls.zeros(cfg)
        fir.a.data[...] = rng.normal(0.0, scale, size=fir.a.shape)
        if fir.c is not None:
            fir.c.data[...] = rng.normal(0.0, scale, size=fir.c.shape)
        return fir


class DfsmnLayerParams(ParamModel):
    """W, b (ReLU layer), V, v (linear projection) and the FIR taps."""

    hidden: LinearParams
    projection: LinearParams
    fir: FirCoefficients

    @classmethod
    def init(cls, rng: np.random.Generator, cfg: MemoryConfig, hidden: int) -> "DfsmnLayerParams":
        return cls(hidden=LinearParams.init(rng, cfg.d, hidden),
                   projection=LinearParams.init(rng, hidden, cfg.d),
                   fir=FirCoefficients.zeros(cfg))


def _check_fir(p: Tensor, fir: FirCoefficients, cfg: MemoryConfig) -> None:
    if p.shape[-1] != cfg.d or fir.a.shape != (cfg.n1 + 1, cfg.d):
        raise ShapeError("fir_memory", p.shape, fir.a.shape)
    expected_c = (cfg.n2, cfg.d) if cfg.n2 else None
    if (fir.c.shape if fir.c is not None else None) != expected_c:
        raise ShapeError("fir_memory", p.shape, fir.c.shape if fir.c is not None else (0, cfg.d))


def fir_filter(p: Tensor, fir: FirCoefficients, cfg: MemoryConfig) -> Tensor:
    """sum_i a_i * p[t - s1*i] + sum_j c_j * p[t + s2*j] along the time axis (-2)."""
    _check_fir(p, fir, cfg)
    data = p.data
    T = data.shape[-2]
    a = fir.a.data
    c = fir.c.data if fir.c is not None else None
    lookback = [(i, cfg.s1 * i) for i in range(cfg.n1 + 1) if cfg.s1 * i < T]
    lookahead = [(j, cfg.s2 * j) for j in range(1, cfg.n2 + 1) if cfg.s2 * j < T]

    out = np.zeros_like(data)
    for i, shift in lookback:
        out[..., shift:, :] += a[i] * data[..., : T - shift, :]
    for j, shift in lookahead:
        out[..., : T - shift, :] += c[j - 1] * data[..., shift:, :]

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        g_p = np.zeros_like(data)
        g_a = np.zeros_like(a)
        for i, shift in lookback:
            g_p[..., : T - shift, :] += a[i] * g[..., shift:, :]
            g_a[i] = (g[..., shift:, :] * data[..., : T - shift, :]).sum(axis=reduce_axes)
        grads = [g_p, g_a]
        if c is not None:
            g_c = np.zeros_like(c)
            for j, shift in lookahead:
                g_p[..., shift:, :] += c[j - 1] * g[..., : T - shift, :]
                g_c[j - 1] = (g[..., : T - shift, :] * data[..., shift:, :]).sum(axis=reduce_axes)
            grads.append(g_c)
        return tuple(grads)

    parents = (p, fir.a) if fir.c is None else (p, fir.a, fir.c)
    return Tensor._result(out, parents, backward, "fir")


def _mask_time(p: Tensor, valid: Optional[np.ndarray]) -> Tensor:
    if valid is None:
        return p
    return mul(p, np.asarray(valid, dtype=np.float64)[..., None])


def fir_memory(p: Tensor, prev_m: Optional[Tensor], fir: FirCoefficients, cfg: MemoryConfig,
               valid: Optional[np.ndarray] = None) -> Tensor:
    """m_t = m_{t}^{prev} + p_t + FIR(p)_t; padded positions of ``p`` are zeroed first."""
    if prev_m is not None and prev_m.shape != p.shape:
        raise ShapeError("fir_memory", p.shape, prev_m.shape)
    p = _mask_time(p, valid)
    memory = add(p, fir_filter(p, fir, cfg))
    return memory if prev_m is None else add(prev_m, memory)


def dfsmn_projection(m_prev: Tensor, params: DfsmnLayerParams) -> Tensor:
    """p = V relu(W m + b) + v."""
    if m_prev.shape[-1] != params.hidden.weight.shape[0]:
        raise ShapeError("dfsmn_layer", m_prev.shape, params.hidden.weight.shape)
    return linear(relu(linear(m_prev, params.hidden)), params.projection)


def dfsmn_memory(m_prev: Tensor, params: DfsmnLayerParams, cfg: MemoryConfig,
                 valid: Optional[np.ndarray] = None) -> Tensor:
    """The memory increment p + FIR(p) that the skip connection adds to ``m_prev``."""
    return fir_memory(dfsmn_projection(m_prev, params), None, params.fir, cfg, valid)


def dfsmn_layer(m_prev: Tensor, params: DfsmnLayerParams, cfg: MemoryConfig,
                valid: Optional[np.ndarray] = None, ctx: Optional[RunContext] = None) -> Tensor:
    """One DFSMN layer: m_prev + p + FIR(p)."""
    if ctx is None:
        return fir_memory(dfsmn_projection(m_prev, params), m_prev, params.fir, cfg, valid)
    return add(m_prev, ctx.dropout(dfsmn_memory(m_prev, params, cfg, valid)))


def average_filter(fir: FirCoefficients) -> np.ndarray:
    """Channel-mean taps ordered look-back (farthest first), center, lookahead.

    The center is the implicit +p_t term plus a_0, reported as 1 + mean(a_0).
    """
    a = fir.a.data.mean(axis=-1)
    lookback = a[1:][::-1]
    center = np.array([1.0 + a[0]])
    lookahead = fir.c.data.mean(axis=-1) if fir.c is not None else np.zeros(0)
    return np.concatenate([lookback, center, lookahead])
