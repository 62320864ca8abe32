"""Encoder-decoder assembly with interchangeable basic sub-layers.

Encoder: input projection, then N blocks of (basic sub-layer, feed-forward).
Decoder: token embedding, M blocks of (feed-forward, unidirectional basic,
cross-attention), K blocks of (feed-forward, unidirectional basic), a final
feed-forward sub-layer and the output projection. Every sub-layer is wrapped
in a residual connection and layer norm (post-norm unless configured).
"""

from typing import Callable, Dict, List, Optional

import numpy as np

from .attention import AttentionMask, AttentionParams, make_causal_mask, make_padding_mask, multi_head
from .errors import ShapeError
from .layers import (FeedForwardParams, LayerNormParams, LinearParams, ParamModel, RunContext,
                     feed_forward, linear, norm, sinusoidal_encoding)
from .memory import DfsmnLayerParams, dfsmn_memory
from .models import MemoryConfig, ModelConfig, SequenceBatch, SublayerKind
from .sanm import SanmParams, check_directionality, sanm_layer
from .tensor import Tensor, add, embedding, mul


class BasicSublayerParams(ParamModel):
    kind: SublayerKind
    mem_cfg: MemoryConfig
    attn: Optional[AttentionParams] = None
    dfsmn: Optional[DfsmnLayerParams] = None
    sanm: Optional[SanmParams] = None
    norm: LayerNormParams

    @classmethod
    def init(cls, rng: np.random.Generator, kind: SublayerKind, cfg: ModelConfig,
             mem_cfg: MemoryConfig) -> "BasicSublayerParams":
        fields = dict(kind=kind, mem_cfg=mem_cfg, norm=LayerNormParams.init(cfg.d_model))
        if kind == SublayerKind.SAN:
            fields["attn"] = AttentionParams.init(rng, cfg.attention)
        elif kind == SublayerKind.SANM:
            fields["sanm"] = SanmParams.init(rng, cfg.attention, mem_cfg)
        else:
            fields["dfsmn"] = DfsmnLayerParams.init(rng, mem_cfg, cfg.hidden_width)
        return cls(**fields)


class CrossAttentionParams(ParamModel):
    attn: AttentionParams
    norm: LayerNormParams


class EncoderBlockParams(ParamModel):
    basic: BasicSublayerParams
    ffn: FeedForwardParams


class DecoderBlockParams(ParamModel):
    ffn: FeedForwardParams
    basic: BasicSublayerParams
    cross: Optional[CrossAttentionParams] = None


class ModelParams(ParamModel):
    """All learnable tensors of the assembled model."""

    config: ModelConfig
    input_proj: LinearParams
    embedding: Tensor
    encoder: List[EncoderBlockParams]
    decoder: List[DecoderBlockParams]
    output_ffn: Optional[FeedForwardParams] = None
    output_proj: LinearParams
    encoder_norm: Optional[LayerNormParams] = None
    decoder_norm: Optional[LayerNormParams] = None

    def tensors(self) -> Dict[str, Tensor]:
        return dict(self.named_tensors())


def build_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Deterministic initialization; FIR taps start at zero."""
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    input_proj = LinearParams.init(rng, cfg.input_dim, d)
    table = Tensor(rng.normal(0.0, d ** -0.5, size=(cfg.vocab_size, d)), requires_grad=True)
    encoder = [
        EncoderBlockParams(basic=BasicSublayerParams.init(rng, cfg.encoder_kind, cfg, cfg.encoder_memory),
                           ffn=FeedForwardParams.init(rng, d, cfg.d_ffn))
        for _ in range(cfg.n_blocks)
    ]
    decoder = []
    for i in range(cfg.m_blocks + cfg.k_blocks):
        ffn = FeedForwardParams.init(rng, d, cfg.d_ffn)
        basic = BasicSublayerParams.init(rng, cfg.decoder_kind, cfg, cfg.decoder_memory)
        cross = None
        if i < cfg.m_blocks:
            cross = CrossAttentionParams(attn=AttentionParams.init(rng, cfg.attention),
                                         norm=LayerNormParams.init(d))
        decoder.append(DecoderBlockParams(ffn=ffn, basic=basic, cross=cross))
    output_ffn = FeedForwardParams.init(rng, d, cfg.d_ffn) if cfg.output_ffn else None
    output_proj = LinearParams.init(rng, d, cfg.vocab_size)
    final_norms = {} if cfg.post_norm else dict(encoder_norm=LayerNormParams.init(d),
                                                decoder_norm=LayerNormParams.init(d))
    return ModelParams(config=cfg, input_proj=input_proj, embedding=table, encoder=encoder,
                       decoder=decoder, output_ffn=output_ffn, output_proj=output_proj, **final_norms)


def count_parameters(cfg: ModelConfig) -> int:
    """Exact number of learnable scalars of ``build_model(cfg)``, without allocating it."""
    d, ffn_width = cfg.d_model, cfg.d_ffn

    def affine(n_in: int, n_out: int) -> int:
        return n_in * n_out + n_out

    layer_norm = 2 * d
    attention = 2 * d * cfg.attention.h * cfg.attention.d_k + 2 * d * cfg.attention.h * cfg.attention.d_v
    ffn = affine(d, ffn_width) + affine(ffn_width, d) + layer_norm

    def basic(kind: SublayerKind, mem: MemoryConfig) -> int:
        fir = mem.taps * mem.d
        if kind == SublayerKind.SAN:
            core = attention
        elif kind == SublayerKind.SANM:
            core = attention + fir
        else:
            core = affine(d, cfg.hidden_width) + affine(cfg.hidden_width, d) + fir
        return core + layer_norm

    encoder = cfg.n_blocks * (basic(cfg.encoder_kind, cfg.encoder_memory) + ffn)
    decoder_block = ffn + basic(cfg.decoder_kind, cfg.decoder_memory)
    decoder = cfg.m_blocks * (decoder_block + attention + layer_norm) + cfg.k_blocks * decoder_block
    total = affine(cfg.input_dim, d) + cfg.vocab_size * d + encoder + decoder + affine(d, cfg.vocab_size)
    if cfg.output_ffn:
        total += ffn
    if not cfg.post_norm:
        total += 2 * layer_norm
    return total


def _residual(x: Tensor, branch: Callable[[Tensor], Tensor], norm_params: LayerNormParams,
              cfg: ModelConfig, ctx: RunContext) -> Tensor:
    if cfg.post_norm:
        return norm(add(x, ctx.dropout(branch(x))), norm_params)
    return add(x, ctx.dropout(branch(norm(x, norm_params))))


def basic_sublayer(x: Tensor, params: BasicSublayerParams, mask: AttentionMask,
                   valid: Optional[np.ndarray], ctx: RunContext, name: str) -> Tensor:
    """Output of the basic sub-layer before its residual add and norm."""
    if params.kind == SublayerKind.SAN:
        return multi_head(x, x, params.attn, mask, ctx, name)
    if params.kind == SublayerKind.SANM:
        return sanm_layer(x, params.sanm, mask, valid, ctx, name)
    check_directionality(mask, params.mem_cfg)
    # the DFSMN skip connection is the block residual
    return dfsmn_memory(x, params.dfsmn, params.mem_cfg, valid)


def encoder_forward(feats: SequenceBatch, params: ModelParams, cfg: Optional[ModelConfig] = None,
                    ctx: Optional[RunContext] = None) -> Tensor:
    """Z = encoder(X) of shape [B, T, d_model]."""
    cfg = cfg or params.config
    ctx = ctx or RunContext()
    if feats.inputs.ndim != 3 or feats.inputs.shape[-1] != cfg.input_dim:
        raise ShapeError("encoder_forward", feats.inputs.shape, (cfg.input_dim,))
    T = feats.max_length
    x = linear(Tensor(feats.inputs), params.input_proj)
    if cfg.encoder_positional:
        x = add(x, sinusoidal_encoding(T, cfg.d_model))
    x = ctx.dropout(x)
    valid = feats.valid_mask()
    mask = make_padding_mask(valid, T)
    for i, block in enumerate(params.encoder):
        x = _residual(x, lambda h: basic_sublayer(h, block.basic, mask, valid, ctx, f"encoder.{i}"),
                      block.basic.norm, cfg, ctx)
        x = _residual(x, lambda h: feed_forward(h, block.ffn, ctx), block.ffn.norm, cfg, ctx)
    if params.encoder_norm is not None:
        x = norm(x, params.encoder_norm)
    return x


def decoder_forward(z: Tensor, targets_shifted: SequenceBatch, params: ModelParams,
                    cfg: Optional[ModelConfig] = None, ctx: Optional[RunContext] = None,
                    memory_valid: Optional[np.ndarray] = None) -> Tensor:
    """Logits [B, T', vocab] for BOS-shifted targets attending to encoder output ``z``."""
    cfg = cfg or params.config
    ctx = ctx or RunContext()
    ids = targets_shifted.inputs
    if ids.ndim != 2 or z.ndim != 3 or z.shape[0] != ids.shape[0] or z.shape[-1] != cfg.d_model:
        raise ShapeError("decoder_forward", z.shape, ids.shape)
    T = targets_shifted.max_length
    y = mul(embedding(params.embedding, ids), np.sqrt(cfg.d_model))
    if cfg.decoder_positional:
        y = add(y, sinusoidal_encoding(T, cfg.d_model))
    y = ctx.dropout(y)
    valid = targets_shifted.valid_mask()
    self_mask = make_causal_mask(T).combine(make_padding_mask(valid, T))
    if memory_valid is None:
        memory_valid = np.ones(z.shape[:-1], dtype=bool)
    cross_mask = make_padding_mask(memory_valid, T)
    for i, block in enumerate(params.decoder):
        y = _residual(y, lambda h: feed_forward(h, block.ffn, ctx), block.ffn.norm, cfg, ctx)
        y = _residual(y, lambda h: basic_sublayer(h, block.basic, self_mask, valid, ctx, f"decoder.{i}"),
                      block.basic.norm, cfg, ctx)
        if block.cross is not None:
            y = _residual(y, lambda h: multi_head(h, z, block.cross.attn, cross_mask, ctx, f"cross.{i}"),
                          block.cross.norm, cfg, ctx)
    if params.output_ffn is not None:
        y = _residual(y, lambda h: feed_forward(h, params.output_ffn, ctx), params.output_ffn.norm, cfg, ctx)
    if params.decoder_norm is not None:
        y = norm(y, params.decoder_norm)
    return linear(y, params.output_proj)
