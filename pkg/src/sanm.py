"""Memory-equipped self-attention: multi-head attention plus a FIR memory over its values.

Y = MultiHead(X, X, X) + M(V) where V = [X W_1^V, ..., X W_h^V] and M is the
FIR filter of the DFSMN memory block applied directly to V (no ReLU or
projection stage, no previous-memory term).
"""

from typing import Optional

import numpy as np

from .attention import AttentionMask, AttentionParams, multi_head, project_values
from .errors import ConfigurationError
from .layers import ParamModel, RunContext
from .memory import FirCoefficients, fir_memory
from .models import AttentionConfig, MemoryConfig
from .tensor import Tensor, add


class SanmParams(ParamModel):
    attn: AttentionParams
    fir: FirCoefficients
    mem_cfg: MemoryConfig

    @classmethod
    def init(cls, rng: np.random.Generator, config: AttentionConfig, mem_cfg: MemoryConfig) -> "SanmParams":
        if mem_cfg.d != config.h * config.d_v:
            raise ConfigurationError(f"memory width {mem_cfg.d} must equal h*d_v = {config.h * config.d_v}")
        return cls(attn=AttentionParams.init(rng, config), fir=FirCoefficients.zeros(mem_cfg), mem_cfg=mem_cfg)


def check_directionality(mask: Optional[AttentionMask], mem_cfg: MemoryConfig) -> None:
    if mask is not None and mask.is_causal and not mem_cfg.unidirectional:
        raise ConfigurationError(
            f"causal attention with lookahead order N2={mem_cfg.n2}; unidirectional SAN-M needs N2 = 0")


def memory_branch(x: Tensor, params: SanmParams, valid: Optional[np.ndarray] = None) -> Tensor:
    """M(V): FIR memory over the concatenated value stream."""
    return fir_memory(project_values(x, params.attn), None, params.fir, params.mem_cfg, valid)


def sanm_layer(x: Tensor, params: SanmParams, mask: Optional[AttentionMask] = None,
               valid: Optional[np.ndarray] = None, ctx: Optional[RunContext] = None,
               name: str = "sanm") -> Tensor:
    check_directionality(mask, params.mem_cfg)
    attended = multi_head(x, x, params.attn, mask, ctx, name)
    return add(attended, memory_branch(x, params, valid))
