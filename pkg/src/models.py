"""Data models for the SAN-M toolkit: configurations, batches and reports."""

from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ["<pad>", "<s>", "</s>", "<unk>"]


class SublayerKind(str, Enum):
    """Interchangeable sequence-mixing sub-layer."""

    SAN = "san"
    DFSMN = "dfsmn"
    SANM = "sanm"


class MemoryConfig(BaseModel):
    """Orders and strides of a FIR memory block."""

    d: int
    n1: int = 0
    n2: int = 0
    s1: int = 1
    s2: int = 1

    @field_validator("d", "s1", "s2")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("n1", "n2")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @property
    def unidirectional(self) -> bool:
        return self.n2 == 0

    @property
    def taps(self) -> int:
        return self.n1 + 1 + self.n2

    def causal(self) -> "MemoryConfig":
        return self.model_copy(update={"n2": 0})


class AttentionConfig(BaseModel):
    """Widths of multi-head attention."""

    d_model: int
    h: int
    d_k: int
    d_v: int

    @model_validator(mode="after")
    def _check_widths(self) -> "AttentionConfig":
        if self.h < 1 or self.d_k < 1 or self.d_v < 1:
            raise ValueError("h, d_k and d_v must be >= 1")
        if self.h * self.d_v != self.d_model:
            raise ValueError(f"h*d_v = {self.h * self.d_v} must equal d_model = {self.d_model}")
        return self

    @classmethod
    def for_model(cls, d_model: int, h: int) -> "AttentionConfig":
        if h < 1 or d_model % h:
            raise ValueError(f"d_model={d_model} is not divisible by h={h}")
        return cls(d_model=d_model, h=h, d_k=d_model // h, d_v=d_model // h)


class ModelConfig(BaseModel):
    """Architecture hyperparameters of the encoder-decoder."""

    encoder_kind: SublayerKind = SublayerKind.SANM
    decoder_kind: SublayerKind = SublayerKind.DFSMN
    n_blocks: int = 6
    m_blocks: int = 3
    k_blocks: int = 0
    d_basic: int = 512
    d_ffn: int = 2048
    heads: int = 8
    mem_cfg: MemoryConfig = Field(default_factory=lambda: MemoryConfig(d=512, n1=5, n2=5))
    dfsmn_hidden: Optional[int] = None
    vocab_size: int = 4233
    input_dim: int = 560
    use_positional_encoding: Optional[bool] = None
    dropout: float = 0.1
    post_norm: bool = True
    output_ffn: bool = True

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if self.n_blocks < 1:
            raise ValueError("n_blocks (N) must be >= 1")
        if self.m_blocks < 0 or self.k_blocks < 0:
            raise ValueError("m_blocks (M) and k_blocks (K) must be >= 0")
        if self.d_basic < 2 or self.d_ffn < 1:
            raise ValueError("d_basic must be >= 2 and d_ffn >= 1")
        if self.heads < 1 or self.d_basic % self.heads:
            raise ValueError(f"d_basic={self.d_basic} must be divisible by heads={self.heads}")
        if self.mem_cfg.d != self.d_basic:
            raise ValueError(f"mem_cfg.d={self.mem_cfg.d} must equal d_basic={self.d_basic}")
        if self.dfsmn_hidden is not None and self.dfsmn_hidden < 1:
            raise ValueError("dfsmn_hidden must be >= 1")
        if self.vocab_size <= len(RESERVED_TOKENS) or self.input_dim < 1:
            raise ValueError("vocab_size must exceed the reserved ids and input_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self

    @property
    def d_model(self) -> int:
        return self.d_basic

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig.for_model(self.d_basic, self.heads)

    @property
    def hidden_width(self) -> int:
        return self.dfsmn_hidden or self.d_basic

    @property
    def encoder_memory(self) -> MemoryConfig:
        return self.mem_cfg

    @property
    def decoder_memory(self) -> MemoryConfig:
        return self.mem_cfg.causal()

    @property
    def encoder_positional(self) -> bool:
        if self.use_positional_encoding is not None:
            return self.use_positional_encoding
        return self.encoder_kind == SublayerKind.SAN

    @property
    def decoder_positional(self) -> bool:
        if self.use_positional_encoding is not None:
            return self.use_positional_encoding
        return self.decoder_kind == SublayerKind.SAN

    @classmethod
    def preset(cls, name: str) -> "ModelConfig":
        if name not in MODEL_PRESETS:
            raise KeyError(f"unknown preset {name!r}; choose from {', '.join(MODEL_PRESETS)}")
        return cls(**MODEL_PRESETS[name])


def _preset(encoder: str, decoder: str, n: int, m: int, k: int, d: int, ffn: int, vocab: int, **extra) -> dict:
    heads = extra.pop("heads", 8)
    orders = extra.pop("orders", (5, 5))
    return dict(encoder_kind=encoder, decoder_kind=decoder, n_blocks=n, m_blocks=m, k_blocks=k,
                d_basic=d, d_ffn=ffn, heads=heads, vocab_size=vocab,
                mem_cfg=MemoryConfig(d=d, n1=orders[0], n2=orders[1]), **extra)


MODEL_PRESETS: Dict[str, dict] = {
    "aishell_san_san": _preset("san", "san", 6, 3, 0, 512, 2048, 4233),
    "aishell_dfsmn_dfsmn": _preset("dfsmn", "dfsmn", 6, 3, 0, 512, 2048, 4233),
    "aishell_sanm_dfsmn": _preset("sanm", "dfsmn", 6, 3, 0, 512, 2048, 4233),
    "exp1": _preset("san", "san", 10, 6, 0, 512, 2048, 9000),
    "exp2": _preset("dfsmn", "dfsmn", 10, 6, 0, 512, 2048, 9000),
    "exp3": _preset("sanm", "dfsmn", 10, 6, 0, 512, 2048, 9000),
    "exp4": _preset("sanm", "dfsmn", 40, 6, 6, 256, 1024, 9000),
    "exp5": _preset("sanm", "dfsmn", 40, 6, 6, 320, 1280, 9000),
    "desk_san": _preset("san", "san", 2, 1, 0, 64, 256, 24, heads=2, orders=(4, 4),
                        use_positional_encoding=True),
    "desk_dfsmn": _preset("dfsmn", "dfsmn", 2, 1, 0, 64, 256, 24, heads=2, orders=(4, 4),
                          use_positional_encoding=True),
    "desk_sanm": _preset("sanm", "dfsmn", 2, 1, 0, 64, 256, 24, heads=2, orders=(4, 4),
                         use_positional_encoding=True),
}


class ScheduleConfig(BaseModel):
    """Learning-rate schedule parameters."""

    d_model: int = 512
    warmup_n: int = 8000
    k: float = 1.0
    variant: str = "noam"

    @model_validator(mode="after")
    def _positive(self) -> "ScheduleConfig":
        if self.d_model < 1 or self.warmup_n < 1 or self.k <= 0:
            raise ValueError("d_model, warmup_n and k must be positive")
        return self


class TrainConfig(BaseModel):
    """Training-loop settings."""

    batch_size: int = 16
    max_steps: int = 5000
    label_smoothing: float = 0.1
    dropout: float = 0.1
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100
    grad_clip: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.998
    adam_eps: float = 1e-9
    train_utterances: int = 500
    heldout_utterances: int = 100
    log_throughput: bool = False

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.max_steps < 0 or self.checkpoint_every < 1 or self.log_every < 1:
            raise ValueError("batch_size, checkpoint_every and log_every must be >= 1, max_steps >= 0")
        if self.grad_clip <= 0 or self.train_utterances < 1:
            raise ValueError("grad_clip and train_utterances must be positive")
        return self


class FeatureSpec(BaseModel):
    """Low-frame-rate stacking layout."""

    base_dim: int = 80
    left: int = 3
    right: int = 3
    hop: int = 6

    @model_validator(mode="after")
    def _check(self) -> "FeatureSpec":
        if self.base_dim < 1 or self.hop < 1 or self.left < 0 or self.right < 0:
            raise ValueError("base_dim and hop must be >= 1, context sizes >= 0")
        return self

    @property
    def window(self) -> int:
        return self.left + 1 + self.right

    @property
    def stacked_dim(self) -> int:
        return self.window * self.base_dim


class SyntheticTask(BaseModel):
    """Pseudo-ASR task: each token emits a fixed template for a sampled duration."""

    alphabet_size: int = 20
    min_tokens: int = 1
    max_tokens: int = 12
    min_frames: int = 12
    max_frames: int = 24
    base_dim: int = 80
    noise_level: float = 0.0
    template_seed: int = 7
    seed: int = 0
    allow_repeats: bool = False

    @model_validator(mode="after")
    def _check(self) -> "SyntheticTask":
        if self.alphabet_size < 1 or self.base_dim < 1:
            raise ValueError("alphabet_size and base_dim must be >= 1")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ValueError("need 1 <= min_frames <= max_frames")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if not self.allow_repeats and self.alphabet_size < 2 and self.max_tokens > 1:
            raise ValueError("an alphabet of one token needs allow_repeats for multi-token utterances")
        return self

    @property
    def vocabulary(self) -> "Vocabulary":
        return Vocabulary.synthetic(self.alphabet_size)


class Vocabulary(BaseModel):
    """Token <-> id table; ids 0..3 are PAD, BOS, EOS, UNK."""

    tokens: List[str] = Field(default_factory=list)

    @field_validator("tokens")
    @classmethod
    def _unique(cls, tokens: List[str]) -> List[str]:
        if len(set(tokens)) != len(tokens) or set(tokens) & set(RESERVED_TOKENS):
            raise ValueError("tokens must be unique and distinct from reserved symbols")
        return tokens

    @classmethod
    def synthetic(cls, alphabet_size: int) -> "Vocabulary":
        return cls(tokens=[f"t{i}" for i in range(alphabet_size)])

    @property
    def size(self) -> int:
        return len(RESERVED_TOKENS) + len(self.tokens)

    def id_of(self, token: str) -> int:
        if token in RESERVED_TOKENS:
            return RESERVED_TOKENS.index(token)
        try:
            return len(RESERVED_TOKENS) + self.tokens.index(token)
        except ValueError:
            return UNK_ID

    def token_of(self, token_id: int) -> str:
        if 0 <= token_id < len(RESERVED_TOKENS):
            return RESERVED_TOKENS[token_id]
        index = token_id - len(RESERVED_TOKENS)
        return self.tokens[index] if 0 <= index < len(self.tokens) else RESERVED_TOKENS[UNK_ID]

    def encode(self, tokens: List[str]) -> List[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: List[int]) -> List[str]:
        return [self.token_of(i) for i in ids]


class SequenceBatch(BaseModel):
    """Padded feature [B, T, d_in] or token-id [B, T] sequences with lengths."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: np.ndarray
    lengths: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "SequenceBatch":
        if self.inputs.ndim not in (2, 3) or self.lengths.shape != (self.inputs.shape[0],):
            raise ValueError(f"bad batch shapes {self.inputs.shape} / {self.lengths.shape}")
        if (self.lengths < 1).any() or (self.lengths > self.inputs.shape[1]).any():
            raise ValueError("every length must be in [1, T]")
        return self

    @property
    def batch_size(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def max_length(self) -> int:
        return int(self.inputs.shape[1])

    def valid_mask(self) -> np.ndarray:
        return np.arange(self.max_length)[None, :] < self.lengths[:, None]

    @classmethod
    def from_features(cls, sequences: List[np.ndarray]) -> "SequenceBatch":
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        width = sequences[0].shape[1]
        inputs = np.zeros((len(sequences), int(lengths.max()), width), dtype=np.float64)
        for i, seq in enumerate(sequences):
            inputs[i, : len(seq)] = seq
        return cls(inputs=inputs, lengths=lengths)

    @classmethod
    def from_tokens(cls, sequences: List[List[int]], pad_id: int = PAD_ID) -> "SequenceBatch":
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        inputs = np.full((len(sequences), int(lengths.max())), pad_id, dtype=np.int64)
        for i, seq in enumerate(sequences):
            inputs[i, : len(seq)] = seq
        return cls(inputs=inputs, lengths=lengths)


class Utterance(BaseModel):
    """One corpus entry: base-rate features and target token ids."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    utt_id: str
    feats: np.ndarray
    tokens: List[int] = Field(default_factory=list)


class AttentionMap(BaseModel):
    """Head-averaged attention weights of one layer."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    stack: str
    layer: int
    name: str
    weights: np.ndarray
    per_head: Optional[np.ndarray] = None


class FilterTaps(BaseModel):
    """Channel-averaged FIR filter of one memory layer."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    stack: str
    layer: int
    n1: int
    n2: int
    taps: np.ndarray


class AnalysisDump(BaseModel):
    """Attention maps and memory filters captured for one utterance."""

    utterance_id: str
    attention: List[AttentionMap] = Field(default_factory=list)
    filters: List[FilterTaps] = Field(default_factory=list)
    diagonal_mass: Dict[str, float] = Field(default_factory=dict)
    future_mass: Dict[str, float] = Field(default_factory=dict)
    generated_at: datetime = Field(default_factory=datetime.now)


class BenchPoint(BaseModel):
    """Median forward time of one sub-layer kind at one length."""

    kind: str
    length: int
    median_seconds: float
    reps: int
    number: int = 1


class BenchReport(BaseModel):
    """Scaling benchmark results with fitted log-log slopes."""

    d: int
    points: List[BenchPoint] = Field(default_factory=list)
    slopes: Dict[str, float] = Field(default_factory=dict)
    generated_at: datetime = Field(default_factory=datetime.now)

    @model_validator(mode="after")
    def _check(self) -> "BenchReport":
        by_kind: Dict[str, List[int]] = {}
        for point in self.points:
            by_kind.setdefault(point.kind, []).append(point.length)
            if point.reps < 5:
                raise ValueError("every point needs at least 5 repetitions")
        for lengths in by_kind.values():
            if any(b <= a for a, b in zip(lengths, lengths[1:])):
                raise ValueError("lengths must be strictly increasing")
        return self


class DecodeResult(BaseModel):
    """Greedy hypothesis for one utterance."""

    utt_id: str
    hypothesis: List[int] = Field(default_factory=list)
    reference: List[int] = Field(default_factory=list)
    cer: float = 0.0
    edits: int = 0
    transcript: str = ""


class EvalReport(BaseModel):
    """Per-utterance and corpus-level CER."""

    checkpoint: str
    corpus: str
    results: List[DecodeResult] = Field(default_factory=list)
    corpus_cer: float = 0.0
    generated_at: datetime = Field(default_factory=datetime.now)


class TrainResult(BaseModel):
    """Summary of a finished training run."""

    checkpoint: str
    metrics_log: str
    steps: int = 0
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
