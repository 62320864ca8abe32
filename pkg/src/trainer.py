"""Training loop: noam schedule, label-smoothed cross-entropy, Adam, teacher forcing, checkpoints."""

import logging
import time
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DegenerateBatchError, DivergenceError, NonFiniteError, ShapeError
from .frontend import generate_corpus, prepare_features
from .layers import RunContext
from .model import ModelParams, build_model, decoder_forward, encoder_forward
from .models import (BOS_ID, EOS_ID, PAD_ID, FeatureSpec, ModelConfig, ScheduleConfig, SequenceBatch,
                     SyntheticTask, TrainConfig, TrainResult, Utterance)
from .tensor import Tensor, log_softmax, mul, neg, total

logger = logging.getLogger(__name__)


def _noam(step: int, cfg: ScheduleConfig) -> float:
    return cfg.k * cfg.d_model ** -0.5 * min(step ** -0.5, step * cfg.warmup_n ** -1.5)


def _inverse_sqrt(step: int, cfg: ScheduleConfig) -> float:
    return cfg.k * min(step ** -0.5, step * cfg.warmup_n ** -1.5)


SCHEDULES: Dict[str, Callable[[int, ScheduleConfig], float]] = {
    "noam": _noam,
    "inverse_sqrt": _inverse_sqrt,
}


def noam_lr(step: int, cfg: ScheduleConfig) -> float:
    """k * d^-0.5 * min(step^-0.5, step * warmup^-1.5) for the default variant."""
    if step < 1:
        raise ValueError(f"learning-rate step must be >= 1, got {step}")
    if cfg.variant not in SCHEDULES:
        raise ConfigurationError(f"unknown schedule variant {cfg.variant!r}; choose from {', '.join(SCHEDULES)}")
    return SCHEDULES[cfg.variant](step, cfg)


def label_smoothed_ce(logits: Tensor, targets: np.ndarray, smoothing: float = 0.1,
                      pad_id: int = PAD_ID) -> Tuple[Tensor, int]:
    """Mean over non-pad positions of -sum_v q_v log p_v.

    q puts (1 - smoothing) on the gold id and smoothing / (vocab - 1) on every other id.
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ShapeError("label_smoothed_ce", logits.shape, targets.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ValueError(f"target id outside vocabulary of size {vocab}")
    keep = targets != pad_id
    count = int(keep.sum())
    if count == 0:
        raise DegenerateBatchError("every target position is padding")

    q = np.full(logits.shape, smoothing / (vocab - 1))
    np.put_along_axis(q, targets[..., None], 1.0 - smoothing, axis=-1)
    q *= keep[..., None] / count
    return neg(total(mul(log_softmax(logits), q))), count


class OptimizerState(BaseModel):
    """Adam first and second moments per parameter name, and the update count."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    v: Dict[str, np.ndarray] = Field(default_factory=dict)
    step: int = 0

    @classmethod
    def init(cls, params: Dict[str, Tensor]) -> "OptimizerState":
        return cls(m={k: np.zeros_like(t.data) for k, t in params.items()},
                   v={k: np.zeros_like(t.data) for k, t in params.items()})

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"m.{k}": a for k, a in self.m.items()}
        arrays.update({f"v.{k}": a for k, a in self.v.items()})
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], step: int) -> "OptimizerState":
        return cls(m={k[2:]: a.copy() for k, a in arrays.items() if k.startswith("m.")},
                   v={k[2:]: a.copy() for k, a in arrays.items() if k.startswith("v.")},
                   step=step)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.998, eps: float = 1e-9) -> OptimizerState:
    """Bias-corrected dense Adam; the whole step is rejected if any gradient is non-finite."""
    for name, g in grads.items():
        if name not in params or params[name].shape != np.shape(g):
            raise ShapeError("adam_step", params[name].shape if name in params else (), np.shape(g))
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name} at step {state.step + 1}")

    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name].data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if np.isfinite(norm) and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Batch(BaseModel):
    """Teacher-forcing batch: features, BOS-shifted decoder inputs and EOS-terminated targets."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    feats: SequenceBatch
    decoder_inputs: SequenceBatch
    targets: np.ndarray

    @property
    def tokens(self) -> int:
        return int((self.targets != PAD_ID).sum())

    @classmethod
    def collate(cls, features: Sequence[np.ndarray], token_lists: Sequence[List[int]]) -> "Batch":
        decoder_inputs = SequenceBatch.from_tokens([[BOS_ID] + list(t) for t in token_lists])
        targets = SequenceBatch.from_tokens([list(t) + [EOS_ID] for t in token_lists]).inputs
        return cls(feats=SequenceBatch.from_features(list(features)), decoder_inputs=decoder_inputs,
                   targets=targets)


def bucketed_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> Iterator[List[int]]:
    """Endless stream of index batches of similar length, in shuffled order each epoch."""
    order = list(np.argsort(np.asarray(lengths), kind="stable"))
    buckets = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    while True:
        for b in rng.permutation(len(buckets)):
            yield [int(i) for i in buckets[b]]


def batch_loss(params: ModelParams, batch: Batch, smoothing: float, ctx: Optional[RunContext] = None
               ) -> Tuple[Tensor, int]:
    z = encoder_forward(batch.feats, params, ctx=ctx)
    logits = decoder_forward(z, batch.decoder_inputs, params, ctx=ctx, memory_valid=batch.feats.valid_mask())
    return label_smoothed_ce(logits, batch.targets, smoothing)


def format_metrics(step: int, loss: float, lr: float, grad_norm: float, tokens: int,
                   tokens_per_s: Optional[float] = None) -> str:
    """One metrics-log record; floats use %.17g so equal runs give equal text."""
    line = f"step={step} loss={loss:.17g} lr={lr:.17g} grad_norm={grad_norm:.17g} tokens={tokens}"
    if tokens_per_s is not None:
        line += f" tokens_per_s={tokens_per_s:.1f}"
    return line


class Trainer:
    """Teacher-forced training of one model on a synthetic task."""

    CHECKPOINT_NAME = "model.ckpt"
    METRICS_NAME = "metrics.log"

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, schedule: Optional[ScheduleConfig] = None,
                 task: Optional[SyntheticTask] = None, out_dir: Union[str, Path] = "runs",
                 corpus: Optional[List[Utterance]] = None):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.schedule = schedule or ScheduleConfig(d_model=model_cfg.d_model)
        self.task = task or SyntheticTask()
        self.out_dir = Path(out_dir)
        self.features = FeatureSpec(base_dim=self.task.base_dim)
        if model_cfg.input_dim != self.features.stacked_dim:
            raise ConfigurationError(
                f"input_dim={model_cfg.input_dim} does not match stacked feature width {self.features.stacked_dim}")

        self.corpus = corpus if corpus is not None else generate_corpus(
            self.task, train_cfg.train_utterances, "train")
        self.inputs = [prepare_features(u.feats, self.features) for u in self.corpus]
        self.params = build_model(model_cfg, seed=train_cfg.seed)
        self.tensors = self.params.tensors()
        self.state = OptimizerState.init(self.tensors)
        self.last_checkpoint: Optional[Path] = None

    def checkpoint_path(self, step: Optional[int] = None) -> Path:
        if step is None:
            return self.out_dir / self.CHECKPOINT_NAME
        return self.out_dir / f"checkpoint-{step:06d}.ckpt"

    def save(self, path: Path, step: int) -> Path:
        meta = {"step": step, "seed": self.train_cfg.seed, "optimizer_step": self.state.step}
        self.last_checkpoint = save_checkpoint(path, self.params, self.state.to_arrays(), meta)
        logger.info("checkpoint written: %s", path)
        return self.last_checkpoint

    def step(self, step: int, batch: Batch, ctx: RunContext) -> Tuple[float, float, float]:
        for t in self.tensors.values():
            t.zero_grad()
        loss, _ = batch_loss(self.params, batch, self.train_cfg.label_smoothing, ctx)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(step, str(self.last_checkpoint) if self.last_checkpoint else None)
        loss.backward()
        grads, norm = clip_gradients({k: t.grad for k, t in self.tensors.items()}, self.train_cfg.grad_clip)
        lr = noam_lr(step, self.schedule)
        try:
            adam_step(self.tensors, grads, self.state, lr, self.train_cfg.beta1, self.train_cfg.beta2,
                      self.train_cfg.adam_eps)
        except NonFiniteError as exc:
            raise DivergenceError(step, str(self.last_checkpoint) if self.last_checkpoint else None) from exc
        return value, lr, norm

    def run(self) -> TrainResult:
        cfg = self.train_cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.out_dir / self.METRICS_NAME
        batches = bucketed_batches([len(x) for x in self.inputs], cfg.batch_size, np.random.default_rng(cfg.seed))
        ctx = RunContext(training=True, dropout=cfg.dropout, rng=np.random.default_rng([cfg.seed, 1]))
        initial_loss = final_loss = None

        logger.info("training %s/%s for %d steps on %d utterances", self.model_cfg.encoder_kind.value,
                    self.model_cfg.decoder_kind.value, cfg.max_steps, len(self.corpus))
        with open(metrics_path, "w", encoding="utf-8") as log:
            for step in range(1, cfg.max_steps + 1):
                indices = next(batches)
                batch = Batch.collate([self.inputs[i] for i in indices], [self.corpus[i].tokens for i in indices])
                started = time.perf_counter()
                try:
                    loss, lr, norm = self.step(step, batch, ctx)
                except DivergenceError as exc:
                    logger.error("%s", exc)
                    raise
                rate = batch.tokens / (time.perf_counter() - started) if cfg.log_throughput else None
                log.write(format_metrics(step, loss, lr, norm, batch.tokens, rate) + "\n")
                initial_loss = loss if initial_loss is None else initial_loss
                final_loss = loss
                if step % cfg.log_every == 0:
                    logger.info("step %d loss %.4f lr %.3g grad_norm %.3f", step, loss, lr, norm)
                if step % cfg.checkpoint_every == 0 and step != cfg.max_steps:
                    self.save(self.checkpoint_path(step), step)

        final = self.save(self.checkpoint_path(), cfg.max_steps)
        return TrainResult(checkpoint=str(final), metrics_log=str(metrics_path), steps=cfg.max_steps,
                           initial_loss=initial_loss, final_loss=final_loss)


def train(model_cfg: ModelConfig, task: SyntheticTask, train_cfg: TrainConfig,
          out_dir: Union[str, Path] = "runs", schedule: Optional[ScheduleConfig] = None) -> TrainResult:
    return Trainer(model_cfg, train_cfg, schedule, task, out_dir).run()


def resume_state(path: Union[str, Path]) -> Tuple[ModelParams, OptimizerState]:
    """Parameters and optimizer state stored in a training checkpoint."""
    ckpt = load_checkpoint(path)
    step = int(ckpt.meta.get("optimizer_step", "0"))
    return ckpt.params, OptimizerState.from_arrays(ckpt.state, step)
