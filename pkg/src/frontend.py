"""Low-frame-rate feature pipeline, synthetic pseudo-ASR data and the corpus file format."""

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatchError, HeaderError, ShapeError, TruncatedPayloadError, CorpusFormatError
from .models import FeatureSpec, SyntheticTask, Utterance

logger = logging.getLogger(__name__)

CORPUS_MAGIC = b"SANMFEAT"
CORPUS_VERSION = 1
SPLIT_CODES = {"train": 0, "heldout": 1, "test": 2}
NORM_FLOOR = 1e-8


def normalize_utterance(frames: np.ndarray) -> np.ndarray:
    """Per-utterance mean and variance normalization; constant channels map to zero."""
    frames = np.asarray(frames, dtype=np.float64)
    std = frames.std(axis=0)
    std = np.where(std < NORM_FLOOR, 1.0, std)
    return (frames - frames.mean(axis=0)) / std


def lfr_stack(frames: np.ndarray, spec: Optional[FeatureSpec] = None) -> np.ndarray:
    """Stack a (left + 1 + right)-frame window every ``hop`` base frames.

    Output row k is centered on base frame ``hop * k``; windows reaching past
    either end repeat the first or last frame.
    """
    spec = spec or FeatureSpec()
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != spec.base_dim or frames.shape[0] < 1:
        raise ShapeError("lfr_stack", frames.shape, (spec.base_dim,))
    T = frames.shape[0]
    n_out = -(-T // spec.hop)
    centers = spec.hop * np.arange(n_out)
    offsets = np.arange(-spec.left, spec.right + 1)
    index = np.clip(centers[:, None] + offsets[None, :], 0, T - 1)
    return frames[index].reshape(n_out, spec.stacked_dim)


def prepare_features(frames: np.ndarray, spec: Optional[FeatureSpec] = None) -> np.ndarray:
    return lfr_stack(normalize_utterance(frames), spec)


def token_templates(task: SyntheticTask) -> np.ndarray:
    """The fixed emission vector of every symbol, shared by all utterances of a task."""
    return np.random.default_rng(task.template_seed).normal(size=(task.alphabet_size, task.base_dim))


def _sample_symbols(rng: np.random.Generator, task: SyntheticTask, count: int) -> List[int]:
    symbols = [int(rng.integers(task.alphabet_size))]
    for _ in range(count - 1):
        if task.allow_repeats:
            symbols.append(int(rng.integers(task.alphabet_size)))
            continue
        # uniform over the other symbols keeps the marginal uniform
        draw = int(rng.integers(task.alphabet_size - 1))
        symbols.append(draw if draw < symbols[-1] else draw + 1)
    return symbols


def generate_utterance(task: SyntheticTask, seed: Union[int, np.random.SeedSequence],
                       templates: Optional[np.ndarray] = None) -> Tuple[np.ndarray, List[int]]:
    """Base-rate features [T, base_dim] and vocabulary ids of one utterance."""
    rng = np.random.default_rng(seed)
    templates = token_templates(task) if templates is None else templates
    vocabulary = task.vocabulary
    count = int(rng.integers(task.min_tokens, task.max_tokens + 1))
    symbols = _sample_symbols(rng, task, count)
    durations = rng.integers(task.min_frames, task.max_frames + 1, size=count)
    feats = np.repeat(templates[symbols], durations, axis=0)
    if task.noise_level > 0:
        feats = feats + task.noise_level * rng.standard_normal(feats.shape)
    return feats, vocabulary.encode([vocabulary.tokens[s] for s in symbols])


def generate_corpus(task: SyntheticTask, count: int, split: str = "train") -> List[Utterance]:
    """``count`` utterances whose seeds are partitioned by split."""
    if split not in SPLIT_CODES:
        raise ValueError(f"unknown split {split!r}; choose from {', '.join(SPLIT_CODES)}")
    templates = token_templates(task)
    corpus = []
    for i in range(count):
        seed = np.random.SeedSequence([task.seed, SPLIT_CODES[split], i])
        feats, tokens = generate_utterance(task, seed, templates)
        corpus.append(Utterance(utt_id=f"{split}-{i:05d}", feats=feats, tokens=tokens))
    logger.debug("generated %d %s utterances", count, split)
    return corpus


def write_feature_file(path: Union[str, Path], utterances: Sequence[Utterance], base_dim: int = 80) -> Path:
    """Magic, version, count, base_dim; then per utterance id, T, token count, f32 features, u32 ids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(struct.pack("<III", CORPUS_VERSION, len(utterances), base_dim))
        for utt in utterances:
            feats = np.asarray(utt.feats)
            if feats.ndim != 2 or feats.shape[1] != base_dim:
                raise ShapeError("write_feature_file", feats.shape, (base_dim,))
            name = utt.utt_id.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<II", feats.shape[0], len(utt.tokens)))
            fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())
            fh.write(np.asarray(utt.tokens, dtype="<u4").tobytes())
    return path


def _read_exact(fh: BinaryIO, n: int, utterance_index: Optional[int], what: str) -> bytes:
    offset = fh.tell()
    chunk = fh.read(n)
    if len(chunk) != n:
        if utterance_index is None:
            raise HeaderError(f"file ends inside the {what}", offset)
        raise TruncatedPayloadError(f"file ends inside the {what}", offset, utterance_index)
    return chunk


def iter_feature_file(path: Union[str, Path], expected_dim: Optional[int] = None) -> Iterator[Utterance]:
    """Stream utterances in file order."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(CORPUS_MAGIC), None, "magic") != CORPUS_MAGIC:
            raise HeaderError("bad magic", 0)
        version, count, base_dim = struct.unpack("<III", _read_exact(fh, 12, None, "header"))
        if version != CORPUS_VERSION:
            raise HeaderError(f"unsupported version {version}", len(CORPUS_MAGIC))
        if base_dim < 1 or (expected_dim is not None and base_dim != expected_dim):
            raise DimensionMismatchError(f"feature width {base_dim}, expected {expected_dim}",
                                         len(CORPUS_MAGIC) + 8)
        for index in range(count):
            (id_length,) = struct.unpack("<I", _read_exact(fh, 4, index, "id length"))
            id_offset = fh.tell()
            try:
                utt_id = _read_exact(fh, id_length, index, "utterance id").decode("utf-8")
            except UnicodeDecodeError:
                raise CorpusFormatError("utterance id is not valid UTF-8", id_offset, index) from None
            frames, n_tokens = struct.unpack("<II", _read_exact(fh, 8, index, "length fields"))
            if frames < 1:
                raise CorpusFormatError("utterance has no frames", fh.tell() - 8, index)
            payload = _read_exact(fh, 4 * frames * base_dim, index, "feature payload")
            feats = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(frames, base_dim)
            tokens = np.frombuffer(_read_exact(fh, 4 * n_tokens, index, "token payload"), dtype="<u4")
            yield Utterance(utt_id=utt_id, feats=feats, tokens=[int(t) for t in tokens])
        trailing = fh.read(1)
        if trailing:
            raise CorpusFormatError(f"trailing bytes after {count} utterances", fh.tell() - 1)


def read_feature_file(path: Union[str, Path], expected_dim: Optional[int] = None) -> List[Utterance]:
    return list(iter_feature_file(path, expected_dim))
