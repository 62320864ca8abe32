"""Greedy decoding, CER scoring, attention/filter analysis and the scaling benchmark."""

import logging
import timeit
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import Levenshtein
import numpy as np

from .attention import AttentionParams, attention_split, multi_head
from .errors import ConfigurationError, EmptyReferenceError
from .frontend import prepare_features
from .layers import RunContext
from .memory import DfsmnLayerParams, FirCoefficients, average_filter, dfsmn_memory, fir_memory
from .model import ModelParams, decoder_forward, encoder_forward
from .models import (BOS_ID, EOS_ID, AnalysisDump, AttentionConfig, AttentionMap, BenchPoint, BenchReport,
                     DecodeResult, FeatureSpec, FilterTaps, MemoryConfig, SequenceBatch, SublayerKind, Utterance,
                     Vocabulary)
from .report_generator import ReportGenerator
from .sanm import SanmParams, sanm_layer
from .tensor import Tensor

logger = logging.getLogger(__name__)

BENCH_KINDS = ("san", "dfsmn", "sanm", "fir")
DEFAULT_BENCH_LENGTHS = (256, 512, 1024, 2048, 4096)


def encode_features(params: ModelParams, feats: np.ndarray, ctx: Optional[RunContext] = None) -> Tensor:
    """Encoder output [1, T, d] for one LFR feature matrix."""
    return encoder_forward(SequenceBatch.from_features([feats]), params, ctx=ctx)


def greedy_decode(z: Tensor, params: ModelParams, max_len: int, memory_valid: Optional[np.ndarray] = None,
                  ctx: Optional[RunContext] = None) -> List[int]:
    """Argmax token per step from BOS until EOS or ``max_len`` tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if z.ndim == 2:
        z = Tensor(z.data[None])
    prefix = [BOS_ID]
    for _ in range(max_len):
        logits = decoder_forward(z, SequenceBatch.from_tokens([prefix]), params, ctx=ctx,
                                 memory_valid=memory_valid)
        token = int(np.argmax(logits.data[0, -1]))
        if token == EOS_ID:
            break
        prefix.append(token)
    return prefix[1:]


def edit_distance(hyp: Sequence[int], ref: Sequence[int]) -> int:
    return Levenshtein.distance(list(hyp), list(ref))


def cer(hyp: Sequence[int], ref: Sequence[int]) -> float:
    """Levenshtein(hyp, ref) / len(ref) with unit costs."""
    if len(ref) == 0:
        raise EmptyReferenceError("CER is undefined for an empty reference")
    return edit_distance(hyp, ref) / len(ref)


def corpus_cer(results: Sequence[DecodeResult]) -> float:
    """Total edits over total reference tokens."""
    reference_tokens = sum(len(r.reference) for r in results)
    if reference_tokens == 0:
        raise EmptyReferenceError("corpus has no reference tokens")
    return sum(r.edits for r in results) / reference_tokens


def decode_utterance(params: ModelParams, utt: Utterance, spec: Optional[FeatureSpec] = None,
                     max_len: Optional[int] = None, vocabulary: Optional[Vocabulary] = None) -> DecodeResult:
    """Greedy hypothesis and CER; with a vocabulary the hypothesis is also spelled out as tokens."""
    feats = prepare_features(utt.feats, spec)
    hypothesis = greedy_decode(encode_features(params, feats), params, max_len or len(feats))
    edits = edit_distance(hypothesis, utt.tokens)
    transcript = " ".join(vocabulary.decode(hypothesis)) if vocabulary is not None else ""
    return DecodeResult(utt_id=utt.utt_id, hypothesis=hypothesis, reference=list(utt.tokens),
                        edits=edits, cer=cer(hypothesis, utt.tokens), transcript=transcript)


def decode_corpus(params: ModelParams, utterances: Sequence[Utterance], spec: Optional[FeatureSpec] = None,
                  max_len: Optional[int] = None, workers: int = 1,
                  vocabulary: Optional[Vocabulary] = None) -> List[DecodeResult]:
    """Decode every utterance in order; ``workers`` > 1 shares the read-only params across threads."""
    if workers <= 1:
        return [decode_utterance(params, u, spec, max_len, vocabulary) for u in utterances]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda u: decode_utterance(params, u, spec, max_len, vocabulary), utterances))


def diagonal_mass(weights: np.ndarray, band: int = 2) -> float:
    """Mean per-row attention mass on keys with |t - t'| <= band."""
    weights = np.asarray(weights)
    t_query, t_key = weights.shape[-2:]
    offsets = np.abs(np.arange(t_query)[:, None] - np.arange(t_key)[None, :])
    inside = (weights * (offsets <= band)).sum(axis=-1)
    return float(inside.mean())


def future_mass(weights: np.ndarray) -> float:
    """Mean per-row attention mass on keys after the query position."""
    weights = np.asarray(weights)
    rows = min(weights.shape[-2], weights.shape[-1])
    return float(np.mean([attention_split(weights, t)[1] for t in range(rows)]))


def _sublayer_fir(basic) -> Optional[FirCoefficients]:
    if basic.kind == SublayerKind.SANM:
        return basic.sanm.fir
    if basic.kind == SublayerKind.DFSMN:
        return basic.dfsmn.fir
    return None


def collect_filters(params: ModelParams, mirror_decoder: bool = False) -> List[FilterTaps]:
    """Channel-averaged taps of every memory layer, look-back farthest first."""
    filters = []
    stacks = (("encoder", params.encoder, params.config.encoder_memory),
              ("decoder", params.decoder, params.config.decoder_memory))
    for stack, blocks, mem in stacks:
        for i, block in enumerate(blocks):
            fir = _sublayer_fir(block.basic)
            if fir is None:
                continue
            taps = average_filter(fir)
            if stack == "decoder" and mirror_decoder:
                taps = taps[::-1].copy()
            filters.append(FilterTaps(stack=stack, layer=i, n1=mem.n1, n2=mem.n2, taps=taps))
    return filters


def capture_attention(params: ModelParams, feats: np.ndarray, tokens: Optional[Sequence[int]] = None,
                      per_head: bool = False) -> Tuple[List[AttentionMap], List[int]]:
    """Record every attention layer of one forward pass.

    The decoder is teacher-forced on ``tokens``; without tokens it runs on the
    greedy hypothesis. Returns the maps and the token sequence used.
    """
    ctx = RunContext(record=True, per_head=per_head)
    z = encode_features(params, feats, ctx)
    if tokens is None:
        tokens = greedy_decode(z, params, max_len=len(feats))
    decoder_forward(z, SequenceBatch.from_tokens([[BOS_ID] + list(tokens)]), params, ctx=ctx)

    maps = []
    for name, weights in ctx.attention.items():
        stack, layer = name.split(".")
        heads = ctx.attention_heads.get(name)
        maps.append(AttentionMap(stack=stack, layer=int(layer), name=name, weights=weights[0],
                                 per_head=None if heads is None else heads[0]))
    return maps, list(tokens)


def dump_analysis(params: ModelParams, utt: Utterance, out_dir: Union[str, Path], spec: Optional[FeatureSpec] = None,
                  per_head: bool = False, mirror: bool = False, band: int = 2,
                  teacher_forced: bool = True) -> AnalysisDump:
    """Write attention CSV/PGM files and filter CSVs for one utterance under ``out_dir``."""
    feats = prepare_features(utt.feats, spec)
    maps, _ = capture_attention(params, feats, utt.tokens if teacher_forced else None, per_head)
    dump = AnalysisDump(utterance_id=utt.utt_id, attention=maps, filters=collect_filters(params, mirror))
    for m in maps:
        if m.stack in ("encoder", "decoder"):
            dump.diagonal_mass[m.name] = diagonal_mass(m.weights, band)
            dump.future_mass[m.name] = future_mass(m.weights)
    ReportGenerator().write_analysis(dump, out_dir)
    logger.info("analysis for %s: %d attention maps, %d filters", utt.utt_id, len(maps), len(dump.filters))
    return dump


def _bench_layer(kind: str, d: int, heads: int, mem: MemoryConfig, rng: np.random.Generator
                 ) -> Callable[[Tensor], Tensor]:
    attention = AttentionConfig.for_model(d, heads)
    if kind == "san":
        params = AttentionParams.init(rng, attention)
        return lambda x: multi_head(x, x, params)
    if kind == "sanm":
        sanm = SanmParams.init(rng, attention, mem)
        sanm.fir = FirCoefficients.random(rng, mem)
        return lambda x: sanm_layer(x, sanm)
    if kind == "dfsmn":
        dfsmn = DfsmnLayerParams.init(rng, mem, d)
        dfsmn.fir = FirCoefficients.random(rng, mem)
        return lambda x: dfsmn_memory(x, dfsmn, mem)
    if kind == "fir":
        fir = FirCoefficients.random(rng, mem)
        return lambda x: fir_memory(x, None, fir, mem)
    raise ConfigurationError(f"unknown benchmark kind {kind!r}; choose from {', '.join(BENCH_KINDS)}")


def time_call(fn: Callable[[], object], reps: int) -> Tuple[float, int]:
    """Median seconds per call over ``reps`` repeats after one untimed warm-up call.

    Calls per repeat grow until a repeat takes >= 0.2 s.
    """
    fn()
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    samples = timer.repeat(repeat=reps, number=number)
    return float(np.median(samples)) / number, number


def fit_slope(lengths: Sequence[int], seconds: Sequence[float]) -> float:
    """Least-squares slope of log(time) against log(length)."""
    return float(np.polyfit(np.log(lengths), np.log(seconds), 1)[0])


def bench_scaling(kinds: Sequence[str] = ("san", "fir"), lengths: Sequence[int] = DEFAULT_BENCH_LENGTHS,
                  d: int = 64, reps: int = 5, heads: int = 1, orders: Tuple[int, int] = (10, 10),
                  seed: int = 0) -> BenchReport:
    """Forward-only timing of single basic sub-layers at increasing sequence lengths."""
    lengths = [int(n) for n in lengths]
    if reps < 5:
        raise ConfigurationError("bench needs at least 5 repetitions")
    if len(lengths) < 2 or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigurationError("bench lengths must be at least two strictly increasing values")
    mem = MemoryConfig(d=d, n1=orders[0], n2=orders[1])
    rng = np.random.default_rng(seed)

    points = []
    slopes: Dict[str, float] = {}
    for kind in kinds:
        layer = _bench_layer(kind, d, heads, mem, rng)
        medians = []
        for n in lengths:
            x = Tensor(rng.standard_normal((1, n, d)))
            median, number = time_call(lambda: layer(x), reps)
            medians.append(median)
            points.append(BenchPoint(kind=kind, length=n, median_seconds=median, reps=reps, number=number))
            logger.debug("bench %s n=%d: %.3g s (number=%d)", kind, n, median, number)
        slopes[kind] = fit_slope(lengths, medians)
        logger.info("bench %s: log-log slope %.2f", kind, slopes[kind])
    return BenchReport(d=d, points=points, slopes=slopes)
