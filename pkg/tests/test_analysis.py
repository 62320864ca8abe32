import itertools
import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.analysis import (bench_scaling, capture_attention, cer, collect_filters, corpus_cer, decode_corpus,
                          decode_utterance, diagonal_mass, dump_analysis, edit_distance, fit_slope, future_mass,
                          greedy_decode)
from src.checkpoint import load_checkpoint
from src.config import load_run_config
from src.errors import ConfigurationError, EmptyReferenceError
from src.frontend import generate_corpus, prepare_features
from src.memory import FirCoefficients
from src.model import build_model
from src.models import EOS_ID, DecodeResult, FeatureSpec, SublayerKind, Utterance, Vocabulary
from src.report_generator import matrix_to_csv, read_matrix_csv
from src.tensor import Tensor
from src.trainer import Trainer
from tests.conftest import tiny_config
from tests.oracles import oracle_edit_distance

SPEC = FeatureSpec(base_dim=2)
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def tiny_params(encoder="sanm", decoder="dfsmn", seed=0):
    params = build_model(tiny_config(encoder, decoder, input_dim=14), seed)
    rng = np.random.default_rng(seed)
    for block in params.encoder + params.decoder:
        basic = block.basic
        if basic.kind != SublayerKind.SAN:
            holder = basic.sanm if basic.kind == SublayerKind.SANM else basic.dfsmn
            holder.fir = FirCoefficients.random(rng, basic.mem_cfg, scale=0.3)
    return params


def rig_output(params, token):
    params.output_proj.weight.data[...] = 0.0
    params.output_proj.bias.data[...] = 0.0
    params.output_proj.bias.data[token] = 10.0


def utterance(seed=0, frames=30):
    rng = np.random.default_rng(seed)
    return Utterance(utt_id=f"utt-{seed}", feats=rng.standard_normal((frames, 2)), tokens=[4, 5, 6])


def test_cer_examples():
    assert cer([1, 2, 3], [1, 2, 3]) == 0.0
    assert cer([], [1, 2, 3, 4, 5]) == 1.0
    assert cer([1, 2, 3, 4], [1, 7, 3, 8]) == 0.5
    assert cer([1, 2, 3, 9], [1, 2, 3]) == pytest.approx(1 / 3)


def test_cer_needs_a_reference():
    with pytest.raises(EmptyReferenceError):
        cer([1], [])


def test_edit_distance_matches_table_oracle_exhaustively():
    sequences = [list(s) for n in range(5) for s in itertools.product(range(3), repeat=n)]
    for hyp in sequences:
        for ref in sequences:
            assert edit_distance(hyp, ref) == oracle_edit_distance(hyp, ref)


def test_edit_distance_matches_oracle_up_to_length_ten():
    rng = np.random.default_rng(0)
    for _ in range(3000):
        hyp = rng.integers(0, 3, size=int(rng.integers(0, 11))).tolist()
        ref = rng.integers(0, 3, size=int(rng.integers(0, 11))).tolist()
        distance = edit_distance(hyp, ref)
        assert distance == oracle_edit_distance(hyp, ref) == edit_distance(ref, hyp)
        assert (distance == 0) == (hyp == ref)


def test_corpus_cer_pools_edits():
    results = [DecodeResult(utt_id="a", reference=[1, 2], edits=1),
               DecodeResult(utt_id="b", reference=[1, 2, 3, 4, 5, 6], edits=1)]
    assert corpus_cer(results) == 0.25
    with pytest.raises(EmptyReferenceError):
        corpus_cer([])


def test_greedy_decode_stops_at_immediate_eos():
    params = tiny_params()
    rig_output(params, EOS_ID)
    z = Tensor(np.random.default_rng(1).standard_normal((1, 4, 8)))
    assert greedy_decode(z, params, max_len=5) == []


def test_greedy_decode_repeats_constant_token():
    params = tiny_params()
    rig_output(params, 6)
    z = Tensor(np.random.default_rng(2).standard_normal((4, 8)))
    assert greedy_decode(z, params, max_len=7) == [6] * 7


def test_greedy_decode_rejects_zero_length():
    with pytest.raises(ValueError):
        greedy_decode(Tensor(np.zeros((1, 2, 8))), tiny_params(), max_len=0)


def test_decoding_is_deterministic():
    params = tiny_params()
    utt = utterance(3)
    first = decode_utterance(params, utt, SPEC)
    assert first == decode_utterance(params, utt, SPEC)
    assert first.cer == cer(first.hypothesis, utt.tokens)
    assert len(first.hypothesis) <= 5


def test_decoding_with_a_vocabulary_spells_the_hypothesis():
    params = tiny_params()
    rig_output(params, 6)
    result = decode_utterance(params, utterance(4, frames=9), SPEC, max_len=3, vocabulary=Vocabulary.synthetic(5))
    assert result.hypothesis == [6, 6, 6]
    assert result.transcript == "t2 t2 t2"
    assert decode_utterance(params, utterance(4, frames=9), SPEC, max_len=3).transcript == ""


def test_threaded_decoding_keeps_order():
    params = tiny_params()
    utterances = [utterance(s, frames=12 + s) for s in range(4)]
    serial = decode_corpus(params, utterances, SPEC)
    assert decode_corpus(params, utterances, SPEC, workers=3) == serial
    assert [r.utt_id for r in serial] == [u.utt_id for u in utterances]


def test_diagonal_and_future_mass():
    assert diagonal_mass(np.eye(6)) == 1.0
    assert diagonal_mass(np.full((5, 5), 0.2), band=0) == pytest.approx(0.2)
    assert future_mass(np.tril(np.ones((4, 4))) / np.arange(1, 5)[:, None]) == 0.0
    assert future_mass(np.full((4, 4), 0.25)) == pytest.approx(np.mean([0.75, 0.5, 0.25, 0.0]))


def test_captured_maps_are_row_stochastic():
    params = tiny_params("san", "sanm")
    feats = np.random.default_rng(4).standard_normal((6, 14))
    maps, tokens = capture_attention(params, feats, [4, 5, 6, 7], per_head=True)
    assert tokens == [4, 5, 6, 7]
    by_name = {m.name: m for m in maps}
    assert set(by_name) == {"encoder.0", "decoder.0", "cross.0"}
    for m in maps:
        assert_allclose(m.weights.sum(axis=-1), np.ones(m.weights.shape[0]), atol=1e-6)
        assert m.per_head.shape == (2,) + m.weights.shape
    assert by_name["decoder.0"].weights.shape == (5, 5)
    assert_array_equal(np.triu(by_name["decoder.0"].weights, 1), np.zeros((5, 5)))
    assert by_name["cross.0"].weights.shape == (5, 6)


def test_filters_have_one_tap_per_offset():
    params = tiny_params()
    filters = collect_filters(params)
    assert [(f.stack, f.taps.shape) for f in filters] == [("encoder", (4,)), ("decoder", (3,))]
    mirrored = collect_filters(params, mirror_decoder=True)
    assert_array_equal(mirrored[1].taps, filters[1].taps[::-1])
    assert_array_equal(mirrored[0].taps, filters[0].taps)
    assert collect_filters(tiny_params("san", "san")) == []


def test_dump_writes_reloadable_files(tmp_path):
    params = tiny_params("sanm", "sanm")
    utt = utterance(5)
    dump = dump_analysis(params, utt, tmp_path, SPEC, per_head=True)
    out = tmp_path / utt.utt_id
    for m in dump.attention:
        stem = f"attention_{m.stack}_{m.layer}"
        reloaded = read_matrix_csv(out / f"{stem}.csv")
        assert_array_equal(reloaded, m.weights)
        assert_allclose(reloaded.sum(axis=-1), np.ones(reloaded.shape[0]), atol=1e-6)
        assert (out / f"{stem}_head1.csv").exists()
        pgm = (out / f"{stem}.pgm").read_bytes()
        rows, cols = m.weights.shape
        assert pgm.startswith(f"P5\n{cols} {rows}\n255\n".encode())
        assert len(pgm) == len(f"P5\n{cols} {rows}\n255\n") + rows * cols
    decoder = read_matrix_csv(out / "attention_decoder_0.csv")
    assert not np.triu(decoder, 1).any()
    assert np.all(np.diag(decoder) > 0)
    taps = read_matrix_csv(out / "filter_encoder_0.csv")
    assert taps.shape == (1, 4)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["utterance_id"] == utt.utt_id
    assert summary["future_mass"]["decoder.0"] == 0.0
    assert set(summary["diagonal_mass"]) == {"encoder.0", "decoder.0"}


def test_matrix_csv_round_trips_exactly(tmp_path):
    matrix = np.random.default_rng(6).standard_normal((3, 4)) * 1e-7
    path = tmp_path / "m.csv"
    path.write_text(matrix_to_csv(matrix))
    assert_array_equal(read_matrix_csv(path), matrix)
    path.write_text(matrix_to_csv(np.array([0.25, 1.0 / 3.0])))
    assert_array_equal(read_matrix_csv(path), [[0.25, 1.0 / 3.0]])


def test_fit_slope_recovers_power_law():
    lengths = [256, 512, 1024, 2048]
    assert fit_slope(lengths, [1e-9 * n ** 2 for n in lengths]) == pytest.approx(2.0)
    assert fit_slope(lengths, [3e-6 * n for n in lengths]) == pytest.approx(1.0)


def test_bench_rejects_bad_grids():
    with pytest.raises(ConfigurationError):
        bench_scaling(["fir"], [16, 32], reps=4)
    with pytest.raises(ConfigurationError):
        bench_scaling(["fir"], [32, 16])
    with pytest.raises(ConfigurationError):
        bench_scaling(["fir"], [16])
    with pytest.raises(ConfigurationError):
        bench_scaling(["lstm"], [16, 32])


def test_bench_reports_every_point():
    report = bench_scaling(["fir"], [8, 16], d=4, orders=(2, 2))
    assert [(p.kind, p.length) for p in report.points] == [("fir", 8), ("fir", 16)]
    assert all(p.median_seconds > 0 and p.reps == 5 and p.number >= 1 for p in report.points)
    assert set(report.slopes) == {"fir"}


@pytest.mark.slow
def test_attention_is_quadratic_and_fir_is_linear():
    report = bench_scaling(["san", "fir"])
    assert 1.7 <= report.slopes["san"] <= 2.3
    assert 0.8 <= report.slopes["fir"] <= 1.3


@pytest.mark.slow
def test_doubling_repetitions_keeps_medians_stable():
    short = bench_scaling(["san", "fir"], [512, 2048], reps=5)
    long = bench_scaling(["san", "fir"], [512, 2048], reps=10)
    for a, b in zip(short.points, long.points):
        assert (a.kind, a.length) == (b.kind, b.length)
        assert abs(b.median_seconds - a.median_seconds) < 0.2 * a.median_seconds


DESK_CER = {"desk_sanm": 0.05, "desk_san": 0.15, "desk_dfsmn": 0.15}


@pytest.mark.slow
@pytest.mark.parametrize("name", list(DESK_CER))
def test_desk_model_learns_the_synthetic_task(tmp_path, name):
    run = load_run_config(CONFIGS / f"{name}.conf")
    result = Trainer(run.model, run.train, run.schedule, run.task, tmp_path).run()
    params = load_checkpoint(result.checkpoint).params
    heldout = generate_corpus(run.task, 100, "heldout")
    results = decode_corpus(params, heldout, run.features, workers=4)
    assert corpus_cer(results) < DESK_CER[name]
    if run.model.encoder_kind == SublayerKind.SAN:
        utt = heldout[0]
        maps, _ = capture_attention(params, prepare_features(utt.feats, run.features), utt.tokens)
        assert max(diagonal_mass(m.weights) for m in maps if m.stack == "encoder") > 0.5
