import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import ShapeError
from src.layers import RunContext
from src.memory import FirCoefficients
from src.model import build_model, count_parameters, decoder_forward, encoder_forward
from src.models import MemoryConfig, ModelConfig, SequenceBatch, SublayerKind
from src.tensor import grad_check, mul, total
from tests.conftest import tiny_config
from tests.oracles import oracle_model


def randomize_filters(params, rng):
    for block in params.encoder + params.decoder:
        basic = block.basic
        holder = basic.sanm if basic.kind == SublayerKind.SANM else basic.dfsmn
        if holder is not None:
            holder.fir = FirCoefficients.random(rng, basic.mem_cfg, scale=0.3)


def features(rng, lengths, width=6):
    return SequenceBatch.from_features([rng.standard_normal((n, width)) for n in lengths])


def tokens(rng, lengths, vocab=9):
    return SequenceBatch.from_tokens([rng.integers(1, vocab, size=n).tolist() for n in lengths])


def forward(params, feats, targets, ctx=None):
    z = encoder_forward(feats, params, ctx=ctx)
    return decoder_forward(z, targets, params, ctx=ctx, memory_valid=feats.valid_mask())


@pytest.mark.parametrize("name,reference", [("aishell_san_san", 46e6), ("aishell_dfsmn_dfsmn", 37e6),
                                            ("aishell_sanm_dfsmn", 43e6)])
def test_reference_parameter_counts(name, reference):
    assert abs(count_parameters(ModelConfig.preset(name)) - reference) <= 0.2 * reference


def test_parameter_count_ordering():
    san, dfsmn, sanm = (count_parameters(ModelConfig.preset(f"aishell_{n}"))
                        for n in ("san_san", "dfsmn_dfsmn", "sanm_dfsmn"))
    assert dfsmn < sanm < san


@pytest.mark.parametrize("kind,expected", [("san", 97), ("sanm", 103), ("dfsmn", 99)])
def test_hand_counted_single_block_model(kind, expected):
    # input 4*2+2, embedding 5*2, attention 4*(2*2), norms 2*2, ffn 2*3+3+3*2+2, output 2*5+5
    cfg = ModelConfig(encoder_kind=kind, decoder_kind="san", n_blocks=1, m_blocks=0, k_blocks=0, d_basic=2,
                      d_ffn=3, heads=1, vocab_size=5, input_dim=4, mem_cfg=MemoryConfig(d=2, n1=1, n2=1))
    assert count_parameters(cfg) == expected
    assert sum(t.size for t in build_model(cfg).tensors().values()) == expected


@pytest.mark.parametrize("overrides", [{}, {"k_blocks": 2}, {"m_blocks": 0}, {"post_norm": False},
                                       {"output_ffn": False}, {"dfsmn_hidden": 5}])
def test_count_matches_built_model(overrides):
    for encoder, decoder in (("san", "san"), ("dfsmn", "dfsmn"), ("sanm", "dfsmn"), ("sanm", "sanm")):
        cfg = tiny_config(encoder, decoder, **overrides)
        assert count_parameters(cfg) == sum(t.size for t in build_model(cfg).tensors().values())


def test_build_is_deterministic():
    cfg = tiny_config()
    first, second, other = build_model(cfg, 3).tensors(), build_model(cfg, 3).tensors(), build_model(cfg, 4).tensors()
    assert list(first) == list(second)
    for name in first:
        assert_array_equal(first[name].data, second[name].data)
    assert any(not np.array_equal(first[n].data, other[n].data) for n in first)


def test_filters_start_at_zero():
    for name, t in build_model(tiny_config(), 0).tensors().items():
        if name.endswith("fir.a") or name.endswith("fir.c"):
            assert not t.data.any()


@pytest.mark.parametrize("overrides", [{"m_blocks": 0}, {"k_blocks": 2}, {"post_norm": False}])
def test_output_shapes(overrides):
    rng = np.random.default_rng(0)
    params = build_model(tiny_config(**overrides), 0)
    feats = features(rng, [5, 3])
    z = encoder_forward(feats, params)
    assert z.shape == (2, 5, 8)
    logits = decoder_forward(z, tokens(rng, [4, 2]), params, memory_valid=feats.valid_mask())
    assert logits.shape == (2, 4, 9)


def test_encoder_rejects_wrong_feature_width():
    params = build_model(tiny_config(), 0)
    with pytest.raises(ShapeError):
        encoder_forward(features(np.random.default_rng(0), [3], width=5), params)


def test_decoder_rejects_batch_mismatch():
    rng = np.random.default_rng(1)
    params = build_model(tiny_config(), 0)
    z = encoder_forward(features(rng, [3]), params)
    with pytest.raises(ShapeError):
        decoder_forward(z, tokens(rng, [2, 2]), params)


@pytest.mark.parametrize("encoder,decoder", [("san", "san"), ("dfsmn", "dfsmn"), ("sanm", "dfsmn"),
                                             ("sanm", "sanm")])
def test_padding_does_not_change_valid_outputs(encoder, decoder):
    rng = np.random.default_rng(2)
    params = build_model(tiny_config(encoder, decoder), 0)
    randomize_filters(params, rng)
    long_feats, short_feats = rng.standard_normal((6, 6)), rng.standard_normal((4, 6))
    long_ids, short_ids = [3, 4, 5, 6], [7, 8]
    batched = forward(params, SequenceBatch.from_features([long_feats, short_feats]),
                      SequenceBatch.from_tokens([long_ids, short_ids])).data
    alone = forward(params, SequenceBatch.from_features([short_feats]), SequenceBatch.from_tokens([short_ids])).data
    assert_allclose(batched[1, :2], alone[0], atol=1e-9)


KINDS = ("san", "sanm", "dfsmn")


def random_memory(rng, d=8):
    return MemoryConfig(d=d, n1=int(rng.integers(0, 4)), n2=int(rng.integers(0, 3)),
                        s1=int(rng.integers(1, 3)), s2=int(rng.integers(1, 3)))


@pytest.mark.parametrize("trial", range(50))
def test_decoder_is_causal(trial):
    rng = np.random.default_rng(1000 + trial)
    encoder, decoder = (str(k) for k in rng.choice(KINDS, size=2))
    cfg = tiny_config(encoder, decoder, mem_cfg=random_memory(rng), k_blocks=int(rng.integers(0, 2)),
                      post_norm=bool(rng.integers(2)))
    params = build_model(cfg, trial)
    randomize_filters(params, rng)
    z = encoder_forward(features(rng, [int(rng.integers(2, 7))]), params)
    length = int(rng.integers(2, 7))
    t = int(rng.integers(0, length - 1))
    ids = rng.integers(1, 9, size=length)
    changed = ids.copy()
    changed[t + 1:] = (changed[t + 1:] % 8) + 1
    before = decoder_forward(z, SequenceBatch.from_tokens([ids.tolist()]), params).data
    after = decoder_forward(z, SequenceBatch.from_tokens([changed.tolist()]), params).data
    assert_allclose(after[0, : t + 1], before[0, : t + 1], atol=1e-12)
    assert not np.allclose(after[0, t + 1], before[0, t + 1])


@pytest.mark.parametrize("trial", range(20))
def test_null_filters_reduce_sanm_model_to_san_model(trial):
    rng = np.random.default_rng(2000 + trial)
    d = int(rng.choice([4, 8]))
    encoder, decoder = [("sanm", "san"), ("san", "sanm"), ("sanm", "sanm")][trial % 3]
    shared = dict(d_basic=d, heads=int(rng.choice([1, 2])), mem_cfg=random_memory(rng, d),
                  n_blocks=int(rng.integers(1, 3)), m_blocks=int(rng.integers(0, 3)),
                  k_blocks=int(rng.integers(0, 2)), post_norm=bool(rng.integers(2)),
                  use_positional_encoding=bool(rng.integers(2)))
    san = build_model(tiny_config("san", "san", **shared), trial)
    sanm = build_model(tiny_config(encoder, decoder, **shared), trial)
    for block in sanm.encoder + sanm.decoder:
        if block.basic.kind == SublayerKind.SANM:
            block.basic.sanm.fir = FirCoefficients.null(block.basic.mem_cfg)
    feats, targets = features(rng, [5, 4]), tokens(rng, [3, 2])
    assert_array_equal(forward(sanm, feats, targets).data, forward(san, feats, targets).data)


@pytest.mark.parametrize("encoder,decoder", [("san", "san"), ("sanm", "dfsmn"), ("dfsmn", "sanm"),
                                             ("sanm", "sanm")])
@pytest.mark.parametrize("post_norm", [True, False])
def test_forward_matches_composed_reference(encoder, decoder, post_norm):
    rng = np.random.default_rng(29)
    params = build_model(tiny_config(encoder, decoder, m_blocks=1, k_blocks=0, post_norm=post_norm), 29)
    randomize_filters(params, rng)
    feats, ids = rng.standard_normal((5, 6)), [1, 4, 7, 5]
    logits = forward(params, SequenceBatch.from_features([feats]), SequenceBatch.from_tokens([ids])).data
    assert_allclose(logits[0], oracle_model(params, feats, ids), atol=1e-10)


def test_records_attention_for_every_layer():
    rng = np.random.default_rng(5)
    params = build_model(tiny_config("san", "san", k_blocks=1), 0)
    ctx = RunContext(record=True)
    forward(params, features(rng, [5]), tokens(rng, [3]), ctx)
    assert set(ctx.attention) == {"encoder.0", "decoder.0", "decoder.1", "cross.0"}
    assert ctx.attention["cross.0"].shape == (1, 3, 5)


def test_training_dropout_changes_output_only_in_training():
    rng = np.random.default_rng(6)
    params = build_model(tiny_config(dropout=0.3), 0)
    feats, targets = features(rng, [4]), tokens(rng, [3])
    eval_a = forward(params, feats, targets, RunContext()).data
    eval_b = forward(params, feats, targets, RunContext(training=False, dropout=0.3)).data
    assert_array_equal(eval_a, eval_b)
    trained = forward(params, feats, targets, RunContext(training=True, dropout=0.3,
                                                         rng=np.random.default_rng(1))).data
    assert not np.allclose(trained, eval_a)


@pytest.mark.parametrize("encoder,decoder", [("sanm", "dfsmn"), ("san", "sanm")])
def test_full_model_gradients(encoder, decoder):
    rng = np.random.default_rng(7)
    params = build_model(tiny_config(encoder, decoder), 0)
    randomize_filters(params, rng)
    feats, targets = features(rng, [4, 3]), tokens(rng, [3, 2])
    w = rng.standard_normal((2, 3, 9))
    tensors = list(params.tensors().values())
    assert grad_check(lambda: total(mul(forward(params, feats, targets), w)), tensors, max_coords=8) < 1e-3
