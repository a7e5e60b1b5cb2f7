import numpy as np
import pytest

from amtl.audio import FeatureMatrix
from amtl.autograd import check_gradients, stack
from amtl.errors import AmtlError, CheckpointError, ConfigError
from amtl.losses import LabelMode, MtlWeights, accent_loss, combine_mtl, ctc_loss
from amtl.model import (
    PRESETS,
    ModelConfig,
    build_model,
    count_parameters,
    load_checkpoint,
    resolve_layer,
    save_checkpoint,
)
from amtl.tokenization import build_char_vocab


def small_cfg(**kw):
    base = dict(feature_dim=6, num_layers=2, num_heads=4, model_dim=16, ffn_dim=24, vocab_size=5, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def feats(rng, T=30, F=6):
    return FeatureMatrix(rng.standard_normal((T, F)))


def test_build_and_forward_smoke(rng):
    m = build_model(small_cfg(num_accents=3, accent_head_layer=1, aux_asr_layers=(1,)), seed=0, dtype=np.float64)
    out = m.forward(feats(rng))
    assert out.ctc_log_probs.shape == (8, 5)
    assert out.accent_logits.shape == (3,)
    assert out.aux_asr_log_probs[0].shape == (8, 5)
    assert np.isfinite(out.ctc_log_probs.data).all() and np.isfinite(out.accent_logits.data).all()


def test_ctc_rows_are_normalized(rng):
    m = build_model(small_cfg(), seed=1, dtype=np.float64)
    lp = m.forward(feats(rng, 50)).ctc_log_probs.data
    assert np.allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-6)


def test_same_seed_bitwise_identical_parameters():
    a = build_model(small_cfg(), seed=5)
    b = build_model(small_cfg(), seed=5)
    c = build_model(small_cfg(), seed=6)
    assert all(a.params[n].data.tobytes() == b.params[n].data.tobytes() for n in a.params)
    assert any(a.params[n].data.tobytes() != c.params[n].data.tobytes() for n in a.params)


def test_trunk_initialization_independent_of_heads():
    plain = build_model(small_cfg(), seed=3)
    headed = build_model(small_cfg(num_accents=2, accent_head_layer=2, aux_asr_layers=(1,)), seed=3)
    for n in plain.trunk_names():
        assert plain.params[n].data.tobytes() == headed.params[n].data.tobytes()


@pytest.mark.parametrize(
    "kw,rule",
    [
        (dict(num_accents=2, accent_head_layer=3), "accent_head_layer"),
        (dict(num_heads=3), "divisible"),
        (dict(vocab_size=1), "vocab_size"),
        (dict(aux_asr_layers=(5,)), "aux_asr_layers"),
        (dict(positional="learned"), "positional"),
    ],
)
def test_invalid_config_names_rule(kw, rule):
    with pytest.raises(ConfigError, match=rule):
        build_model(small_cfg(**kw))


def test_layer_positions():
    assert [resolve_layer(p, 24) for p in ("low", "mid", "top")] == [8, 14, 20]
    assert [resolve_layer(p, 4) for p in ("low", "mid", "top")] == [1, 2, 3]
    assert resolve_layer("mid", 2) == 1
    assert resolve_layer(7, 24) == 7 and resolve_layer(None, 4) is None
    with pytest.raises(ConfigError):
        resolve_layer("bottom", 4)


@pytest.mark.parametrize("T", [7, 8, 9, 10, 30, 31, 100])
def test_output_length(T, rng):
    cfg = small_cfg()
    m = build_model(cfg, dtype=np.float64)
    assert cfg.output_length(T) == (T - 7) // 3 + 1
    assert m.forward(feats(rng, T)).ctc_log_probs.shape[0] == cfg.output_length(T)


def test_too_short_input_rejected(rng):
    m = build_model(small_cfg())
    with pytest.raises(AmtlError, match="too short"):
        m.forward(feats(rng, 6))


def test_wrong_feature_dim_rejected(rng):
    m = build_model(small_cfg())
    with pytest.raises(AmtlError, match="dim"):
        m.forward(feats(rng, 30, 7))


def test_forward_deterministic(rng):
    m = build_model(small_cfg(num_accents=2, accent_head_layer=1), dtype=np.float64)
    x = feats(rng)
    a, b = m.forward(x), m.forward(x)
    assert a.ctc_log_probs.data.tobytes() == b.ctc_log_probs.data.tobytes()
    assert a.accent_logits.data.tobytes() == b.accent_logits.data.tobytes()


def test_dropout_only_in_train_mode(rng):
    m = build_model(small_cfg(dropout=0.5), dtype=np.float64)
    x = feats(rng)
    e1, e2 = m.forward(x), m.forward(x)
    assert e1.ctc_log_probs.data.tobytes() == e2.ctc_log_probs.data.tobytes()
    t = m.forward(x, train_mode=True, rng=np.random.default_rng(0))
    assert not np.array_equal(t.ctc_log_probs.data, e1.ctc_log_probs.data)
    with pytest.raises(AmtlError, match="rng"):
        m.forward(x, train_mode=True)


def test_accent_logits_permutation_invariant_in_diagnostic_mode(rng):
    cfg = small_cfg(num_accents=3, accent_head_layer=2, positional="none", attention="identity", conv_width=1, conv_stride=1)
    m = build_model(cfg, seed=2, dtype=np.float64)
    x = rng.standard_normal((20, 6))
    perm = rng.permutation(20)
    a = m.forward(FeatureMatrix(x)).accent_logits.data
    b = m.forward(FeatureMatrix(x[perm])).accent_logits.data
    assert np.allclose(a, b, atol=1e-12)
    # with positions enabled the same permutation changes the logits
    m2 = build_model(ModelConfig(**{**cfg.__dict__, "positional": "sinusoidal"}), seed=2, dtype=np.float64)
    c = m2.forward(FeatureMatrix(x)).accent_logits.data
    d = m2.forward(FeatureMatrix(x[perm])).accent_logits.data
    assert not np.allclose(c, d)


def test_accent_head_does_not_change_ctc_output(rng):
    x = feats(rng)
    plain = build_model(small_cfg(), seed=4, dtype=np.float64)
    headed = build_model(small_cfg(num_accents=2, accent_head_layer=1), seed=4, dtype=np.float64)
    assert plain.forward(x).ctc_log_probs.data.tobytes() == headed.forward(x).ctc_log_probs.data.tobytes()


def test_stop_gradient_flag_blocks_trunk_gradient(rng):
    x = feats(rng)
    for flag, expect_grad in ((False, True), (True, False)):
        m = build_model(small_cfg(num_accents=2, accent_head_layer=1, accent_stop_gradient=flag), dtype=np.float64)
        m.forward(x).accent_logits.sum().backward()
        g = m.params["blocks/0/ffn/w1"].grad
        assert (g is not None and np.abs(g).sum() > 0) == expect_grad
        assert m.params["accent_head/weight"].grad is not None


def test_full_objective_gradient_check(rng):
    cfg = small_cfg(model_dim=8, num_heads=2, ffn_dim=8, num_accents=3, accent_head_layer=1, aux_asr_layers=(1,))
    m = build_model(cfg, seed=0, dtype=np.float64)
    xs = [feats(rng, 16), feats(rng, 13)]
    targets, labels = [[1, 2], [3]], [0, 2]
    w = MtlWeights(0.9, 0.1, 0.3)

    def objective():
        outs = [m.forward(x) for x in xs]
        asr = stack([ctc_loss(o.ctc_log_probs, t) for o, t in zip(outs, targets)]).mean()
        aux = [stack([ctc_loss(o.aux_asr_log_probs[0], t) for o, t in zip(outs, targets)]).mean()]
        acc = accent_loss(stack([o.accent_logits for o in outs]), labels, LabelMode("all"))
        return combine_mtl(asr, acc, aux, w)

    report = check_gradients(objective, list(m.params.values()), tol=1e-3, max_coords=6)
    assert report.passed, report.message


def test_parameter_count_matches_tensors():
    cfg = small_cfg(num_accents=2, accent_head_layer=1, aux_asr_layers=(1, 2))
    m = build_model(cfg)
    assert m.num_parameters() == count_parameters(cfg)
    assert count_parameters(ModelConfig(**PRESETS["paper-transformer"], vocab_size=2000)) > 100_000_000


def test_checkpoint_roundtrip_identical_outputs(tmp_path, rng):
    vocab = build_char_vocab(["ab c"])
    cfg = small_cfg(vocab_size=len(vocab), num_accents=2, accent_head_layer=2)
    m = build_model(cfg, seed=9, vocab=vocab, accents=["x", "y"])
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.vocab == vocab and back.accents == ["x", "y"] and back.cfg == m.cfg
    for n in m.params:
        assert back.params[n].data.tobytes() == m.params[n].data.tobytes()
    x = feats(rng)
    assert back.forward(x).ctc_log_probs.data.tobytes() == m.forward(x).ctc_log_probs.data.tobytes()


def test_trunk_only_load_across_vocabularies(tmp_path):
    src = build_model(small_cfg(vocab_size=5), seed=1)
    save_checkpoint(src, tmp_path / "a.ckpt")
    dst = build_model(small_cfg(vocab_size=9, num_accents=2, accent_head_layer=1), seed=2)
    fresh_head = dst.params["ctc_head/weight"].data.copy()
    with pytest.raises(CheckpointError, match="ctc_head/weight"):
        load_checkpoint(tmp_path / "a.ckpt", dst)
    load_checkpoint(tmp_path / "a.ckpt", dst, trunk_only=True)
    for n in dst.trunk_names():
        assert dst.params[n].data.tobytes() == src.params[n].data.tobytes()
    assert dst.params["ctc_head/weight"].data.tobytes() == fresh_head.tobytes()


def test_corrupted_magic_rejected(tmp_path):
    m = build_model(small_cfg())
    save_checkpoint(m, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="bad checkpoint magic"):
        load_checkpoint(tmp_path / "m.ckpt")


def test_version_mismatch_rejected(tmp_path):
    m = build_model(small_cfg())
    save_checkpoint(m, tmp_path / "m.ckpt")
    raw = bytearray((tmp_path / "m.ckpt").read_bytes())
    raw[4] = 9
    (tmp_path / "m.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "m.ckpt")
