import numpy as np
import pytest

from docrel.encoding import EncodedInput, collate
from docrel.errors import ConfigError, NumericError
from docrel.model import (
    EVAL,
    TRAIN,
    ModelConfig,
    classify,
    embed,
    encoder_layer,
    forward,
    init_params,
    layer_norm,
    parameter_shapes,
    pool,
    predict,
)


def zero_layer(d, f):
    lp = {}
    for proj in ("query", "key", "value", "output"):
        lp[f"attn.{proj}.weight"] = np.zeros((d, d))
        lp[f"attn.{proj}.bias"] = np.zeros(d)
    lp["ffn.in.weight"] = np.zeros((d, f))
    lp["ffn.in.bias"] = np.zeros(f)
    lp["ffn.out.weight"] = np.zeros((f, d))
    lp["ffn.out.bias"] = np.zeros(d)
    for norm in ("attn_norm", "ffn_norm"):
        lp[f"{norm}.gain"] = np.ones(d)
        lp[f"{norm}.bias"] = np.zeros(d)
    return lp


def random_layer(rng, d, f, scale=0.5):
    lp = zero_layer(d, f)
    for k in lp:
        if not k.endswith("gain"):
            lp[k] = rng.normal(0, scale, lp[k].shape)
    return lp


def ref_layer_norm(x, gain, bias, eps):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / (var + eps) ** 0.5 * g + b for v, g, b in zip(x, gain, bias)]


# --------------------------------------------------------------------------- #
def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, n_relations=3, d_model=6, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, n_relations=1, d_model=8, n_heads=2)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, n_relations=3, d_model=8, n_heads=2, dropout_p=1.0)
    assert ModelConfig(vocab_size=10, n_relations=3, d_model=8, n_heads=2).d_ff == 32


def test_parameter_shapes(tiny_config):
    params = init_params(tiny_config)
    shapes = parameter_shapes(tiny_config)
    assert {k: v.shape for k, v in params.items()} == shapes
    assert shapes["embeddings.word"] == (50, 8)
    assert shapes["embeddings.position"] == (12, 8)
    assert shapes["embeddings.segment"] == (2, 8)
    assert shapes["layers.1.ffn.in.weight"] == (8, 16)
    assert shapes["layers.1.ffn.out.weight"] == (16, 8)
    assert shapes["classifier.weight"] == (4, 8)
    assert all(np.all(np.isfinite(v)) for v in params.values())


def test_init_distribution(tiny_config):
    params = init_params(ModelConfig(vocab_size=2000, n_relations=4, d_model=64, n_heads=4), seed=0)
    w = params["embeddings.word"]
    assert np.abs(w).max() <= 0.04 + 1e-7
    assert 0.015 < w.std() < 0.02
    assert np.all(params["layers.0.attn_norm.gain"] == 1)
    assert np.all(params["layers.0.ffn.in.bias"] == 0)


# --------------------------------------------------------------------------- #
def test_embed_zero_tables():
    params = {n: np.zeros((5, 3)) for n in ("embeddings.word", "embeddings.position", "embeddings.segment")}
    assert np.all(embed([1, 2], [0, 1], [0, 1], params) == 0)


def test_embed_sum():
    params = {
        "embeddings.word": np.zeros((5, 2)),
        "embeddings.position": np.zeros((3, 2)),
        "embeddings.segment": np.zeros((2, 2)),
    }
    params["embeddings.word"][4] = (1, 0)
    params["embeddings.position"][0] = (0, 1)
    params["embeddings.segment"][1] = (1, 1)
    assert embed([4], [0], [1], params).tolist() == [[2.0, 2.0]]


def test_embed_shape_and_bounds(tiny_config):
    params = init_params(tiny_config)
    assert embed(np.arange(10), np.arange(10), np.zeros(10, int), params).shape == (10, 8)
    with pytest.raises(IndexError):
        embed([50], [0], [0], params)
    with pytest.raises(IndexError):
        embed([1], [12], [0], params)


# --------------------------------------------------------------------------- #
def test_layer_norm_hand_value():
    out = layer_norm(np.array([1.0, 2.0, 3.0]), np.ones(3), np.zeros(3), 1e-12)
    np.testing.assert_allclose(out, [-1.2247449, 0.0, 1.2247449], atol=1e-6)


def test_layer_norm_constant_and_zero_gain():
    np.testing.assert_array_equal(layer_norm(np.full(4, 7.0), np.ones(4), np.zeros(4)), np.zeros(4))
    bias = np.array([0.1, -0.2, 0.3, 0.0])
    np.testing.assert_array_equal(layer_norm(np.arange(4.0), np.zeros(4), bias), bias)


def test_layer_norm_matches_reference(rng):
    for _ in range(20):
        x, g, b = rng.normal(size=(3, 6))
        np.testing.assert_allclose(layer_norm(x, g, b, 1e-5), ref_layer_norm(x, g, b, 1e-5), rtol=1e-10)


# --------------------------------------------------------------------------- #
def test_zero_weight_layer_collapses_to_double_norm(rng):
    h = rng.normal(size=(5, 8))
    out, _ = encoder_layer(h, zero_layer(8, 16), n_heads=2)
    ones, zeros = np.ones(8), np.zeros(8)
    expected = layer_norm(layer_norm(h, ones, zeros), ones, zeros)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_single_token_attention_is_one(rng):
    _, probs = encoder_layer(rng.normal(size=(1, 8)), random_layer(rng, 8, 16), n_heads=2)
    assert probs.shape == (2, 1, 1)
    assert np.all(probs == 1.0)


def test_attention_rows_normalised(rng):
    _, probs = encoder_layer(rng.normal(size=(4, 8)), random_layer(rng, 8, 16), n_heads=2)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(probs >= 0)


def test_masked_keys_get_zero_weight(rng):
    mask = np.array([1, 1, 1, 0, 0])
    _, probs = encoder_layer(rng.normal(size=(5, 8)), random_layer(rng, 8, 16), mask=mask, n_heads=2)
    assert np.all(probs[..., 3:] == 0.0)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


def test_padding_does_not_change_real_rows(rng):
    lp = random_layer(rng, 8, 16)
    h = rng.normal(size=(3, 8))
    padded = np.vstack([h, rng.normal(size=(2, 8)) * 100])
    out_short, _ = encoder_layer(h, lp, n_heads=2)
    out_pad, _ = encoder_layer(padded, lp, mask=[1, 1, 1, 0, 0], n_heads=2)
    np.testing.assert_allclose(out_pad[:3], out_short, atol=1e-10)


# --------------------------------------------------------------------------- #
def test_pool_cases(rng):
    d = 6
    h = rng.normal(size=(4, d))
    assert np.all(pool(h, {"pooler.weight": np.zeros((d, d)), "pooler.bias": np.zeros(d)}) == 0)
    h0 = h.copy()
    h0[0] = 0
    assert np.all(pool(h0, {"pooler.weight": np.eye(d), "pooler.bias": np.zeros(d)}) == 0)
    c = pool(h * 50, {"pooler.weight": rng.normal(size=(d, d)), "pooler.bias": rng.normal(size=d)})
    assert np.all(np.abs(c) <= 1)
    # only row 0 is consumed
    h2 = h.copy()
    h2[1:] = 123.0
    p = {"pooler.weight": rng.normal(size=(d, d)), "pooler.bias": np.zeros(d)}
    np.testing.assert_array_equal(pool(h, p), pool(h2, p))


def test_classify_eval_affine():
    params = {"classifier.weight": np.zeros((2, 3)), "classifier.bias": np.array([0.5, -0.5])}
    logits, mask = classify(np.ones(3), params, EVAL)
    assert logits.tolist() == [0.5, -0.5]
    assert mask is None


def test_classify_eval_deterministic(rng):
    params = {"classifier.weight": rng.normal(size=(4, 8)), "classifier.bias": rng.normal(size=4)}
    c = rng.normal(size=8)
    a, _ = classify(c, params, EVAL)
    b, _ = classify(c, params, EVAL)
    assert a.tobytes() == b.tobytes()


def test_inverted_dropout_preserves_mean():
    n = 10000
    params = {"classifier.weight": np.eye(n), "classifier.bias": np.zeros(n)}
    r, mask = classify(np.ones(n), params, TRAIN, np.random.default_rng(0), p=0.3)
    assert abs(r.mean() - 1.0) < 0.05
    assert set(np.unique(mask)) == {0.0, 1.0 / 0.7}
    assert abs((mask == 0).mean() - 0.3) < 0.02


# --------------------------------------------------------------------------- #
def test_predict_cases():
    rel, probs = predict([0.0, 0.0, 0.0])
    assert rel == 0
    np.testing.assert_allclose(probs, [1 / 3] * 3)
    assert predict([0.1, 0.7, 0.2])[0] == 1
    rel, probs = predict([1000.0, 0.0])
    assert rel == 0 and np.all(np.isfinite(probs))
    np.testing.assert_allclose(probs, [1.0, 0.0])
    with pytest.raises(NumericError):
        predict([np.nan, 0.0])


# --------------------------------------------------------------------------- #
def random_batch(cfg, rng, lengths=(12, 8, 5)):
    items = []
    for n_real in lengths:
        n_doc = n_real - 5
        L = cfg.max_len
        items.append(EncodedInput(
            tuple(int(t) for t in rng.integers(4, cfg.vocab_size, L)), tuple(range(L)),
            tuple([0] * (n_doc + 1) + [1] * (L - n_doc - 1)), tuple([1] * n_real + [0] * (L - n_real)), 0))
    return collate(items, cfg.max_len)


def test_forward_shapes_and_determinism(tiny_config, rng):
    params = init_params(tiny_config, seed=3)
    batch = random_batch(tiny_config, rng)
    a, cache = forward(batch, params, tiny_config, EVAL)
    b, _ = forward(batch, params, tiny_config, EVAL)
    assert cache is None
    assert a.shape == (3, 4)
    assert a.tobytes() == b.tobytes()
    _, tcache = forward(batch, params, tiny_config, TRAIN, np.random.default_rng(0))
    assert tcache.pooled.shape == (3, 8)
    assert all(lc.probs.shape == (3, 2, 12, 12) for lc in tcache.layers)


def test_zero_classifier_gives_uniform(tiny_config, rng):
    params = init_params(tiny_config, seed=3)
    params["classifier.weight"][:] = 0
    params["classifier.bias"][:] = 0
    logits, _ = forward(random_batch(tiny_config, rng), params, tiny_config, EVAL)
    for row in logits:
        np.testing.assert_allclose(predict(row)[1], 0.25)
