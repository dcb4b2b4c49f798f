import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfftgan import numcore as nc
from cfftgan.nnblocks import (
    ParamStore,
    TransformerEncoderConfig,
    conv_block,
    init_attention,
    init_conv_block,
    init_layer_norm,
    init_linear,
    init_resblock,
    init_transformer_encoder,
    layer_norm,
    linear,
    multi_head_attention,
    positional_embedding,
    resblock,
    transformer_encoder,
)
from cfftgan.numcore import Tensor, grad_check


def _zero_residual_branches(ps, prefix):
    for n, t in ps.items(prefix):
        if ".attn.out." in n or ".mlp.fc2." in n:
            t.data = np.zeros_like(t.data)


def test_param_store_rejects_duplicates_and_keeps_order():
    ps = ParamStore(0)
    for n in ("b", "a", "c"):
        ps.create(n, (2,))
    assert list(ps) == ["b", "a", "c"]
    with pytest.raises(KeyError):
        ps.create("a", (2,))


def test_param_init_independent_of_construction_order():
    p1, p2 = ParamStore(3), ParamStore(3)
    p1.create("x", (4,))
    p1.create("y", (4,))
    p2.create("y", (4,))
    p2.create("x", (4,))
    np.testing.assert_array_equal(p1["x"].data, p2["x"].data)


def test_linear_identity_weight():
    ps = ParamStore(0)
    init_linear(ps, "fc", 4, 4)
    ps["fc.weight"].data = np.eye(4, dtype=np.float32)
    x = np.arange(8.0, dtype=np.float32).reshape(2, 4)
    np.testing.assert_array_equal(linear(ps, x, "fc").data, x)


def test_linear_shape_and_mismatch():
    ps = ParamStore(0)
    init_linear(ps, "fc", 3, 5)
    assert linear(ps, np.ones((2, 3)), "fc").shape == (2, 5)
    with pytest.raises(nc.ShapeError, match="fc"):
        linear(ps, np.ones((2, 4)), "fc")


def test_layer_norm_constant_token_gives_zeros():
    ps = ParamStore(0)
    init_layer_norm(ps, "ln", 6)
    np.testing.assert_allclose(layer_norm(ps, np.full((2, 6), 3.0), "ln").data, 0.0, atol=1e-6)


def test_layer_norm_standardises(rng):
    ps = ParamStore(0)
    init_layer_norm(ps, "ln", 16)
    out = layer_norm(ps, rng.normal(2.0, 3.0, size=(5, 16)), "ln").data
    np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-4)
    np.testing.assert_allclose(out.var(-1), 1.0, atol=1e-4)


def test_layer_norm_grad_check(rng):
    ps = ParamStore(0)
    init_layer_norm(ps, "ln", 6)
    x = Tensor(rng.normal(size=(3, 6)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 6)).astype(np.float32))
    rep = grad_check(lambda *_: nc.sum_(layer_norm(ps, x, "ln") * w), [x, *ps.tensors()], rtol=1e-3)
    assert rep.passed


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="heads"):
        TransformerEncoderConfig(depth=1, dim=10, heads=4)


def test_single_token_attention_is_projected_value(rng):
    cfg = TransformerEncoderConfig(1, 8, 4)
    ps = ParamStore(1)
    init_attention(ps, cfg, "attn")
    x = rng.normal(size=(1, 8)).astype(np.float32)
    out, w = multi_head_attention(ps, x, cfg, "attn", return_weights=True)
    np.testing.assert_array_equal(w.data, 1.0)
    qkv = x @ ps["attn.qkv.weight"].data + ps["attn.qkv.bias"].data
    v = qkv[:, 16:]
    ref = v @ ps["attn.out.weight"].data + ps["attn.out.bias"].data
    np.testing.assert_allclose(out.data, ref, rtol=1e-5, atol=1e-6)


def test_attention_rows_sum_to_one(rng):
    cfg = TransformerEncoderConfig(1, 8, 2)
    ps = ParamStore(2)
    init_attention(ps, cfg, "attn")
    _, w = multi_head_attention(ps, rng.normal(size=(3, 7, 8)), cfg, "attn", return_weights=True)
    assert w.shape == (3, 2, 7, 7)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-5)


def test_encoder_permutation_equivariance_with_positions(rng):
    cfg = TransformerEncoderConfig(2, 8, 4)
    ps = ParamStore(3)
    init_transformer_encoder(ps, cfg, "te")
    pos = positional_embedding(ps, 6, 8, "pos").data
    x = rng.normal(size=(6, 8)).astype(np.float32)
    perm = rng.permutation(6)
    out = transformer_encoder(ps, x + pos, cfg, "te").data
    out_p = transformer_encoder(ps, x[perm] + pos[perm], cfg, "te").data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-5)


def test_encoder_identity_when_residual_branches_zeroed(rng):
    cfg = TransformerEncoderConfig(3, 8, 4)
    ps = ParamStore(4)
    init_transformer_encoder(ps, cfg, "te")
    _zero_residual_branches(ps, "te")
    x = rng.normal(size=(5, 8)).astype(np.float32)
    np.testing.assert_array_equal(transformer_encoder(ps, x, cfg, "te").data, x)


def test_depth_three_encoder_has_three_blocks():
    ps = ParamStore(0)
    init_transformer_encoder(ps, TransformerEncoderConfig(3, 8, 4), "te")
    assert sorted({n.split(".")[1] for n in ps}) == ["block0", "block1", "block2"]


@given(st.integers(1, 4), st.sampled_from([4, 8, 12, 16]), st.sampled_from([1, 2, 4]))
def test_encoder_param_count_matches_closed_form(depth, dim, heads):
    cfg = TransformerEncoderConfig(depth, dim, heads)
    ps = ParamStore(0)
    init_transformer_encoder(ps, cfg, "te")
    assert ps.count() == cfg.param_count() == depth * (12 * dim * dim + 13 * dim)


@given(st.integers(1, 6), st.sampled_from([4, 8]))
def test_encoder_preserves_shape(L, D):
    cfg = TransformerEncoderConfig(1, D, 2)
    ps = ParamStore(0)
    init_transformer_encoder(ps, cfg, "te")
    assert transformer_encoder(ps, np.ones((L, D)), cfg, "te").shape == (L, D)


def test_positional_embedding_registry_and_shapes():
    ps = ParamStore(0)
    a = positional_embedding(ps, 64, 32, "pos")
    assert positional_embedding(ps, 64, 32, "pos") is a
    assert a.shape == (64, 32)
    assert abs(float(a.data.std()) - 0.02) < 0.005
    assert positional_embedding(ParamStore(0), 4096, 128, "pos").shape == (4096, 128)


def test_conv_block_shapes():
    ps = ParamStore(0)
    init_conv_block(ps, "a", 8, 12, "k3s1")
    init_conv_block(ps, "b", 8, 6, "k4s2")
    x = np.ones((8, 16, 16), dtype=np.float32)
    assert conv_block(ps, x, "k3s1", "a").shape == (12, 16, 16)
    assert conv_block(ps, x, "k4s2", "b").shape == (6, 8, 8)
    with pytest.raises(nc.ShapeError, match="even"):
        conv_block(ps, np.ones((8, 15, 16)), "k4s2", "b")


def test_conv_block_kernel_grad_check(rng):
    ps = ParamStore(0)
    init_conv_block(ps, "cb", 2, 3, "k3s1")
    x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
    w = Tensor(rng.normal(size=(1, 3, 5, 5)).astype(np.float32))
    rep = grad_check(lambda k: nc.sum_(conv_block(ps, x, "k3s1", "cb") * w), [ps["cb.conv.weight"]], eps=1e-6)
    assert rep.passed


@pytest.mark.parametrize("layer", ["conv_block", "resblock", "encoder", "attention"])
def test_batch_independence(layer, rng):
    ps = ParamStore(5)
    if layer in ("conv_block", "resblock"):
        x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
        if layer == "conv_block":
            init_conv_block(ps, "l", 3, 4, "k4s2")
            f = lambda t: conv_block(ps, t, "k4s2", "l")
        else:
            init_resblock(ps, "l", 3, 4)
            f = lambda t: resblock(ps, t, "l")
    else:
        cfg = TransformerEncoderConfig(2, 8, 2)
        x = rng.normal(size=(2, 5, 8)).astype(np.float32)
        if layer == "encoder":
            init_transformer_encoder(ps, cfg, "l")
            f = lambda t: transformer_encoder(ps, t, cfg, "l")
        else:
            init_attention(ps, cfg, "l")
            f = lambda t: multi_head_attention(ps, t, cfg, "l")
    joint = f(x).data
    for i in range(2):
        np.testing.assert_allclose(joint[i], f(x[i]).data, atol=1e-5)
