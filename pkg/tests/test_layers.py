"""Finite-difference gradient verification for every denoiser block type.

All checks run in float64; tolerances follow the package-wide 1e-3
relative-error bar for analytic-vs-numeric gradient agreement.
"""

import numpy as np
import pytest

from fd_utils import central_diff, check_grads, dezero, rel_err, weighted_loss
from relightlab.diffusion import layers as ly
from relightlab.diffusion.unet import IN_CHANNELS, Denoiser, DenoiserConfig

F64 = np.float64


def make_rng(seed=0):
    return np.random.default_rng(seed)


def input_grad_entries(rng, x, dx, loss_fn, n=10, tol=1e-3):
    flat_dx = dx.reshape(-1)
    total = x.size
    idxs = rng.choice(total, size=min(n, total), replace=False)
    for idx in idxs:
        fd = central_diff(loss_fn, x, int(idx), 1e-5)
        assert rel_err(flat_dx[idx], fd) < tol


def test_silu_gradients():
    rng = make_rng(1)
    x = rng.standard_normal((2, 4, 4, 6))
    w = rng.standard_normal(x.shape)
    layer = ly.SiLU()

    def loss():
        return weighted_loss(layer.forward(x), w)

    loss()
    dx = layer.backward(w)
    input_grad_entries(rng, x, dx, loss, n=12)


def test_linear_gradients():
    rng = make_rng(2)
    layer = ly.Linear("lin", 7, 5, rng, F64)
    x = rng.standard_normal((6, 7))
    w = rng.standard_normal((6, 5))

    def loss():
        return weighted_loss(layer.forward(x), w)

    layer.w.zero_grad(), layer.b.zero_grad()
    loss()
    dx = layer.backward(w)
    check_grads(loss, [("w", layer.w.value), ("b", layer.b.value)],
                [layer.w.grad, layer.b.grad], rng)
    input_grad_entries(rng, x, dx, loss)


@pytest.mark.parametrize("zero_init", [False, True])
def test_conv3x3_gradients(zero_init):
    rng = make_rng(3)
    layer = ly.Conv3x3("c", 4, 3, rng, F64, zero_init=zero_init)
    if zero_init:
        assert not layer.w.value.any()
        dezero(layer, rng)
    x = rng.standard_normal((2, 4, 4, 4))
    w = rng.standard_normal((2, 4, 4, 3))

    def loss():
        return weighted_loss(layer.forward(x), w)

    for p in layer.params():
        p.zero_grad()
    loss()
    dx = layer.backward(w)
    check_grads(loss, [("w", layer.w.value), ("b", layer.b.value)],
                [layer.w.grad, layer.b.grad], rng, n_sample=24)
    input_grad_entries(rng, x, dx, loss, n=16)


def test_conv1x1_gradients():
    rng = make_rng(4)
    layer = ly.Conv1x1("c1", 5, 4, rng, F64)
    x = rng.standard_normal((2, 3, 3, 5))
    w = rng.standard_normal((2, 3, 3, 4))

    def loss():
        return weighted_loss(layer.forward(x), w)

    for p in layer.params():
        p.zero_grad()
    loss()
    dx = layer.backward(w)
    check_grads(loss, [("w", layer.w.value), ("b", layer.b.value)],
                [layer.w.grad, layer.b.grad], rng)
    input_grad_entries(rng, x, dx, loss)


def test_groupnorm_gradients_and_validation():
    rng = make_rng(5)
    layer = ly.GroupNorm("gn", 4, 8, F64)
    x = rng.standard_normal((2, 4, 4, 8)) * 1.7 + 0.3
    w = rng.standard_normal(x.shape)

    def loss():
        return weighted_loss(layer.forward(x), w)

    for p in layer.params():
        p.zero_grad()
    loss()
    dx = layer.backward(w)
    check_grads(loss, [("gamma", layer.gamma.value), ("beta", layer.beta.value)],
                [layer.gamma.grad, layer.beta.grad], rng)
    input_grad_entries(rng, x, dx, loss, n=16)
    with pytest.raises(ValueError):
        ly.GroupNorm("bad", 3, 8, F64)


def test_groupnorm_normalizes_per_group():
    rng = make_rng(6)
    layer = ly.GroupNorm("gn", 2, 6, F64)
    x = rng.standard_normal((3, 5, 5, 6)) * 4.0 - 1.0
    y = layer.forward(x)
    yg = y.reshape(3, 25, 2, 3)
    assert np.abs(yg.mean(axis=(1, 3))).max() < 1e-10
    assert np.abs(yg.var(axis=(1, 3)) - 1.0).max() < 1e-4  # eps-shrunk variance


@pytest.mark.parametrize("pool_cls", [ly.AvgPool2, ly.NearestUp2])
def test_resampling_gradients(pool_cls):
    rng = make_rng(7)
    layer = pool_cls()
    x = rng.standard_normal((2, 4, 4, 3))
    out_shape = layer.forward(x).shape
    w = rng.standard_normal(out_shape)

    def loss():
        return weighted_loss(layer.forward(x), w)

    loss()
    dx = layer.backward(w)
    input_grad_entries(rng, x, dx, loss, n=16)


def test_avgpool_and_up_shapes():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    pooled = ly.AvgPool2().forward(x)
    assert pooled.shape == (1, 2, 2, 1)
    assert pooled[0, 0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)
    up = ly.NearestUp2().forward(pooled)
    assert up.shape == (1, 4, 4, 1)
    assert (up[0, :2, :2, 0] == pooled[0, 0, 0, 0]).all()


def test_sinusoidal_embedding_properties():
    emb = ly.sinusoidal_embedding(np.array([0, 1, 500]), 16, F64)
    assert emb.shape == (3, 16)
    assert np.allclose(emb[0, :8], 0.0)  # sin(0)
    assert np.allclose(emb[0, 8:], 1.0)  # cos(0)
    assert (np.abs(emb) <= 1.0).all()
    odd = ly.sinusoidal_embedding(np.array([3]), 9, F64)
    assert odd.shape == (1, 9) and odd[0, -1] == 0.0
    # distinct timesteps embed distinctly
    a, b = ly.sinusoidal_embedding(np.array([10, 11]), 32, F64)
    assert np.abs(a - b).max() > 1e-3


def test_time_embedding_gradients():
    rng = make_rng(8)
    layer = ly.TimeEmbedding("t", 12, rng, F64)
    t = np.array([3, 700])
    w = rng.standard_normal((2, 12))

    def loss():
        return weighted_loss(layer.forward(t), w)

    for p in layer.params():
        p.zero_grad()
    loss()
    layer.backward(w)
    tensors = [(p.name, p.value) for p in layer.params()]
    grads = [p.grad for p in layer.params()]
    check_grads(loss, tensors, grads, rng, n_sample=10)


@pytest.mark.parametrize("cin,cout", [(8, 8), (6, 10)])
def test_resblock_gradients(cin, cout):
    rng = make_rng(9)
    layer = ly.ResBlock("rb", cin, cout, 12, rng, F64, groups=4)
    x = rng.standard_normal((2, 4, 4, cin))
    emb = rng.standard_normal((2, 12))
    w = rng.standard_normal((2, 4, 4, cout))

    def loss():
        return weighted_loss(layer.forward(x, emb), w)

    for p in layer.params():
        p.zero_grad()
    loss()
    dx, demb = layer.backward(w)
    tensors = [(p.name, p.value) for p in layer.params()]
    grads = [p.grad for p in layer.params()]
    check_grads(loss, tensors, grads, rng, n_sample=8)
    input_grad_entries(rng, x, dx, loss, n=10)
    input_grad_entries(rng, emb, demb, loss, n=6)
    if cin == cout:
        assert layer.skip is None


def test_resblock_adapts_group_count_to_odd_widths():
    rng = make_rng(10)
    layer = ly.ResBlock("rb", 7, 9, 8, rng, F64, groups=8)
    x = rng.standard_normal((1, 4, 4, 7))
    emb = rng.standard_normal((1, 8))
    out = layer.forward(x, emb)
    assert out.shape == (1, 4, 4, 9)
    assert layer.gn1.groups == 7 and layer.gn2.groups == 3


def test_self_attention_gradients():
    rng = make_rng(11)
    layer = ly.SelfAttention("at", 6, rng, F64)
    dezero(layer, rng)  # zero-init projection would silence the qkv path
    x = rng.standard_normal((2, 3, 3, 6))
    w = rng.standard_normal(x.shape)

    def loss():
        return weighted_loss(layer.forward(x), w)

    for p in layer.params():
        p.zero_grad()
    loss()
    dx = layer.backward(w)
    tensors = [(p.name, p.value) for p in layer.params()]
    grads = [p.grad for p in layer.params()]
    check_grads(loss, tensors, grads, rng, n_sample=10)
    input_grad_entries(rng, x, dx, loss, n=10)


def test_self_attention_zero_init_starts_as_identity():
    rng = make_rng(12)
    layer = ly.SelfAttention("at", 4, rng, F64)
    x = rng.standard_normal((1, 4, 4, 4))
    assert np.allclose(layer.forward(x), x)


def test_full_denoiser_gradients():
    rng = make_rng(13)
    cfg = DenoiserConfig(base_width=8, level_multipliers=(1, 2), blocks_per_level=1,
                         time_embed_dim=16, attention=True, groups=4)
    net = Denoiser(cfg, seed=5, dtype=F64)
    dezero(net.head_conv, rng)
    dezero(net.attn, rng)
    x = rng.standard_normal((2, 8, 8, IN_CHANNELS))
    t = np.array([17, 923])
    w = rng.standard_normal((2, 8, 8, 3))

    def loss():
        return weighted_loss(net.forward(x, t), w)

    net.zero_grad()
    loss()
    dx = net.backward(w)
    # sample a couple of coordinates from every parameter tensor in the net
    tensors = [(p.name, p.value) for p in net.params()]
    grads = [p.grad for p in net.params()]
    worst = check_grads(loss, tensors, grads, rng, n_sample=2)
    assert worst < 1e-3
    input_grad_entries(rng, x, dx, loss, n=10)


def test_denoiser_validates_input():
    net = Denoiser(DenoiserConfig(base_width=8, level_multipliers=(1, 2), time_embed_dim=16))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 8, 8, 5)), np.array([1]))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 9, 9, IN_CHANNELS)), np.array([1]))


def test_denoiser_param_count_and_determinism():
    cfg = DenoiserConfig(base_width=8, level_multipliers=(1, 2), time_embed_dim=16)
    a, b = Denoiser(cfg, seed=3), Denoiser(cfg, seed=3)
    assert a.n_params() == b.n_params() > 0
    for pa, pb in zip(a.params(), b.params()):
        assert pa.name == pb.name
        assert np.array_equal(pa.value, pb.value)
    c = Denoiser(cfg, seed=4)
    assert any(not np.array_equal(pa.value, pc.value) for pa, pc in zip(a.params(), c.params()))
