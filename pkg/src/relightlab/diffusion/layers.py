"""Neural-net building blocks with explicit forward/backward passes.

Everything runs on plain numpy arrays in NHWC layout. Each layer caches
what its backward pass needs on `self`, so the usage pattern is strictly
forward-then-backward per step; forward-only inference just overwrites
the caches. Convolutions are evaluated as 9 shifted-slice GEMMs, and the
backward pass writes input gradients with 9 bulk slice-adds.
"""

import numpy as np


class Param:
    """A trainable tensor plus its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0


class Layer:
    """Base: tracks child layers and params for traversal."""

    def params(self):
        out = []
        for attr in self.__dict__.values():
            if isinstance(attr, Param):
                out.append(attr)
            elif isinstance(attr, Layer):
                out.extend(attr.params())
        return out


def _sigmoid(x):
    # clip keeps exp in range; saturation below/above +-60 is exact in f32/f64
    z = np.clip(x, -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-z))


class SiLU(Layer):
    def forward(self, x):
        self.x = x
        self.s = _sigmoid(x)
        return x * self.s

    def backward(self, dy):
        return dy * self.s * (1.0 + self.x * (1.0 - self.s))


class Linear(Layer):
    def __init__(self, name, din, dout, rng, dtype, zero_init=False):
        scale = 0.0 if zero_init else 1.0 / np.sqrt(din)
        self.w = Param(f"{name}.w", (rng.standard_normal((din, dout)) * scale).astype(dtype))
        self.b = Param(f"{name}.b", np.zeros(dout, dtype))

    def forward(self, x):
        self.x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        self.w.grad += self.x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T


class Conv3x3(Layer):
    """Same-padded 3x3 convolution over NHWC tensors."""

    def __init__(self, name, cin, cout, rng, dtype, zero_init=False):
        scale = 0.0 if zero_init else 1.0 / np.sqrt(9 * cin)
        self.w = Param(f"{name}.w", (rng.standard_normal((9, cin, cout)) * scale).astype(dtype))
        self.b = Param(f"{name}.b", np.zeros(cout, dtype))

    def forward(self, x):
        b, h, w, cin = x.shape
        cout = self.w.value.shape[2]
        xp = np.zeros((b, h + 2, w + 2, cin), x.dtype)
        xp[:, 1:-1, 1:-1, :] = x
        # one im2col copy, then a single GEMM; far faster than 9 small GEMMs
        col = np.empty((b, h, w, 9, cin), x.dtype)
        for k in range(9):
            oy, ox = divmod(k, 3)
            col[:, :, :, k, :] = xp[:, oy : oy + h, ox : ox + w, :]
        col = col.reshape(b * h * w, 9 * cin)
        self.col = col
        self.dims = (b, h, w, cin)
        out = col @ self.w.value.reshape(9 * cin, cout)
        return out.reshape(b, h, w, cout) + self.b.value

    def backward(self, dy):
        b, h, w, cin = self.dims
        cout = dy.shape[3]
        g = dy.reshape(-1, cout)
        self.b.grad += g.sum(axis=0)
        self.w.grad += (self.col.T @ g).reshape(9, cin, cout)
        dcol = (g @ self.w.value.reshape(9 * cin, cout).T).reshape(b, h, w, 9, cin)
        dxp = np.zeros((b, h + 2, w + 2, cin), dy.dtype)
        for k in range(9):
            oy, ox = divmod(k, 3)
            dxp[:, oy : oy + h, ox : ox + w, :] += dcol[:, :, :, k, :]
        return dxp[:, 1:-1, 1:-1, :]


class Conv1x1(Layer):
    def __init__(self, name, cin, cout, rng, dtype, zero_init=False):
        scale = 0.0 if zero_init else 1.0 / np.sqrt(cin)
        self.w = Param(f"{name}.w", (rng.standard_normal((cin, cout)) * scale).astype(dtype))
        self.b = Param(f"{name}.b", np.zeros(cout, dtype))

    def forward(self, x):
        self.x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        self.w.grad += self.x.reshape(-1, self.x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
        self.b.grad += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return dy @ self.w.value.T


class GroupNorm(Layer):
    def __init__(self, name, groups, channels, dtype, eps=1e-5):
        if channels % groups != 0:
            raise ValueError(f"channels {channels} not divisible by groups {groups}")
        self.groups = groups
        self.eps = eps
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype))

    def forward(self, x):
        b, h, w, c = x.shape
        g = self.groups
        xg = x.reshape(b, h * w, g, c // g)
        mu = xg.mean(axis=(1, 3), keepdims=True)
        var = xg.var(axis=(1, 3), keepdims=True)
        self.inv = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (xg - mu) * self.inv
        self.shape = x.shape
        return (self.xhat.reshape(b, h, w, c) * self.gamma.value + self.beta.value)

    def backward(self, dy):
        b, h, w, c = self.shape
        g = self.groups
        self.gamma.grad += (dy * self.xhat.reshape(b, h, w, c)).sum(axis=(0, 1, 2))
        self.beta.grad += dy.sum(axis=(0, 1, 2))
        dxh = (dy * self.gamma.value).reshape(b, h * w, g, c // g)
        m1 = dxh.mean(axis=(1, 3), keepdims=True)
        m2 = (dxh * self.xhat).mean(axis=(1, 3), keepdims=True)
        dx = self.inv * (dxh - m1 - self.xhat * m2)
        return dx.reshape(b, h, w, c)


class AvgPool2(Layer):
    def forward(self, x):
        b, h, w, c = x.shape
        self.shape = x.shape
        return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(self, dy):
        b, h, w, c = self.shape
        dx = np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) * 0.25
        return dx.astype(dy.dtype)


class NearestUp2(Layer):
    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, dy):
        b, h, w, c = dy.shape
        return dy.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def sinusoidal_embedding(t, dim, dtype):
    """Classic transformer-style embedding of integer timesteps."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = np.asarray(t, np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2 == 1:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb.astype(dtype)


class TimeEmbedding(Layer):
    """Sinusoidal features passed through a two-layer MLP."""

    def __init__(self, name, dim, rng, dtype):
        self.dim = dim
        self.dtype = dtype
        self.lin1 = Linear(f"{name}.lin1", dim, dim, rng, dtype)
        self.act = SiLU()
        self.lin2 = Linear(f"{name}.lin2", dim, dim, rng, dtype)

    def forward(self, t):
        e = sinusoidal_embedding(t, self.dim, self.dtype)
        return self.lin2.forward(self.act.forward(self.lin1.forward(e)))

    def backward(self, demb):
        self.lin1.backward(self.act.backward(self.lin2.backward(demb)))


class ResBlock(Layer):
    """GN -> SiLU -> conv, add projected time embedding, GN -> SiLU -> conv, skip."""

    def __init__(self, name, cin, cout, emb_dim, rng, dtype, groups=8):
        g1 = min(groups, cin)
        while cin % g1 != 0:
            g1 -= 1
        g2 = min(groups, cout)
        while cout % g2 != 0:
            g2 -= 1
        self.gn1 = GroupNorm(f"{name}.gn1", g1, cin, dtype)
        self.act1 = SiLU()
        self.conv1 = Conv3x3(f"{name}.conv1", cin, cout, rng, dtype)
        self.emb_act = SiLU()
        self.emb_lin = Linear(f"{name}.emb", emb_dim, cout, rng, dtype)
        self.gn2 = GroupNorm(f"{name}.gn2", g2, cout, dtype)
        self.act2 = SiLU()
        self.conv2 = Conv3x3(f"{name}.conv2", cout, cout, rng, dtype)
        self.skip = Conv1x1(f"{name}.skip", cin, cout, rng, dtype) if cin != cout else None

    def forward(self, x, emb):
        h = self.conv1.forward(self.act1.forward(self.gn1.forward(x)))
        e = self.emb_lin.forward(self.emb_act.forward(emb))
        h = h + e[:, None, None, :]
        h = self.conv2.forward(self.act2.forward(self.gn2.forward(h)))
        s = self.skip.forward(x) if self.skip is not None else x
        return h + s

    def backward(self, dy):
        dh = self.gn2.backward(self.act2.backward(self.conv2.backward(dy)))
        demb = self.emb_act.backward(self.emb_lin.backward(dh.sum(axis=(1, 2))))
        dx = self.gn1.backward(self.act1.backward(self.conv1.backward(dh)))
        if self.skip is not None:
            dx = dx + self.skip.backward(dy)
        else:
            dx = dx + dy
        return dx, demb


class SelfAttention(Layer):
    """Single-head attention over flattened spatial tokens, residual output."""

    def __init__(self, name, channels, rng, dtype):
        self.c = channels
        self.qkv = Conv1x1(f"{name}.qkv", channels, 3 * channels, rng, dtype)
        self.proj = Conv1x1(f"{name}.proj", channels, channels, rng, dtype, zero_init=True)

    def forward(self, x):
        b, h, w, c = x.shape
        self.xshape = x.shape
        tokens = x.reshape(b, h * w, c)
        qkv = self.qkv.forward(tokens)
        q, k, v = qkv[..., :c], qkv[..., c : 2 * c], qkv[..., 2 * c :]
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(c)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        p = e / e.sum(axis=-1, keepdims=True)
        out = p @ v
        y = self.proj.forward(out)
        self.q, self.k, self.v, self.p = q, k, v, p
        return x + y.reshape(b, h, w, c)

    def backward(self, dy):
        b, h, w, c = self.xshape
        g = self.proj.backward(dy.reshape(b, h * w, c))
        dp = g @ self.v.transpose(0, 2, 1)
        dv = self.p.transpose(0, 2, 1) @ g
        ds = self.p * (dp - (dp * self.p).sum(axis=-1, keepdims=True))
        ds /= np.sqrt(c)
        dq = ds @ self.k
        dk = ds.transpose(0, 2, 1) @ self.q
        dqkv = np.concatenate([dq, dk, dv], axis=-1)
        dx = self.qkv.backward(dqkv)
        return dy + dx.reshape(b, h, w, c)
