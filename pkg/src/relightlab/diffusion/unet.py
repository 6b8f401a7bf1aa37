"""U-shaped noise predictor over 12-channel conditioned inputs.

Input layout (NHWC, channel blocks of 3): noisy target, input image,
LDR env map, log-normalized HDR env map. Output: predicted noise, 3
channels at the input resolution. Spatial dims must be divisible by
2^(levels-1).
"""

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    AvgPool2,
    Conv3x3,
    GroupNorm,
    NearestUp2,
    ResBlock,
    SelfAttention,
    SiLU,
    TimeEmbedding,
)

IN_CHANNELS = 12


@dataclass(frozen=True)
class DenoiserConfig:
    base_width: int = 32
    level_multipliers: tuple = (1, 2, 4)
    blocks_per_level: int = 1
    time_embed_dim: int = 64
    attention: bool = True
    groups: int = 8

    def __post_init__(self):
        if self.base_width < 1 or self.blocks_per_level < 1 or self.time_embed_dim < 1:
            raise ValueError("denoiser widths must be positive")
        object.__setattr__(self, "level_multipliers", tuple(int(m) for m in self.level_multipliers))

    def to_dict(self) -> dict:
        return {
            "base_width": self.base_width,
            "level_multipliers": list(self.level_multipliers),
            "blocks_per_level": self.blocks_per_level,
            "time_embed_dim": self.time_embed_dim,
            "attention": self.attention,
            "groups": self.groups,
        }

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        return DenoiserConfig(
            base_width=int(d["base_width"]),
            level_multipliers=tuple(d["level_multipliers"]),
            blocks_per_level=int(d["blocks_per_level"]),
            time_embed_dim=int(d["time_embed_dim"]),
            attention=bool(d["attention"]),
            groups=int(d.get("groups", 8)),
        )


class Denoiser:
    """epsilon-predictor; construct with a seed for deterministic init."""

    def __init__(self, config: DenoiserConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        chans = [config.base_width * m for m in config.level_multipliers]
        L = len(chans)
        g = config.groups
        self.time = TimeEmbedding("time", config.time_embed_dim, rng, dtype)
        self.stem = Conv3x3("stem", IN_CHANNELS, chans[0], rng, dtype)
        self.enc = []
        for i in range(L):
            blocks = []
            cin = chans[i - 1] if i > 0 else chans[0]
            for b in range(config.blocks_per_level):
                blocks.append(
                    ResBlock(f"enc{i}.res{b}", cin if b == 0 else chans[i], chans[i],
                             config.time_embed_dim, rng, dtype, g)
                )
            self.enc.append(blocks)
        self.downs = [AvgPool2() for _ in range(L - 1)]
        self.mid1 = ResBlock("mid.res0", chans[-1], chans[-1], config.time_embed_dim, rng, dtype, g)
        self.attn = SelfAttention("mid.attn", chans[-1], rng, dtype) if config.attention else None
        self.mid2 = ResBlock("mid.res1", chans[-1], chans[-1], config.time_embed_dim, rng, dtype, g)
        self.dec = []
        for i in reversed(range(L)):
            blocks = []
            c_deep = chans[min(i + 1, L - 1)] if i < L - 1 else chans[-1]
            cin = c_deep + chans[i]  # upsampled deep features concat skip
            for b in range(config.blocks_per_level):
                blocks.append(
                    ResBlock(f"dec{i}.res{b}", cin if b == 0 else chans[i], chans[i],
                             config.time_embed_dim, rng, dtype, g)
                )
            self.dec.append(blocks)
        self.ups = [NearestUp2() for _ in range(L - 1)]
        self.head_gn = GroupNorm("head.gn", min(g, chans[0]), chans[0], dtype)
        self.head_act = SiLU()
        self.head_conv = Conv3x3("head.conv", chans[0], 3, rng, dtype, zero_init=True)
        self._levels = L

    # -- parameter plumbing ------------------------------------------------

    def params(self):
        out = self.time.params() + self.stem.params()
        for blocks in self.enc:
            for blk in blocks:
                out.extend(blk.params())
        out.extend(self.mid1.params())
        if self.attn is not None:
            out.extend(self.attn.params())
        out.extend(self.mid2.params())
        for blocks in self.dec:
            for blk in blocks:
                out.extend(blk.params())
        out.extend(self.head_gn.params())
        out.extend(self.head_conv.params())
        return out

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def n_params(self) -> int:
        return sum(p.value.size for p in self.params())

    # -- forward / backward --------------------------------------------------

    def forward(self, x, t):
        """x: (B, H, W, 12); t: (B,) integer timesteps. Returns (B, H, W, 3)."""
        if x.shape[-1] != IN_CHANNELS:
            raise ValueError(f"expected {IN_CHANNELS} input channels, got {x.shape[-1]}")
        mod = 2 ** (self._levels - 1)
        if x.shape[1] % mod or x.shape[2] % mod:
            raise ValueError(f"spatial dims must be divisible by {mod}")
        emb = self.time.forward(np.asarray(t))
        h = self.stem.forward(np.ascontiguousarray(x, self.dtype))
        skips = []
        for i, blocks in enumerate(self.enc):
            for blk in blocks:
                h = blk.forward(h, emb)
            skips.append(h)
            if i < self._levels - 1:
                h = self.downs[i].forward(h)
        h = self.mid1.forward(h, emb)
        if self.attn is not None:
            h = self.attn.forward(h)
        h = self.mid2.forward(h, emb)
        self._skip_channels = []
        for j, blocks in enumerate(self.dec):
            i = self._levels - 1 - j
            skip = skips[i]
            self._skip_channels.append((h.shape[-1], skip.shape[-1]))
            h = np.concatenate([h, skip], axis=-1)
            for blk in blocks:
                h = blk.forward(h, emb)
            if i > 0:
                h = self.ups[j].forward(h)
        return self.head_conv.forward(self.head_act.forward(self.head_gn.forward(h)))

    def backward(self, dy):
        """Accumulate parameter grads; returns grad w.r.t. the 12-channel input."""
        demb = 0.0
        dh = self.head_gn.backward(self.head_act.backward(self.head_conv.backward(dy)))
        dskips = [None] * self._levels
        for j in reversed(range(len(self.dec))):
            i = self._levels - 1 - j
            if i > 0:
                dh = self.ups[j].backward(dh)
            for blk in reversed(self.dec[j]):
                dh, de = blk.backward(dh)
                demb = demb + de
            c_deep, c_skip = self._skip_channels[j]
            dskips[i] = dh[..., c_deep:]
            dh = np.ascontiguousarray(dh[..., :c_deep])
        dh, de = self.mid2.backward(dh)
        demb = demb + de
        if self.attn is not None:
            dh = self.attn.backward(dh)
        dh2, de = self.mid1.backward(dh)
        demb = demb + de
        dh = dh2
        for i in reversed(range(self._levels)):
            if i < self._levels - 1:
                dh = self.downs[i].backward(dh)
            dh = dh + dskips[i]
            for blk in reversed(self.enc[i]):
                dh, de = blk.backward(dh)
                demb = demb + de
        dx = self.stem.backward(dh)
        self.time.backward(demb)
        return dx
