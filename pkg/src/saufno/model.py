"""SAU-FNO: lifting, Fourier layers, U-Fourier layers, terminal self-attention, projection.

Every parameter shape depends only on channel counts and retained mode
counts, never on the grid size, so a model built once runs on any grid that
holds its modes and satisfies the U-Net divisibility constraint.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from . import tensor as T
from .errors import IndivisibleSpatialDims, ShapeError
from .nn import Conv2d, Module, Pointwise
from .tensor import Parameter, Tensor


@dataclass
class ModelConfig:
    in_channels: int = 2
    out_channels: int = 2
    width: int = 16
    modes: tuple = (8, 8)
    n_fourier: int = 2
    n_ufourier: int = 2
    attn_dim: int = 16
    unet_channels: tuple = (16, 32, 64, 128)
    attention: bool = True
    coord_channels: bool = False
    # grid the U-Net path runs on; None = the input grid. Finer inputs are
    # average-pooled onto it and the U-Net output is bilinearly upsampled back,
    # so its 3x3 kernels keep the same physical footprint on every mesh
    unet_resolution: tuple | None = None

    def __post_init__(self):
        self.modes = tuple(int(m) for m in self.modes)
        self.unet_channels = tuple(int(c) for c in self.unet_channels)
        if self.unet_resolution is not None:
            self.unet_resolution = tuple(int(n) for n in self.unet_resolution)
            if len(self.unet_resolution) != 2 or min(self.unet_resolution) < 1:
                raise ValueError(f"unet_resolution must be (H, W) with H, W >= 1, got {self.unet_resolution}")
        if self.width < 1 or self.attn_dim < 1:
            raise ValueError("width and attn_dim must be >= 1")
        if self.n_fourier < 0 or self.n_ufourier < 0 or self.n_fourier + self.n_ufourier < 1:
            raise ValueError("need at least one Fourier or U-Fourier layer")
        if self.attention and self.n_ufourier < 1:
            raise ValueError("the attention block follows the U-Fourier stack; n_ufourier must be >= 1")
        if len(self.unet_channels) < 2:
            raise ValueError("U-Net needs at least two levels")

    @property
    def variant(self) -> str:
        if self.n_ufourier == 0:
            return "fno"
        return "sau_fno" if self.attention else "u_fno"

    @property
    def lifted_channels(self) -> int:
        return self.in_channels + (2 if self.coord_channels else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        d["unet_channels"] = list(self.unet_channels)
        if self.unet_resolution is not None:
            d["unet_resolution"] = list(self.unet_resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @classmethod
    def fno(cls, **kw):
        kw.setdefault("n_fourier", 4)
        return cls(n_ufourier=0, attention=False, **kw)

    @classmethod
    def u_fno(cls, **kw):
        return cls(attention=False, **kw)


class SpectralConv(Module):
    """Learnable complex kernel on the lowest m1 x m2 modes (both row bands)."""

    def __init__(self, c_in, c_out, modes, rng):
        m1, m2 = modes
        std = 1.0 / (c_in * c_out)
        shape = (c_in, c_out, m1, m2, 2)
        self.w_low = Parameter((std * rng.standard_normal(shape)).astype(np.float32))
        self.w_high = Parameter((std * rng.standard_normal(shape)).astype(np.float32))

    def forward(self, x):
        return F.spectral_conv(x, self.w_low, self.w_high)


class FourierLayer(Module):
    def __init__(self, c, modes, rng):
        self.spectral = SpectralConv(c, c, modes, rng)
        self.linear = Pointwise(c, c, rng)

    def forward(self, x):
        return T.gelu(self.linear(x) + self.spectral(x))


class UNet(Module):
    """Encoder: two 3x3 conv + ReLU per level, 2x2 max-pool between levels.
    Decoder: bilinear 2x upsampling, skip concatenation, two 3x3 conv + ReLU.
    A final 1x1 conv maps back to the input width."""

    def __init__(self, c, channels, rng, grid=None):
        self.channels = tuple(channels)
        self.grid = None if grid is None else tuple(grid)
        self.enc = []
        prev = c
        for ch in channels:
            self.enc.append(Conv2d(prev, ch, rng))
            self.enc.append(Conv2d(ch, ch, rng))
            prev = ch
        self.dec = []
        for lo, hi in zip(channels[-2::-1], channels[:0:-1]):
            self.dec.append(Conv2d(hi + lo, lo, rng))
            self.dec.append(Conv2d(lo, lo, rng))
        self.out = Pointwise(channels[0], c, rng)

    @property
    def factor(self) -> int:
        return 2 ** (len(self.channels) - 1)

    def resample_factor(self, H, W) -> int:
        if self.grid is None:
            return 1
        gh, gw = self.grid
        r = H // gh
        if r < 1 or H != r * gh or W != r * gw:
            raise IndivisibleSpatialDims(
                f"U-Net runs on a {gh}x{gw} grid; input must be an integer multiple of it, got {H}x{W}")
        return r

    def check_shape(self, H, W):
        r = self.resample_factor(H, W)
        H, W = H // r, W // r
        f = self.factor
        if H % f or W % f or H < 2 * f or W < 2 * f:
            raise IndivisibleSpatialDims(
                f"U-Net with {len(self.channels)} levels needs H, W divisible by {f} and >= {2 * f}, got {H}x{W}")

    def forward(self, x):
        self.check_shape(*x.shape[-2:])
        B, C, H, W = x.shape
        r = self.resample_factor(H, W)
        if r > 1:
            x = T.mean(T.reshape(x, (B, C, H // r, r, W // r, r)), axis=(3, 5))
            return F.upsample_bilinear(self._ladder(x), r)
        return self._ladder(x)

    def _ladder(self, x):
        skips = []
        h = x
        for level in range(len(self.channels)):
            if level:
                h = F.max_pool2d(h, 2)
            h = T.relu(self.enc[2 * level](h))
            h = T.relu(self.enc[2 * level + 1](h))
            skips.append(h)
        skips.pop()
        for i in range(len(self.channels) - 1):
            h = F.upsample_bilinear(h, 2)
            h = T.concat([h, skips.pop()], axis=1)
            h = T.relu(self.dec[2 * i](h))
            h = T.relu(self.dec[2 * i + 1](h))
        return self.out(h)


class UFourierLayer(Module):
    """gelu(spectral(v) + unet(v) + linear(v))."""

    def __init__(self, c, modes, unet_channels, rng, unet_grid=None):
        self.spectral = SpectralConv(c, c, modes, rng)
        self.unet = UNet(c, unet_channels, rng, unet_grid)
        self.linear = Pointwise(c, c, rng)

    def forward(self, v):
        return T.gelu(self.spectral(v) + self.unet(v) + self.linear(v))


class SelfAttention(Module):
    """Non-local attention over pixels, all projections 1x1.

    values = W_h V, queries = W_q V, keys = W_k V; weights are a row softmax of
    q_i . k_j / sqrt(d); the attended values go through a 1x1 output conv and
    are added back to V.
    """

    def __init__(self, c, d, rng):
        self.d = d
        self.value = Pointwise(c, d, rng)
        self.query = Pointwise(c, d, rng)
        self.key = Pointwise(c, d, rng)
        self.out = Pointwise(d, c, rng)

    def weights(self, v):
        B, _, H, W = v.shape
        n = H * W
        q = T.transpose(T.reshape(self.query(v), (B, self.d, n)), (0, 2, 1))
        k = T.reshape(self.key(v), (B, self.d, n))
        return T.softmax(T.matmul(q, k) * (1.0 / np.sqrt(self.d)), axis=-1)

    def forward(self, v):
        B, c, H, W = v.shape
        n = H * W
        if not T.grad_enabled():
            return v + self.out(Tensor(self._attend_inference(v.data)))
        a_s = self.weights(v)  # [B, N, N]
        a_c = T.transpose(T.reshape(self.value(v), (B, self.d, n)), (0, 2, 1))  # [B, N, d]
        attended = T.matmul(a_s, a_c)
        attended = T.reshape(T.transpose(attended, (0, 2, 1)), (B, self.d, H, W))
        return v + self.out(attended)

    def _attend_inference(self, v: np.ndarray, chunk: int = 512) -> np.ndarray:
        # same maths as the taped path, row-chunked so the N x N weights never materialise
        B, _, H, W = v.shape
        n = H * W
        d = self.d
        with T.no_grad():
            q = self.query(Tensor(v)).data.reshape(B, d, n).transpose(0, 2, 1) * v.dtype.type(1.0 / np.sqrt(d))
            k = self.key(Tensor(v)).data.reshape(B, d, n)
            a_c = self.value(Tensor(v)).data.reshape(B, d, n).transpose(0, 2, 1)
        out = np.empty((B, n, d), dtype=v.dtype)
        for b in range(B):
            for i in range(0, n, chunk):
                s = q[b, i:i + chunk] @ k[b]
                s -= s.max(axis=1, keepdims=True)
                np.exp(s, out=s)
                out[b, i:i + chunk] = (s @ a_c[b]) / s.sum(axis=1, keepdims=True)
        return np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(B, d, H, W)


def coordinate_channels(B, H, W, dtype=np.float32) -> np.ndarray:
    ys = (np.arange(H) + 0.5) / H
    xs = (np.arange(W) + 0.5) / W
    grid = np.stack(np.meshgrid(ys, xs, indexing="ij")).astype(dtype)
    return np.broadcast_to(grid, (B, 2, H, W)).copy()


class SAUFNO(Module):
    """Also covers the plain FNO (no U-Fourier layers) and U-FNO (no attention) baselines."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config.width
        self.lift = Pointwise(config.lifted_channels, c, rng)
        self.fourier = [FourierLayer(c, config.modes, rng) for _ in range(config.n_fourier)]
        self.ufourier = [UFourierLayer(c, config.modes, config.unet_channels, rng, config.unet_resolution)
                         for _ in range(config.n_ufourier)]
        self.attention = None
        if config.attention:
            # own stream, so every other weight matches the attention-free model with the same seed;
            # a zero output projection makes the block start as the identity
            self.attention = SelfAttention(c, config.attn_dim, np.random.default_rng([seed, 1]))
            self.attention.out.weight.data[...] = 0.0
        self.proj1 = Pointwise(c, 4 * c, rng)
        self.proj2 = Pointwise(4 * c, config.out_channels, rng)

    def check_input(self, shape):
        if len(shape) != 4:
            raise ShapeError(f"expected [B, C, H, W], got {shape}")
        if shape[1] != self.config.in_channels:
            raise ShapeError(f"model expects {self.config.in_channels} input channels, got {shape[1]}")
        for layer in self.ufourier:
            layer.unet.check_shape(*shape[-2:])

    def forward(self, x):
        x = T.as_tensor(x)
        self.check_input(x.shape)
        if self.config.coord_channels:
            B, _, H, W = x.shape
            x = T.concat([x, Tensor(coordinate_channels(B, H, W, x.dtype))], axis=1)
        h = self.lift(x)
        for layer in self.fourier:
            h = layer(h)
        for layer in self.ufourier:
            h = layer(h)
        if self.attention is not None:
            h = self.attention(h)
        return self.proj2(T.gelu(self.proj1(h)))


# Functional entry points mirroring the layer catalogue.

def spectral_conv(x, weights: SpectralConv):
    return weights(x)


def fourier_layer(x, params: FourierLayer):
    return params(x)


def unet_forward(x, params: UNet):
    return params(x)


def u_fourier_layer(v, params: UFourierLayer):
    return params(v)


def attention_block(v, params: SelfAttention):
    return params(v)


def sau_fno_forward(x, config: ModelConfig, params: SAUFNO | dict):
    if isinstance(params, dict):
        model = SAUFNO(config)
        model.load_state_dict(params)
        params = model
    return params(x)


def build_model(config: ModelConfig, seed: int = 0) -> SAUFNO:
    return SAUFNO(config, seed)
