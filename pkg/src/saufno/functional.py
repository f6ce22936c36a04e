"""Differentiable array ops used by the neural operator.

Convolutions are plain cross-correlations with zero "same" padding, done by
im2col + one GEMM. The real FFT pair wraps ``numpy.fft`` (pocketfft, any
length) and supplies the adjoints needed for reverse mode.
"""
from __future__ import annotations

import numpy as np

from .errors import IndivisibleSpatialDims, ModeCountError, ShapeError
from .tensor import Tensor, as_tensor, make_result


def pointwise(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: y[b,o] = sum_i weight[o,i] * x[b,i] (+ bias[o])."""
    B, C = x.shape[:2]
    spatial = x.shape[2:]
    O, Ci = weight.shape
    if Ci != C:
        raise ShapeError(f"pointwise: weight expects {Ci} channels, input has {C}")
    x2 = x.data.reshape(B, C, -1)
    out = weight.data @ x2
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape((B, O) + spatial)

    def backward(g):
        g2 = g.reshape(B, O, -1)
        gx = (weight.data.T @ g2).reshape(x.shape) if x.requires_grad else None
        gw = np.einsum("bon,bin->oi", g2, x2) if weight.requires_grad else None
        gb = g2.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "pointwise")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with zero padding so that output H, W equal input's.

    x: [B, Cin, H, W]; weight: [Cout, Cin, kh, kw] with odd kh, kw.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects x [B,C,H,W] and weight [O,C,kh,kw]")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ShapeError(f"conv2d: kernel has Cin={Ci} but input has {C} channels")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if kh == 1 and kw == 1:
        return pointwise(x, _reshape_kernel(weight), bias)

    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((B, C, kh, kw, H, W), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + H, j:j + W]
    cols = cols.reshape(B, C * kh * kw, H * W)
    wmat = weight.data.reshape(O, C * kh * kw)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(B, O, H, W)

    def backward(g):
        g2 = g.reshape(B, O, H * W)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(B, C, kh, kw, H, W)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + H, j:j + W] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv2d")


def _reshape_kernel(weight: Tensor) -> Tensor:
    O, C = weight.shape[:2]
    return make_result(weight.data.reshape(O, C), (weight,),
                       lambda g: (g.reshape(weight.shape),), "reshape")


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    B, C, H, W = x.shape
    if H % k or W % k:
        raise IndivisibleSpatialDims(f"max_pool2d: {H}x{W} not divisible by {k}")
    blocks = x.data.reshape(B, C, H // k, k, W // k, k).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, H // k, W // k, k * k)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, C, H // k, W // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(B, C, H, W),)

    return make_result(out, (x,), backward, "max_pool2d")


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    # half-pixel centres, edge-clamped (align_corners=False)
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        m[o, i0] += 1.0 - w1
        m[o, i1] += w1
    return m


def upsample_bilinear(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    uh = _interp_matrix(H, H * factor, x.dtype)
    uw = _interp_matrix(W, W * factor, x.dtype)
    out = uh @ x.data @ uw.T

    def backward(g):
        return (uh.T @ g @ uw,)

    return make_result(out, (x,), backward, "upsample_bilinear")


# -- Fourier transforms ------------------------------------------------------

def rfft2(x: Tensor) -> Tensor:
    """Unnormalised real 2-D FFT over the last two axes -> [..., H, W//2+1]."""
    H, W = x.shape[-2:]
    if H < 2 or W < 2:
        raise ShapeError(f"rfft2 needs H, W >= 2, got {H}x{W}")
    out = np.fft.rfft2(x.data)
    wf = out.shape[-1]

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., :wf] = g
        return (np.real(np.fft.ifft2(full)).astype(x.dtype) * (H * W),)

    return make_result(out, (x,), backward, "rfft2")


def irfft2(X: Tensor, s=None) -> Tensor:
    """Inverse of :func:`rfft2`, scaled by 1/(H*W).

    ``s=(H, W)`` is required when the original W was odd, since the half
    spectrum width W//2+1 cannot tell 2m from 2m+1.
    """
    H, wf = X.shape[-2:]
    if s is None:
        s = (H, 2 * (wf - 1))
    H, W = s
    if W // 2 + 1 != wf:
        raise ShapeError(f"irfft2: spectrum width {wf} does not match W={W}")
    out = np.fft.irfft2(X.data, s=s)
    weight = np.full(wf, 2.0)
    weight[0] = 1.0
    if W % 2 == 0:
        weight[-1] = 1.0

    def backward(g):
        return (np.fft.rfft2(g) * (weight / (H * W)).astype(g.dtype),)

    return make_result(out, (X,), backward, "irfft2")


def view_as_complex(x: Tensor) -> Tensor:
    """[..., 2] real (re, im) pairs -> complex [...]."""
    if x.shape[-1] != 2:
        raise ShapeError("view_as_complex expects a trailing axis of size 2")
    ctype = np.complex64 if x.dtype == np.float32 else np.complex128
    out = (x.data[..., 0] + 1j * x.data[..., 1]).astype(ctype)

    def backward(g):
        return (np.stack([g.real, g.imag], axis=-1).astype(x.dtype),)

    return make_result(out, (x,), backward, "view_as_complex")


def _mix(band, w):
    # band [B,Ci,m1,m2], w [Ci,Co,m1,m2] -> [B,Co,m1,m2]
    return (band.transpose(2, 3, 0, 1) @ w.transpose(2, 3, 0, 1)).transpose(2, 3, 0, 1)


def spectral_mix(X: Tensor, w_low: Tensor, w_high: Tensor) -> Tensor:
    """Multiply the retained low-frequency modes by complex channel-mixing weights.

    Modes kept: rows [0, m1) and [H-m1, H) of axis -2, columns [0, m2) of axis -1.
    Everything else in the output spectrum is zero.
    """
    B, Ci, H, wf = X.shape
    ci, co, m1, m2 = w_low.shape
    if w_high.shape != w_low.shape:
        raise ShapeError("spectral weight bands must share a shape")
    if ci != Ci:
        raise ShapeError(f"spectral weights expect {ci} input channels, got {Ci}")
    if 2 * m1 > H or m2 > wf:
        raise ModeCountError(f"modes ({m1},{m2}) exceed grid spectrum ({H},{wf})")
    out = np.zeros((B, co, H, wf), dtype=X.dtype)
    lo = X.data[:, :, :m1, :m2]
    hi = X.data[:, :, H - m1:, :m2]
    out[:, :, :m1, :m2] = _mix(lo, w_low.data)
    out[:, :, H - m1:, :m2] = _mix(hi, w_high.data)

    def backward(g):
        g_lo = g[:, :, :m1, :m2]
        g_hi = g[:, :, H - m1:, :m2]
        gX = None
        if X.requires_grad:
            gX = np.zeros(X.shape, dtype=g.dtype)
            gX[:, :, :m1, :m2] = _mix(g_lo, np.conj(w_low.data).transpose(1, 0, 2, 3))
            gX[:, :, H - m1:, :m2] = _mix(g_hi, np.conj(w_high.data).transpose(1, 0, 2, 3))
        g_wl = np.einsum("bixy,boxy->ioxy", np.conj(lo), g_lo) if w_low.requires_grad else None
        g_wh = np.einsum("bixy,boxy->ioxy", np.conj(hi), g_hi) if w_high.requires_grad else None
        return gX, g_wl, g_wh

    return make_result(out, (X, w_low, w_high), backward, "spectral_mix")


def spectral_conv(x: Tensor, w_low: Tensor, w_high: Tensor) -> Tensor:
    """Fourier-space kernel: irfft2(mix(rfft2(x))).

    ``w_low``/``w_high`` are real parameters [Cin, Cout, m1, m2, 2] holding the
    complex weights of the low and conjugate-band rows.
    """
    H, W = x.shape[-2:]
    m1, m2 = w_low.shape[2:4]
    if 2 * m1 > H or m2 > W // 2 + 1:
        raise ModeCountError(f"modes ({m1},{m2}) exceed what a {H}x{W} grid holds")
    X = rfft2(x)
    Y = spectral_mix(X, view_as_complex(as_tensor(w_low)), view_as_complex(as_tensor(w_high)))
    return irfft2(Y, s=(H, W))
