"""Differentiable volume operations on (batch, channel, depth, height, width) tensors.

Stride-1 "same" convolutions pad the input once and run one matrix product
per kernel tap over a flattened view: tap ``(a, b, c)`` is just a constant
offset into the padded buffer.  Outputs land in the padded layout and the
valid part is cropped out.  Strided and transposed convolutions go through
explicit im2col / col2im.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _lift, _record_branch


def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ShapeError(f"expected 3 values, got {v}")
    return v


def _check_5d(x: Tensor, name="input"):
    if x.ndim != 5:
        raise ShapeError(f"{name} must be (B, C, D, H, W), got shape {x.shape}")


def _out_dims(spatial, k, s, p):
    out = tuple((n + 2 * pp - kk) // ss + 1 for n, kk, ss, pp in zip(spatial, k, s, p))
    if min(out) < 1:
        raise ShapeError(f"kernel {k} larger than padded input {spatial}")
    return out


def _pad(x, p):
    if not any(p):
        return x
    return np.pad(x, ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2])))


def _crop(xp, p, spatial):
    d, h, w = spatial
    return xp[:, :, p[0]:p[0] + d, p[1]:p[1] + h, p[2]:p[2] + w]


# --- stride-1 "same" path -------------------------------------------------

def _same_forward(x, wk, k, p):
    b, ci, d, h, w = x.shape
    co = wk.shape[1]
    xp = _pad(x, p)
    D, H, W = xp.shape[2:]
    xf = xp.reshape(b, ci, D * H * W)
    offsets = [(a * H + c) * W + e for a in range(k[0]) for c in range(k[1]) for e in range(k[2])]
    span = (d - 1) * H * W + (h - 1) * W + w
    out = np.zeros((b, co, d * H * W), dtype=x.dtype)
    for n in range(b):
        acc = out[n, :, :span]
        for t, off in enumerate(offsets):
            acc += wk[t] @ xf[n, :, off:off + span]
    out = out.reshape(b, co, d, H, W)[:, :, :, :h, :w]
    return out, xf, offsets, span, (D, H, W)


def _same_backward(g, xf, wk, offsets, span, padded, p, in_shape, need_x=True):
    b, ci = in_shape[:2]
    co = g.shape[1]
    D, H, W = padded
    d, h, w = in_shape[2:]
    gp = np.zeros((b, co, d, H, W), dtype=g.dtype)
    gp[:, :, :, :h, :w] = g
    gf = gp.reshape(b, co, -1)[:, :, :span]
    gw = np.zeros_like(wk)
    gx = np.zeros((b, ci, D * H * W), dtype=g.dtype) if need_x else None
    for n in range(b):
        gn = gf[n]
        for t, off in enumerate(offsets):
            gw[t] += gn @ xf[n, :, off:off + span].T
            if need_x:
                gx[n, :, off:off + span] += wk[t].T @ gn
    if need_x:
        gx = _crop(gx.reshape(b, ci, D, H, W), p, (d, h, w))
    return gx, gw


# --- general im2col path --------------------------------------------------

def _im2col(xp, k, s, out):
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k[0], k[1], k[2]) + out, dtype=xp.dtype)
    for a in range(k[0]):
        for e in range(k[1]):
            for f in range(k[2]):
                cols[:, :, a, e, f] = xp[:, :,
                                         a:a + s[0] * out[0]:s[0],
                                         e:e + s[1] * out[1]:s[1],
                                         f:f + s[2] * out[2]:s[2]]
    return cols.reshape(b, c * k[0] * k[1] * k[2], -1)


def _col2im(cols, padded_shape, k, s, out):
    b, c = padded_shape[:2]
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape((b, c) + tuple(k) + tuple(out))
    for a in range(k[0]):
        for e in range(k[1]):
            for f in range(k[2]):
                xp[:, :,
                   a:a + s[0] * out[0]:s[0],
                   e:e + s[1] * out[1]:s[1],
                   f:f + s[2] * out[2]:s[2]] += cols[:, :, a, e, f]
    return xp


def _matmul_batch(w2, cols):
    # (co, K) x (b, K, N) -> (b, co, N)
    return np.stack([w2 @ cols[n] for n in range(cols.shape[0])])


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=None) -> Tensor:
    """3-D cross-correlation.

    ``weight`` is (out_c, in_c, kd, kh, kw).  ``padding`` defaults to
    ``(k - 1) // 2`` per axis, which keeps the spatial size for odd kernels at
    stride 1 and gives ``ceil(n / 2)`` at stride 2 for kernel 3.
    """
    x, weight = _lift(x), _lift(weight)
    _check_5d(x)
    if weight.ndim != 5:
        raise ShapeError(f"weight must be 5-D, got {weight.shape}")
    co, ci = weight.shape[:2]
    if x.shape[1] != ci:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {ci}")
    k = weight.shape[2:]
    s = _triple(stride)
    p = _triple([(kk - 1) // 2 for kk in k] if padding is None else padding)
    spatial = x.shape[2:]
    out_sp = _out_dims(spatial, k, s, p)
    xd, wd = x.data, weight.data
    parents = (x, weight) if bias is None else (x, weight, _lift(bias))

    if s == (1, 1, 1) and out_sp == spatial:
        wk = np.ascontiguousarray(wd.reshape(co, ci, -1).transpose(2, 0, 1))
        out, xf, offsets, span, padded = _same_forward(xd, wk, k, p)

        def bw(g):
            gx, gwk = _same_backward(g, xf, wk, offsets, span, padded, p, xd.shape, x.requires_grad)
            gw = gwk.transpose(1, 2, 0).reshape(wd.shape)
            return (gx, gw) + ((g.sum(axis=(0, 2, 3, 4)),) if bias is not None else ())
    else:
        xp = _pad(xd, p)
        cols = _im2col(xp, k, s, out_sp)
        w2 = wd.reshape(co, -1)
        out = _matmul_batch(w2, cols).reshape((x.shape[0], co) + out_sp)

        def bw(g):
            g2 = g.reshape(g.shape[0], co, -1)
            gw = sum(g2[n] @ cols[n].T for n in range(g2.shape[0])).reshape(wd.shape)
            gx = None
            if x.requires_grad:
                gcols = np.stack([w2.T @ g2[n] for n in range(g2.shape[0])])
                gx = _crop(_col2im(gcols, xp.shape, k, s, out_sp), p, spatial)
            return (gx, gw) + ((g.sum(axis=(0, 2, 3, 4)),) if bias is not None else ())

    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1, 1)
    return Tensor._make(np.ascontiguousarray(out), parents, bw, "conv3d")


def conv3d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride=(1, 2, 2), padding=(1, 1, 1), output_size=None) -> Tensor:
    """Transposed 3-D convolution: the exact adjoint of :func:`conv3d`.

    ``weight`` is (in_c, out_c, kd, kh, kw), i.e. the weight of the forward
    convolution that maps out_c channels to in_c channels.  The output spatial
    size is ``(n - 1) * s - 2 p + k`` unless ``output_size`` says otherwise;
    with kernel (3, 4, 4), stride (1, 2, 2), padding 1 that doubles height and
    width and keeps depth.
    """
    x, weight = _lift(x), _lift(weight)
    _check_5d(x)
    ci, co = weight.shape[:2]
    if x.shape[1] != ci:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {ci}")
    k = weight.shape[2:]
    s, p = _triple(stride), _triple(padding)
    in_sp = x.shape[2:]
    if output_size is None:
        output_size = tuple((n - 1) * ss - 2 * pp + kk for n, ss, pp, kk in zip(in_sp, s, p, k))
    output_size = tuple(int(v) for v in output_size)
    if _out_dims(output_size, k, s, p) != in_sp:
        raise ShapeError(f"output size {output_size} incompatible with input {in_sp}")
    b = x.shape[0]
    padded = (b, co) + tuple(n + 2 * pp for n, pp in zip(output_size, p))
    w2 = weight.data.reshape(ci, -1)
    xf = x.data.reshape(b, ci, -1)
    cols = np.stack([w2.T @ xf[n] for n in range(b)])
    out = _crop(_col2im(cols, padded, k, s, in_sp), p, output_size)
    parents = (x, weight) if bias is None else (x, weight, _lift(bias))

    def bw(g):
        gcols = _im2col(_pad(g, p), k, s, in_sp)
        gx = _matmul_batch(w2, gcols).reshape(x.shape) if x.requires_grad else None
        gw = sum(xf[n] @ gcols[n].T for n in range(b)).reshape(weight.shape)
        return (gx, gw) + ((g.sum(axis=(0, 2, 3, 4)),) if bias is not None else ())

    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1, 1)
    return Tensor._make(np.ascontiguousarray(out), parents, bw, "conv3d_transpose")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Per-channel parametric ReLU: ``x`` if ``x >= 0`` else ``a_c * x``."""
    x, slope = _lift(x), _lift(slope)
    if slope.ndim != 1 or slope.shape[0] != x.shape[1]:
        raise ShapeError(f"slope shape {slope.shape} does not match {x.shape[1]} channels")
    xd = x.data
    a = slope.data.reshape((1, -1) + (1,) * (xd.ndim - 2))
    neg = xd < 0
    _record_branch(neg)
    out = np.where(neg, a * xd, xd)

    def bw(g):
        gx = np.where(neg, a * g, g)
        axes = (0,) + tuple(range(2, xd.ndim))
        ga = np.where(neg, xd * g, 0).sum(axis=axes)
        return gx, ga
    return Tensor._make(out, (x, slope), bw, "prelu")


def concat_channels(*xs: Tensor) -> Tensor:
    xs = tuple(_lift(t) for t in xs)
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"cannot concatenate {t.shape} with {ref} along channels")
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=1)
    return Tensor._make(out, xs, lambda g: tuple(np.split(g, splits, axis=1)), "concat")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return a + b


# --- 2-D image ops used by the structural similarity loss -------------------

def filter2d_valid(x: Tensor, taps: np.ndarray) -> Tensor:
    """Separable 'valid' filtering of the last two axes with 1-D ``taps``."""
    x = _lift(x)
    taps = np.asarray(taps, dtype=x.dtype)
    n = len(taps)
    h, w = x.shape[-2:]
    if h < n or w < n:
        raise ShapeError(f"image {h}x{w} smaller than the {n}-tap window")
    y = sliding_window_view(x.data, n, axis=-1) @ taps
    z = sliding_window_view(y, n, axis=-2) @ taps
    oh, ow = h - n + 1, w - n + 1

    def bw(g):
        gy = np.zeros(g.shape[:-2] + (h, ow), dtype=g.dtype)
        for t in range(n):
            gy[..., t:t + oh, :] += taps[t] * g
        gx = np.zeros(g.shape[:-2] + (h, w), dtype=g.dtype)
        for t in range(n):
            gx[..., :, t:t + ow] += taps[t] * gy
        return (gx,)
    return Tensor._make(np.ascontiguousarray(z), (x,), bw, "filter2d")


def avg_pool2d(x: Tensor) -> Tensor:
    """2x2 mean pooling of the last two axes; an odd trailing row/column is dropped."""
    x = _lift(x)
    h, w = x.shape[-2:]
    h2, w2 = h // 2, w // 2
    lead = x.shape[:-2]
    xd = x.data[..., :2 * h2, :2 * w2]
    out = xd.reshape(lead + (h2, 2, w2, 2)).mean(axis=(-3, -1))

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., :2 * h2, :2 * w2] = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        return (gx,)
    return Tensor._make(out, (x,), bw, "avg_pool2d")
