"""Differentiable primitives used by the segmentation networks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..parallel import map_ordered
from .tensor import Tensor, make_result

NO_DATA = 65535

# im2col scratch budget per chunk; larger batches are split along N.
_COLS_BUDGET_BYTES = 64 * 2**20


class ConfigurationError(ValueError):
    """Operand shapes or hyperparameters that cannot describe a valid op."""


class IntegrityError(ValueError):
    """Inconsistent bookkeeping, e.g. pooling indices outside the target."""


# ---------------------------------------------------------------------------
# convolution


def _as_tuple(value, n: int, name: str) -> tuple:
    if np.isscalar(value):
        return (int(value),) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ConfigurationError(f"{name} needs {n} entries, got {len(value)}")
    return value


def _im2col(xp: np.ndarray, ksize: tuple, stride: tuple) -> np.ndarray:
    """(n, C, *padded) -> (C*prod(k), n*prod(out)), row order (C, *k)."""
    nd = len(ksize)
    win = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + nd)))
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    # (n, C, *out, *k) -> (C, *k, n, *out)
    axes = (1,) + tuple(range(2 + nd, 2 + 2 * nd)) + (0,) + tuple(range(2, 2 + nd))
    rows = xp.shape[1] * int(np.prod(ksize))
    return win.transpose(axes).reshape(rows, -1)


def _chunks(n: int, per_sample_bytes: int) -> list:
    step = max(1, _COLS_BUDGET_BYTES // max(per_sample_bytes, 1))
    return [(i, min(i + step, n)) for i in range(0, n, step)]


def _convnd(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride, padding, nd: int, op: str) -> Tensor:
    if x.ndim != nd + 2 or weight.ndim != nd + 2:
        raise ConfigurationError(f"{op}: expected {nd + 2}-d input and weight, got {x.shape} and {weight.shape}")
    n, cin = x.shape[:2]
    cout, wcin = weight.shape[:2]
    if cin != wcin:
        raise ConfigurationError(f"{op}: input has {cin} channels but weight expects {wcin}")
    ksize = weight.shape[2:]
    if any(k % 2 == 0 for k in ksize):
        raise ConfigurationError(f"{op}: kernel extents must be odd, got {ksize}")
    stride = _as_tuple(stride, nd, "stride")
    padding = _as_tuple(padding, nd, "padding")
    if any(s < 1 for s in stride) or any(p < 0 for p in padding):
        raise ConfigurationError(f"{op}: stride must be >= 1 and padding >= 0")
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"{op}: bias shape {bias.shape} != ({cout},)")

    spatial = x.shape[2:]
    out_sp = tuple((s + 2 * p - k) // st + 1 for s, p, k, st in zip(spatial, padding, ksize, stride))
    if any(o < 1 for o in out_sp):
        raise ConfigurationError(f"{op}: kernel {ksize} larger than padded input {spatial}")

    xd, wd = x.data, weight.data
    dtype = np.result_type(xd, wd)
    n_out = int(np.prod(out_sp))
    n_in = int(np.prod(spatial))
    # Multiply-then-shift touches cout*K values per input pixel, im2col cin*K
    # per output pixel; pick whichever moves less memory.
    use_shift = all(s == 1 for s in stride) and cout * n_in <= cin * n_out
    kernel = _shift_conv if use_shift else _im2col_conv
    out, backward_chunks = kernel(xd, wd, ksize, stride, padding, out_sp, dtype)
    if bias is not None:
        out += bias.data.reshape((1, cout) + (1,) * nd)

    def backward(g):
        dx, dw = backward_chunks(g, x.requires_grad, weight.requires_grad)
        gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
        return dx, dw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, op)


def _gather_results(results, need_x, need_w, w_shape):
    dx = dw = None
    if need_x:
        dx = np.concatenate([r[1] for r in results], axis=0) if len(results) > 1 else results[0][1]
    if need_w:
        dw = results[0][0]
        for r in results[1:]:
            dw = dw + r[0]
        dw = dw.reshape(w_shape)
    return dx, dw


def _im2col_conv(xd, wd, ksize, stride, padding, out_sp, dtype):
    n, cin = xd.shape[:2]
    cout = wd.shape[0]
    spatial = xd.shape[2:]
    wmat = wd.reshape(cout, -1)
    pad_width = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    chunks = _chunks(n, wmat.shape[1] * int(np.prod(out_sp)) * xd.itemsize)

    def padded(i0, i1):
        part = xd[i0:i1]
        return np.pad(part, pad_width) if any(padding) else part

    def forward_chunk(bounds):
        i0, i1 = bounds
        cols = _im2col(padded(i0, i1), ksize, stride)
        return np.moveaxis((wmat @ cols).reshape((cout, i1 - i0) + out_sp), 0, 1)

    out = np.empty((n, cout) + out_sp, dtype=dtype)
    for (i0, i1), y in zip(chunks, map_ordered(forward_chunk, chunks)):
        out[i0:i1] = y

    def backward_chunks(g, need_x, need_w):
        def backward_chunk(bounds):
            i0, i1 = bounds
            gmat = np.moveaxis(g[i0:i1], 1, 0).reshape(cout, -1)
            dw = dx = None
            if need_w:
                dw = gmat @ _im2col(padded(i0, i1), ksize, stride).T
            if need_x:
                dcols = (wmat.T @ gmat).reshape((cin,) + tuple(ksize) + (i1 - i0,) + out_sp)
                dxp = np.zeros((i1 - i0, cin) + tuple(s + 2 * p for s, p in zip(spatial, padding)), dtype=dtype)
                for offset in itertools.product(*(range(k) for k in ksize)):
                    target = (slice(None), slice(None)) + tuple(
                        slice(o, o + st * (m - 1) + 1, st) for o, st, m in zip(offset, stride, out_sp)
                    )
                    dxp[target] += np.moveaxis(dcols[(slice(None),) + offset], 0, 1)
                crop = (slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(padding, spatial))
                dx = dxp[crop]
            return dw, dx

        return _gather_results(map_ordered(backward_chunk, chunks), need_x, need_w, wd.shape)

    return out, backward_chunks


def _shift_windows(ksize, padding, spatial, out_sp):
    """For each kernel offset: (offset, output slices, input slices) of the valid overlap."""
    plan = []
    for offset in itertools.product(*(range(k) for k in ksize)):
        out_sl, in_sl = [], []
        for o, p, s, m in zip(offset, padding, spatial, out_sp):
            lo = max(0, p - o)
            hi = min(m, s + p - o)
            out_sl.append(slice(lo, hi))
            in_sl.append(slice(lo + o - p, hi + o - p))
        if all(sl.stop > sl.start for sl in out_sl):
            plan.append((offset, tuple(out_sl), tuple(in_sl)))
    return plan


def _shift_conv(xd, wd, ksize, stride, padding, out_sp, dtype):
    """Stride-1 convolution as one matmul per sample followed by shifted adds."""
    n, cin = xd.shape[:2]
    cout = wd.shape[0]
    spatial = xd.shape[2:]
    nd = len(ksize)
    k_total = int(np.prod(ksize))
    n_in = int(np.prod(spatial))
    # (cout, cin, *k) -> (cout * K, cin)
    wk = np.moveaxis(wd, 1, -1).reshape(cout * k_total, cin)
    plan = _shift_windows(ksize, padding, spatial, out_sp)
    chunks = _chunks(n, cout * k_total * n_in * xd.itemsize)
    lead = (slice(None), slice(None))

    def forward_chunk(bounds):
        i0, i1 = bounds
        m = i1 - i0
        z = np.matmul(wk, xd[i0:i1].reshape(m, cin, n_in)).reshape((m, cout) + tuple(ksize) + spatial)
        if k_total == 1 and out_sp == spatial:
            return z.reshape((m, cout) + out_sp)
        y = np.zeros((m, cout) + out_sp, dtype=dtype)
        for offset, out_sl, in_sl in plan:
            y[lead + out_sl] += z[lead + offset + in_sl]
        return y

    out = np.empty((n, cout) + out_sp, dtype=dtype)
    for (i0, i1), y in zip(chunks, map_ordered(forward_chunk, chunks)):
        out[i0:i1] = y

    def backward_chunks(g, need_x, need_w):
        def backward_chunk(bounds):
            i0, i1 = bounds
            m = i1 - i0
            dz = np.zeros((m, cout) + tuple(ksize) + spatial, dtype=dtype)
            for offset, out_sl, in_sl in plan:
                dz[lead + offset + in_sl] = g[(slice(i0, i1), slice(None)) + out_sl]
            dz = dz.reshape(m, cout * k_total, n_in)
            dw = dx = None
            if need_w:
                xs = xd[i0:i1].reshape(m, cin, n_in)
                dw = np.matmul(dz, xs.transpose(0, 2, 1)).sum(axis=0)
                dw = np.moveaxis(dw.reshape((cout,) + tuple(ksize) + (cin,)), -1, 1)
            if need_x:
                dx = np.matmul(wk.T, dz).reshape((m, cin) + spatial)
            return dw, dx

        return _gather_results(map_ordered(backward_chunk, chunks), need_x, need_w, wd.shape)

    return out, backward_chunks


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation of ``(N, Cin, H, W)`` with ``(Cout, Cin, kH, kW)``.

    Output extent per axis is ``floor((H + 2*padding - kH) / stride) + 1``.
    """
    return _convnd(x, weight, bias, stride, padding, 2, "conv2d")


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    """3-D cross-correlation over ``(N, Cin, D, H, W)``; padding may differ per axis."""
    return _convnd(x, weight, bias, stride, padding, 3, "conv3d")


# ---------------------------------------------------------------------------
# pooling with indices


@dataclass(frozen=True)
class IndexMap:
    """Argmax positions recorded by :func:`maxpool2d_with_indices`.

    ``indices[n, c, i, j]`` is the flat ``row * W + col`` position, in the
    unpadded ``input_shape`` plane, of the maximum of window ``(i, j)``.
    ``padded`` notes whether an odd extent was padded with -inf.
    """

    indices: np.ndarray
    input_shape: tuple
    padded: bool = False


def maxpool2d_with_indices(x: Tensor):
    """2x2/stride-2 max pooling that also returns the argmax locations.

    Ties go to the smallest flat input index.
    """
    if x.ndim != 4:
        raise ConfigurationError(f"maxpool2d expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    d = x.data
    ph, pw = h % 2, w % 2
    if ph or pw:
        d = np.pad(d, [(0, 0), (0, 0), (0, ph), (0, pw)], constant_values=-np.inf)
    h2, w2 = d.shape[2] // 2, d.shape[3] // 2
    win = d.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    k = win.argmax(axis=-1)
    values = np.take_along_axis(win, k[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(h2)[:, None] + k // 2
    cols = 2 * np.arange(w2)[None, :] + k % 2
    flat = (rows * w + cols).astype(np.int64)
    index_map = IndexMap(flat, (h, w), bool(ph or pw))

    def backward(g):
        gx = np.zeros((n, c, h * w), dtype=g.dtype)
        np.put_along_axis(gx, flat.reshape(n, c, -1), g.reshape(n, c, -1), axis=2)
        return (gx.reshape(n, c, h, w),)

    return make_result(values, (x,), backward, "maxpool2d"), index_map


def max_unpool2d(x: Tensor, indices: IndexMap, out_shape: Optional[Sequence[int]] = None) -> Tensor:
    """Sparse up-sampling: scatter ``x`` to the recorded argmax positions."""
    h, w = tuple(out_shape)[-2:] if out_shape is not None else indices.input_shape
    if indices.indices.shape != x.shape:
        raise IntegrityError(f"index map shape {indices.indices.shape} does not match input {x.shape}")
    idx = indices.indices
    if idx.size and (idx.min() < 0 or idx.max() >= h * w):
        raise IntegrityError(f"pooling indices fall outside the {h}x{w} target")
    n, c = x.shape[:2]
    flat = idx.reshape(n, c, -1)
    out = np.zeros((n, c, h * w), dtype=x.dtype)
    np.put_along_axis(out, flat, x.data.reshape(n, c, -1), axis=2)

    def backward(g):
        return (np.take_along_axis(g.reshape(n, c, -1), flat, axis=2).reshape(x.shape),)

    return make_result(out.reshape(n, c, h, w), (x,), backward, "max_unpool2d")


# ---------------------------------------------------------------------------
# resampling


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic ``(n_out, n_in)`` linear-interpolation weights.

    Samples at cell centres (align-corners false); sources left of the
    first centre clamp to it.
    """
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    """0/1 selection matrix; output ``i`` copies input ``floor(i * n_in / n_out)``."""
    m = np.zeros((n_out, n_in))
    src = np.minimum((np.arange(n_out) * n_in) // n_out, n_in - 1)
    m[np.arange(n_out), src] = 1.0
    return m


def resample_separable(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply ``rows @ plane @ cols.T`` to every trailing 2-D plane of ``x``.

    Matrices may also carry a leading batch axis, ``(N, oh, H)``, giving each
    sample of an ``(N, C, H, W)`` input its own resampling.
    """
    r = np.asarray(rows, dtype=x.dtype)
    c = np.asarray(cols, dtype=x.dtype)
    if r.shape[-1] != x.shape[-2] or c.shape[-1] != x.shape[-1]:
        raise ConfigurationError(
            f"resampling matrices {r.shape}/{c.shape} do not fit a {x.shape[-2]}x{x.shape[-1]} plane"
        )
    for m in (r, c):
        if m.ndim == 3 and m.shape[0] != x.shape[0]:
            raise ConfigurationError(f"per-sample matrices for {m.shape[0]} samples, batch has {x.shape[0]}")
    pad = (slice(None),) + (None,) * (x.ndim - 3)
    r = r[pad] if r.ndim == 3 else r
    c = c[pad] if c.ndim == 3 else c
    rt, ct = np.swapaxes(r, -1, -2), np.swapaxes(c, -1, -2)
    out = np.matmul(np.matmul(r, x.data), ct)

    def backward(g):
        return (np.matmul(np.matmul(rt, g), c),)

    return make_result(out, (x,), backward, "resample")


def upsample(x: Tensor, factor: Optional[int] = None, size: Optional[Sequence[int]] = None, mode: str = "nearest") -> Tensor:
    """Resize the last two axes by an integer ``factor`` or to ``size``."""
    h, w = x.shape[-2:]
    if size is None:
        if factor is None:
            raise ConfigurationError("upsample needs a factor or a target size")
        size = (h * int(factor), w * int(factor))
    oh, ow = (int(s) for s in size)
    if mode == "nearest":
        if oh % h == 0 and ow % w == 0 and oh // h == ow // w:
            return _repeat_nearest(x, oh // h)
        return resample_separable(x, nearest_matrix(h, oh), nearest_matrix(w, ow))
    if mode == "bilinear":
        if (oh, ow) == (h, w):
            return x
        return resample_separable(x, bilinear_matrix(h, oh), bilinear_matrix(w, ow))
    raise ConfigurationError(f"unknown upsampling mode {mode!r}")


def _repeat_nearest(x: Tensor, f: int) -> Tensor:
    if f == 1:
        return x
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    d = x.data.reshape(lead + (h, 1, w, 1))
    out = np.broadcast_to(d, lead + (h, f, w, f)).reshape(lead + (h * f, w * f))

    def backward(g):
        return (g.reshape(lead + (h, f, w, f)).sum(axis=(-3, -1)),)

    return make_result(out, (x,), backward, "upsample_nearest")


# ---------------------------------------------------------------------------
# fusion and activations


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 1; other extents must agree."""
    inputs = list(inputs)
    if not inputs:
        raise ConfigurationError("concat_channels needs at least one input")
    if len(inputs) == 1:
        return inputs[0]
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or t.shape[:1] + t.shape[2:] != ref[:1] + ref[2:]:
            raise ConfigurationError(f"concat_channels: {t.shape} incompatible with {ref}")
    splits = np.cumsum([t.shape[1] for t in inputs])[:-1]
    out = np.concatenate([t.data for t in inputs], axis=1)

    def backward(g):
        return tuple(np.split(g, splits, axis=1))

    return make_result(out, inputs, backward, "concat")


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    """Pixelwise sum of a block output and its input (identical shapes only)."""
    if a.shape != b.shape:
        raise ConfigurationError(f"residual_add: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "residual_add")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.maximum(x.data, 0), (x,), lambda g: (g * mask,), "relu")


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over the batch and spatial axes.

    In training mode the batch moments are used and the running buffers are
    updated in place (unbiased variance); in eval mode the buffers are used.
    """
    d = x.data
    n, c = d.shape[:2]
    m = d.size // c
    flat = d.reshape(n, c, -1)
    if training:
        mean = flat.sum(axis=2).sum(axis=0) / m
        xc = flat - mean[:, None]
        var = np.einsum("ncp,ncp->c", xc, xc) / m
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean.astype(d.dtype), running_var
        xc = flat - mean[:, None]
    inv_std = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    gam = gamma.data
    out = xc * (gam * inv_std)[:, None]
    out += beta.data[:, None]

    def backward(g):
        gf = g.reshape(n, c, -1)
        g_sum = gf.sum(axis=2).sum(axis=0)
        gxc = np.einsum("ncp,ncp->c", gf, xc)
        dgamma = gxc * inv_std
        scale = gam * inv_std
        if training:
            dx = gf * scale[:, None]
            dx += xc * (-scale * inv_std * inv_std * gxc / m)[:, None]
            dx -= (scale * g_sum / m)[:, None]
        else:
            dx = gf * scale[:, None]
        return dx.reshape(d.shape), dgamma, g_sum

    return make_result(out.reshape(d.shape), (x, gamma, beta), backward, "batchnorm")


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_value: Optional[int] = NO_DATA) -> Tensor:
    """Mean negative log-softmax over the non-ignored pixels.

    ``logits`` is ``(N, C, *spatial)`` and ``labels`` ``(N, *spatial)``. If
    every pixel is ignored the loss is 0 with zero gradient.
    """
    labels = np.asarray(labels).astype(np.int64)
    n_classes = logits.shape[1]
    if labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise ConfigurationError(f"labels {labels.shape} do not match logits {logits.shape}")
    valid = labels != ignore_value if ignore_value is not None else np.ones(labels.shape, dtype=bool)
    target = np.where(valid, labels, 0)
    if target.size and (target.min() < 0 or target.max() >= n_classes):
        raise ConfigurationError(f"labels outside [0, {n_classes}) that are not the ignore value")
    count = int(valid.sum())

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = np.take_along_axis(logp, target[:, None], axis=1)[:, 0]
    dtype = logits.dtype
    loss = -(picked * valid).sum() / count if count else 0.0
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite cross-entropy")

    def backward(g):
        if not count:
            return (np.zeros_like(logits.data),)
        p = np.exp(logp)
        np.put_along_axis(p, target[:, None], np.take_along_axis(p, target[:, None], axis=1) - 1.0, axis=1)
        p *= valid[:, None]
        return (p * (g / count),)

    return make_result(np.asarray(loss, dtype=dtype), (logits,), backward, "softmax_cross_entropy")
