"""Differentiable operations on :class:`~sepstereo.tensor.Tensor`.

Spatial ops take unbatched ``[C, H, W]`` inputs. Batching is an outer loop
with gradient accumulation.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

__all__ = [
    "add", "sub", "mul", "scale", "relu", "leaky_relu", "concat", "take",
    "reshape", "transpose", "matmul", "linear", "tile_spatial", "embed_cells",
    "max_pool_spatial_full", "max_over_time", "max_pool2d", "mse_sum", "sum_all",
    "complex_mul", "conv2d", "deconv2d", "conv1x1_dynamic", "conv_output_size",
    "deconv_output_size", "KinkTape",
]


class KinkTape:
    """Records the branch taken by every ReLU / max op, in call order.

    While replaying, those ops reuse the recorded masks and argmax indices, so
    the network becomes the smooth function that agrees with the original one
    around the recorded point. Finite differences on it never straddle a kink.
    """

    def __init__(self) -> None:
        self.decisions: list[np.ndarray] = []
        self._cursor: int | None = None

    @contextmanager
    def recording(self) -> Iterator["KinkTape"]:
        global _TAPE
        self.decisions, self._cursor, prev, _TAPE = [], None, _TAPE, self
        try:
            yield self
        finally:
            _TAPE = prev

    @contextmanager
    def replaying(self) -> Iterator["KinkTape"]:
        global _TAPE
        self._cursor, prev, _TAPE = 0, _TAPE, self
        try:
            yield self
            if self._cursor != len(self.decisions):
                raise RuntimeError(f"replayed {self._cursor} of {len(self.decisions)} recorded kink decisions")
        finally:
            self._cursor, _TAPE = None, prev

    def decide(self, fresh: np.ndarray) -> np.ndarray:
        if self._cursor is None:
            self.decisions.append(fresh)
            return fresh
        if self._cursor >= len(self.decisions):
            raise RuntimeError("kink replay ran past the recorded forward pass")
        rec = self.decisions[self._cursor]
        if rec.shape != fresh.shape:
            raise RuntimeError(f"kink replay shape mismatch {rec.shape} vs {fresh.shape}")
        self._cursor += 1
        return rec


_TAPE: KinkTape | None = None


def _decide(fresh: np.ndarray) -> np.ndarray:
    return fresh if _TAPE is None else _TAPE.decide(fresh)


def _check_same(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def backward(g):
        a._accumulate(g * c)

    return Tensor._result(a.data * c, (a,), backward, "scale")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = _decide(x.data > 0)
    slope = x.data.dtype.type(slope)

    def backward(g):
        x._accumulate(np.where(pos, g, g * slope))

    return Tensor._result(np.where(pos, x.data, x.data * slope), (x,), backward, "leaky_relu")


def relu(x: Tensor) -> Tensor:
    pos = _decide(x.data > 0)

    def backward(g):
        x._accumulate(g * pos)

    return Tensor._result(x.data * pos, (x,), backward, "relu")


# ------------------------------------------------------------------ structure

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: nothing to concatenate")
    ndim = tensors[0].data.ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"concat: invalid axis {axis} for {ndim}-d tensors")
    axis %= ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ValueError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat"
    )


def take(x: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one slice along ``axis`` (that axis is dropped)."""

    def backward(g):
        full = np.zeros_like(x.data)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        x._accumulate(full)

    return Tensor._result(np.take(x.data, index, axis=axis).copy(), (x,), backward, "take")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor._result(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        x._accumulate(np.transpose(g, inverse))

    return Tensor._result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), backward, "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``w @ x + b`` for a vector ``x`` of shape ``[in]`` and ``w`` of ``[out, in]``."""
    if x.data.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ValueError(f"linear: incompatible shapes {w.shape} @ {x.shape}")
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            x._accumulate(w.data.T @ g)
        if w.requires_grad:
            w._accumulate(np.outer(g, x.data))
        if b is not None and b.requires_grad:
            b._accumulate(g)

    out = w.data @ x.data
    if b is not None:
        out = out + b.data
    return Tensor._result(out, parents, backward, "linear")


def tile_spatial(v: Tensor, height: int, width: int) -> Tensor:
    """Broadcast a ``[C]`` vector over a ``[C, height, width]`` grid."""
    if v.data.ndim != 1:
        raise ValueError("tile_spatial expects a vector")

    def backward(g):
        v._accumulate(g.sum(axis=(1, 2)))

    out = np.broadcast_to(v.data[:, None, None], (v.shape[0], height, width)).copy()
    return Tensor._result(out, (v,), backward, "tile_spatial")


def embed_cells(vectors: Sequence[Tensor], cells: Sequence[tuple[int, int]], height: int, width: int) -> Tensor:
    """All-zero ``[C, height, width]`` map with ``vectors[i]`` written at ``cells[i] = (row, col)``."""
    c = vectors[0].shape[0]
    for v in vectors:
        if v.shape != (c,):
            raise ValueError(f"embed_cells: vector shape {v.shape} != ({c},)")
    if len(set(cells)) != len(cells):
        raise ValueError("embed_cells: duplicate target cells")
    out = np.zeros((c, height, width), dtype=vectors[0].data.dtype)
    for v, (r, col) in zip(vectors, cells):
        out[:, r, col] = v.data

    def backward(g):
        for v, (r, col) in zip(vectors, cells):
            if v.requires_grad:
                v._accumulate(g[:, r, col])

    return Tensor._result(out, tuple(vectors), backward, "embed_cells")


# ------------------------------------------------------------------ reductions

def _argmax_first(flat: np.ndarray, axis: int) -> np.ndarray:
    # np.argmax already returns the lowest index on ties
    return np.argmax(flat, axis=axis)


def max_pool_spatial_full(x: Tensor) -> Tensor:
    """``[C, H, W] -> [C]`` maximum over all spatial cells."""
    c = x.shape[0]
    flat = x.data.reshape(c, -1)
    idx = _decide(_argmax_first(flat, axis=1))

    def backward(g):
        gx = np.zeros_like(flat)
        gx[np.arange(c), idx] = g
        x._accumulate(gx.reshape(x.shape))

    return Tensor._result(flat[np.arange(c), idx].copy(), (x,), backward, "max_pool_spatial_full")


def max_over_time(x: Tensor) -> Tensor:
    """``[T, ...] -> [...]`` maximum over the leading axis."""
    idx = _decide(_argmax_first(x.data, axis=0))
    out = np.take_along_axis(x.data, idx[None], axis=0)[0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[None], g[None], axis=0)
        x._accumulate(gx)

    return Tensor._result(out, (x,), backward, "max_over_time")


def max_pool2d(x: Tensor, kh: int, kw: int) -> Tensor:
    """Non-overlapping ``kh x kw`` max pooling on ``[C, H, W]``; H, W must divide."""
    c, h, w = x.shape
    if h % kh or w % kw:
        raise ValueError(f"max_pool2d: {h}x{w} not divisible by {kh}x{kw}")
    blocks = x.data.reshape(c, h // kh, kh, w // kw, kw).transpose(0, 1, 3, 2, 4).reshape(c, h // kh, w // kw, kh * kw)
    idx = _decide(np.argmax(blocks, axis=-1))
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(c, h // kh, w // kw, kh, kw).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        x._accumulate(gx)

    return Tensor._result(out, (x,), backward, "max_pool2d")


def mse_sum(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared differences, as a 1-element tensor."""
    _check_same(a, b, "mse_sum")
    diff = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(2 * g[0] * diff)
        if b.requires_grad:
            b._accumulate(-2 * g[0] * diff)

    return Tensor._result(np.array([np.sum(diff * diff)], dtype=diff.dtype), (a, b), backward, "mse_sum")


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.full_like(x.data, g[0]))

    return Tensor._result(np.array([x.data.sum()], dtype=x.data.dtype), (x,), backward, "sum_all")


def complex_mul(a: Tensor, b: Tensor) -> Tensor:
    """Per-bin complex product of ``[2, ...]`` real/imag stacks."""
    _check_same(a, b, "complex_mul")
    if a.shape[0] != 2:
        raise ValueError("complex_mul expects a leading real/imag axis of size 2")
    ar, ai = a.data
    br, bi = b.data
    out = np.stack([ar * br - ai * bi, ar * bi + ai * br])

    def backward(g):
        gr, gi = g
        # d/da of Re<g, a*b> is g * conj(b)
        if a.requires_grad:
            a._accumulate(np.stack([gr * br + gi * bi, gi * br - gr * bi]))
        if b.requires_grad:
            b._accumulate(np.stack([gr * ar + gi * ai, gi * ar - gr * ai]))

    return Tensor._result(out, (a, b), backward, "complex_mul")


# ---------------------------------------------------------------- convolution

def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def deconv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + k


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """``[C, Hp, Wp] -> [C, kh, kw, ho, wo]`` strided view of all patches."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # C, Hp-kh+1, Wp-kw+1, kh, kw
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 3, 4, 1, 2)


def _col2im(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add ``[C, kh, kw, ho, wo]`` onto ``[C, hp, wp]``."""
    c, kh, kw, ho, wo = cols.shape
    out = np.zeros((c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, i, j]
    return out


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _unpad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, pad:-pad, pad:-pad]


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x [C_in, H, W]`` with ``k [C_out, C_in, kh, kw]``."""
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ValueError(f"conv2d: expected [C,H,W] and [O,C,kh,kw], got {x.shape}, {k.shape}")
    cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ValueError(f"conv2d: kernel expects {kcin} input channels, got {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if ho <= 0 or wo <= 0 or h + 2 * pad < kh or w + 2 * pad < kw:
        raise ValueError(f"conv2d: zero-size output for input {x.shape} and kernel {k.shape}")
    xp = _pad(x.data, pad)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(k.data, cols, axes=([1, 2, 3], [0, 1, 2]))
    if bias is not None:
        out += bias.data[:, None, None]
    parents = (x, k) if bias is None else (x, k, bias)

    def backward(g):
        if k.requires_grad:
            k._accumulate(np.tensordot(g, cols, axes=([1, 2], [3, 4])))
        if x.requires_grad:
            gcols = np.tensordot(k.data, g, axes=([0], [0]))  # C_in, kh, kw, ho, wo
            x._accumulate(_unpad(_col2im(gcols, *xp.shape[1:], stride), pad))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2)))

    return Tensor._result(out, parents, backward, "conv2d")


def deconv2d(x: Tensor, k: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution of ``x [C_in, H, W]`` with ``k [C_in, C_out, kh, kw]``.

    Forward equals the input-gradient of :func:`conv2d` with the same kernel.
    """
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ValueError(f"deconv2d: expected [C,H,W] and [C,O,kh,kw], got {x.shape}, {k.shape}")
    cin, h, w = x.shape
    kcin, cout, kh, kw = k.shape
    if kcin != cin:
        raise ValueError(f"deconv2d: kernel expects {kcin} input channels, got {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"deconv2d: bias shape {bias.shape} != ({cout},)")
    ho = deconv_output_size(h, kh, stride, pad)
    wo = deconv_output_size(w, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"deconv2d: zero-size output for input {x.shape} and kernel {k.shape}")
    hp, wp = (h - 1) * stride + kh, (w - 1) * stride + kw
    cols = np.tensordot(k.data, x.data, axes=([0], [0]))  # C_out, kh, kw, H, W
    out = np.ascontiguousarray(_unpad(_col2im(cols, hp, wp, stride), pad))
    if bias is not None:
        out += bias.data[:, None, None]
    parents = (x, k) if bias is None else (x, k, bias)

    def backward(g):
        gcols = _im2col(_pad(g, pad), kh, kw, stride, h, w)  # C_out, kh, kw, H, W
        if x.requires_grad:
            x._accumulate(np.tensordot(k.data, gcols, axes=([1, 2, 3], [0, 1, 2])))
        if k.requires_grad:
            k._accumulate(np.tensordot(x.data, gcols, axes=([1, 2], [3, 4])))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2)))

    return Tensor._result(out, parents, backward, "deconv2d")


def conv1x1_dynamic(x: Tensor, kernels: Tensor) -> Tensor:
    """``out[n] = sum_c kernels[n, c] * x[c]``; kernels are data, so both inputs get gradients."""
    if x.data.ndim != 3 or kernels.data.ndim != 2:
        raise ValueError(f"conv1x1_dynamic: expected [C,H,W] and [N,C], got {x.shape}, {kernels.shape}")
    if kernels.shape[1] != x.shape[0]:
        raise ValueError(f"conv1x1_dynamic: kernels have {kernels.shape[1]} channels, input has {x.shape[0]}")
    out = np.tensordot(kernels.data, x.data, axes=([1], [0]))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.tensordot(kernels.data, g, axes=([0], [0])))
        if kernels.requires_grad:
            kernels._accumulate(np.tensordot(g, x.data, axes=([1, 2], [1, 2])))

    return Tensor._result(out, (x, kernels), backward, "conv1x1_dynamic")
