"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors form a DAG; backward() topologically sorts it and accumulates
gradients. Fused primitives (softmax, log-softmax, layer norm, im2col,
embedding) carry hand-derived backward rules; everything else composes from
elementwise ops and (batched) matmul.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to the given (broadcast-source) shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), _as_tensor(-1.0)))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data, dtype=g.dtype)
    t.grad += g


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a.shape))
        _accum(b, _unbroadcast(gb, b.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return Tensor(out_data, parents=(a,), backward=backward)


def transpose(a: Tensor, axes) -> Tensor:
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, np.transpose(g, inv))

    return Tensor(out_data, parents=(a,), backward=backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(a,), backward=backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return Tensor(out_data, parents=(a,), backward=backward)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; mask entries equal to 0 are excluded
    (they receive zero probability). mask broadcasts against a."""
    logits = a.data
    if mask is not None:
        logits = np.where(mask, logits, -1e30)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(a, (g - inner) * out_data)

    return Tensor(out_data, parents=(a,), backward=backward)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        _accum(a, g - np.exp(out_data) * g.sum(axis=-1, keepdims=True))

    return Tensor(out_data, parents=(a,), backward=backward)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def backward(g):
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return Tensor(out_data, parents=(a,), backward=backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.shape).copy())

    return Tensor(out_data, parents=(a,), backward=backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, (dxhat - m1 - xhat * m2) * inv)

    return Tensor(out_data, parents=(x, gain, bias), backward=backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    out_data = table.data[ids]

    def backward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data, dtype=g.dtype)
        np.add.at(table.grad, ids.reshape(-1),
                  g.reshape(-1, g.shape[-1]))

    return Tensor(out_data, parents=(table,), backward=backward)


def im2col(x: Tensor, ksize: int, stride: int, pad: int) -> Tensor:
    """[B, C, H, W] -> [B, OH*OW, C*k*k] patch matrix for matmul convolution."""
    b, c, h, w = x.shape
    oh = (h + 2 * pad - ksize) // stride + 1
    ow = (w + 2 * pad - ksize) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"im2col: image {h}x{w} too small for k={ksize}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # row/col gather indices, shape [OH*OW, k*k]
    base_r = (np.arange(oh) * stride)[:, None, None, None]
    base_c = (np.arange(ow) * stride)[None, :, None, None]
    off_r = np.arange(ksize)[None, None, :, None]
    off_c = np.arange(ksize)[None, None, None, :]
    rr = np.broadcast_to(base_r + off_r, (oh, ow, ksize, ksize)).reshape(-1, ksize * ksize)
    cc = np.broadcast_to(base_c + off_c, (oh, ow, ksize, ksize)).reshape(-1, ksize * ksize)
    patches = xp[:, :, rr, cc]                      # [B, C, P, k*k]
    out_data = patches.transpose(0, 2, 1, 3).reshape(b, oh * ow, c * ksize * ksize)

    def backward(g):
        if not x.requires_grad:
            return
        gp = g.reshape(b, oh * ow, c, ksize * ksize).transpose(0, 2, 1, 3)
        gx = np.zeros_like(xp, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), rr, cc), gp)
        if pad:
            gx = gx[:, :, pad:-pad, pad:-pad]
        _accum(x, gx)

    return Tensor(out_data, parents=(x,), backward=backward)


def conv_out_hw(h: int, w: int, ksize: int, stride: int, pad: int) -> tuple[int, int]:
    return ((h + 2 * pad - ksize) // stride + 1,
            (w + 2 * pad - ksize) // stride + 1)


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            train: bool) -> Tensor:
    if not train or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))
