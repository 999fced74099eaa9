"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the Siamese network needs are provided: convolution,
relu, max pooling, flatten, affine maps, concatenation, slicing, and the
elementwise/reduction ops used by the loss. Gradients accumulate by
summation, so parameters shared between branches receive the sum of both
branch contributions.
"""

from __future__ import annotations

import numpy as np

_SQRT_GRAD_FLOOR = 1e-12


class Tensor:
    """N-dimensional value with an optional gradient slot."""

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, output_gradient=None) -> None:
        """Reverse-mode sweep from this tensor.

        A second sweep without a fresh forward pass is rejected, since the
        recorded graph has already been consumed.
        """
        if self._backward_done:
            raise RuntimeError("backward already ran on this graph; rerun forward first")
        if output_gradient is None:
            if self.data.size != 1:
                raise ValueError("output_gradient is required for non-scalar tensors")
            output_gradient = np.ones_like(self.data)

        order = []
        seen = set()

        def visit(t: Tensor):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        self._accumulate(np.asarray(output_gradient, dtype=np.float64))
        for t in reversed(order):
            t._backward_done = True
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # ---- elementwise / reductions ----

    def __add__(self, other: "Tensor") -> "Tensor":
        def bw(g):
            self._accumulate(g)
            other._accumulate(g)

        return Tensor(self.data + other.data, _parents=(self, other), _backward=bw)

    def __sub__(self, other: "Tensor") -> "Tensor":
        def bw(g):
            self._accumulate(g)
            other._accumulate(-g)

        return Tensor(self.data - other.data, _parents=(self, other), _backward=bw)

    def __mul__(self, other: "Tensor") -> "Tensor":
        def bw(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        return Tensor(self.data * other.data, _parents=(self, other), _backward=bw)

    def scale(self, c: float) -> "Tensor":
        def bw(g):
            self._accumulate(g * c)

        return Tensor(self.data * c, _parents=(self,), _backward=bw)

    def square(self) -> "Tensor":
        def bw(g):
            self._accumulate(g * 2.0 * self.data)

        return Tensor(self.data**2, _parents=(self,), _backward=bw)

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)

        def bw(g):
            self._accumulate(g * 0.5 / np.maximum(out, _SQRT_GRAD_FLOOR))

        return Tensor(out, _parents=(self,), _backward=bw)

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]

        def bw(g):
            if axis is None:
                self._accumulate(np.full_like(self.data, float(g) / n))
            else:
                self._accumulate(np.expand_dims(g, axis) / n * np.ones_like(self.data))

        return Tensor(self.data.mean(axis=axis), _parents=(self,), _backward=bw)

    def sum(self, axis=None) -> "Tensor":
        def bw(g):
            if axis is None:
                self._accumulate(np.full_like(self.data, float(g)))
            else:
                self._accumulate(np.expand_dims(g, axis) * np.ones_like(self.data))

        return Tensor(self.data.sum(axis=axis), _parents=(self,), _backward=bw)

    def relu(self) -> "Tensor":
        mask = self.data > 0

        def bw(g):
            self._accumulate(g * mask)

        return Tensor(np.maximum(self.data, 0.0), _parents=(self,), _backward=bw)

    # ---- shape ops ----

    def reshape(self, *shape) -> "Tensor":
        old = self.data.shape

        def bw(g):
            self._accumulate(g.reshape(old))

        return Tensor(self.data.reshape(*shape), _parents=(self,), _backward=bw)

    def flatten_batch(self) -> "Tensor":
        """Row-major flatten of everything but the leading batch axis."""
        return self.reshape(self.data.shape[0], -1)

    def slice_cols(self, start: int, stop: int) -> "Tensor":
        def bw(g):
            full = np.zeros_like(self.data)
            full[:, start:stop] = g
            self._accumulate(full)

        return Tensor(self.data[:, start:stop], _parents=(self,), _backward=bw)


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along the feature axis."""
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(a, b)
            t._accumulate(g[tuple(idx)])

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=bw,
    )


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias with weight shaped [out_features, in_features]."""
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"affine shape mismatch: input {x.data.shape}, weight {weight.data.shape}"
        )

    def bw(g):
        x._accumulate(g @ weight.data)
        weight._accumulate(g.T @ x.data)
        bias._accumulate(g.sum(axis=0))

    return Tensor(
        x.data @ weight.data.T + bias.data,
        _parents=(x, weight, bias),
        _backward=bw,
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation convolution.

    x: [B, C, H, W]; weight: [F, C, kh, kw]; bias: [F].
    """
    b, c, h, w = x.data.shape
    f, cw, kh, kw = weight.data.shape
    if c != cw:
        raise ValueError(
            f"conv2d channel mismatch: input {x.data.shape}, weight {weight.data.shape}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output would be empty for input {x.data.shape}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # [B, C, Ho, Wo, kh, kw]
    out = np.einsum("bchwij,fcij->bfhw", windows, weight.data, optimize=True) + bias.data[
        None, :, None, None
    ]

    def bw(g):
        weight._accumulate(np.einsum("bfhw,bchwij->fcij", g, windows, optimize=True))
        bias._accumulate(g.sum(axis=(0, 2, 3)))
        dcol = np.einsum("bfhw,fcij->bchwij", g, weight.data, optimize=True)
        dxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += dcol[
                    :, :, :, :, i, j
                ]
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        x._accumulate(dxp)

    return Tensor(out, _parents=(x, weight, bias), _backward=bw)


def maxpool2d(x: Tensor, window: int) -> Tensor:
    """Window max with stride = window; trailing rows/cols are dropped."""
    b, c, h, w = x.data.shape
    ho, wo = h // window, w // window
    if ho == 0 or wo == 0:
        raise ValueError(f"maxpool window {window} larger than input {x.data.shape}")
    cropped = x.data[:, :, : ho * window, : wo * window]
    tiles = cropped.reshape(b, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    tiles = tiles.reshape(b, c, ho, wo, window * window)
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        dt = np.zeros((b, c, ho, wo, window * window))
        np.put_along_axis(dt, idx[..., None], g[..., None], axis=-1)
        dt = dt.reshape(b, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros_like(x.data)
        dx[:, :, : ho * window, : wo * window] = dt.reshape(b, c, ho * window, wo * window)
        x._accumulate(dx)

    return Tensor(out, _parents=(x,), _backward=bw)
