"""Minimal CNN layer zoo with explicit forward/backward passes.

Everything is channels-last (H, W, C) on a single image; there is no batch
axis because segmentation frames are trained one at a time. Convolutions use
im2col + one GEMM; the column matrix is rebuilt during backward instead of
cached, trading a second copy for a much smaller working set.
"""

from __future__ import annotations

import numpy as np


class Layer:
    def params(self):
        return []

    def forward(self, x, train_mode=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2D(Layer):
    """Same-padded k x k convolution, Kaiming-normal initialized for ReLU.

    3x3 kernels run as nine GEMMs over contiguous offset views of the
    flattened zero-padded image. The flat view wraps two garbage columns
    per row into the output grid; those land on the two padding columns,
    which are cropped (forward) or zero-filled (backward), so no input
    copies are ever made.
    """

    def __init__(self, c_in, c_out, ksize=3, rng=None, dtype=np.float32):
        if ksize not in (1, 3):
            raise ValueError("only 1x1 and 3x3 kernels are supported")
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * ksize * ksize
        self.ksize = ksize
        self.c_in, self.c_out = c_in, c_out
        self.w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (ksize * ksize * c_in, c_out)).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]

    def _flat_pad(self, x):
        # pad one ring plus two spare bottom rows so every offset view stays in range
        h, w, c = x.shape
        xp = np.zeros((h + 3, w + 2, c), dtype=x.dtype)
        xp[1:h + 1, 1:w + 1] = x
        return xp.reshape(-1, c)

    def forward(self, x, train_mode=False, rng=None):
        if x.shape[2] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {x.shape[2]}")
        h, w = x.shape[:2]
        self._x = x
        if self.ksize == 1:
            y = x.reshape(h * w, self.c_in) @ self.w + self.b
            return y.reshape(h, w, self.c_out)
        wp = w + 2
        xflat = self._flat_pad(x)
        self._xflat = xflat
        n = h * wp
        c = self.c_in
        y = np.tile(self.b, (n, 1))
        for k in range(9):
            off = (k // 3) * wp + (k % 3)
            y += xflat[off:off + n] @ self.w[k * c:(k + 1) * c]
        return y.reshape(h, wp, self.c_out)[:, :w]

    def backward(self, dy):
        h, w = dy.shape[:2]
        if self.ksize == 1:
            dyf = dy.reshape(h * w, self.c_out)
            self.dw[...] = self._x.reshape(h * w, self.c_in).T @ dyf
            self.db[...] = dyf.sum(axis=0)
            return (dyf @ self.w.T).reshape(h, w, self.c_in)
        wp = w + 2
        n = h * wp
        c = self.c_in
        dgrid = np.zeros((h, wp, self.c_out), dtype=dy.dtype)
        dgrid[:, :w] = dy
        dyf = dgrid.reshape(n, self.c_out)
        self.db[...] = dy.sum(axis=(0, 1))
        xflat = self._xflat
        dxflat = np.zeros_like(xflat)
        for k in range(9):
            off = (k // 3) * wp + (k % 3)
            view = xflat[off:off + n]
            self.dw[k * c:(k + 1) * c] = view.T @ dyf
            dxflat[off:off + n] += dyf @ self.w[k * c:(k + 1) * c].T
        return dxflat.reshape(h + 3, wp, c)[1:h + 1, 1:w + 1]


class ReLU(Layer):
    def forward(self, x, train_mode=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPool2(Layer):
    """2x2 max pooling; input sides must be even."""

    def forward(self, x, train_mode=False, rng=None):
        h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError("pooled input must have even sides")
        quads = x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h // 2, w // 2, 4, c)
        self._argmax = quads.argmax(axis=2)
        self._shape = (h, w, c)
        return np.take_along_axis(quads, self._argmax[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dy):
        h, w, c = self._shape
        dquads = np.zeros((h // 2, w // 2, 4, c), dtype=dy.dtype)
        np.put_along_axis(dquads, self._argmax[:, :, None, :], dy[:, :, None, :], axis=2)
        return dquads.reshape(h // 2, w // 2, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)


class UpsampleNearest2(Layer):
    def forward(self, x, train_mode=False, rng=None):
        return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)

    def backward(self, dy):
        h, w, c = dy.shape
        return dy.reshape(h // 2, 2, w // 2, 2, c).sum(axis=(1, 3))


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, train_mode=False, rng=None):
        if not train_mode or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._mask = self._mask.astype(x.dtype)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


def softmax2(logits):
    """Stable 2-class softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
