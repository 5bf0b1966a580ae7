"""Layer implementations with explicit forward/backward passes.

Every layer caches what its backward pass needs on forward.  Layers that
contain non-differentiable decision points (ReLU sign, max-pool argmax,
dropout mask) expose the decision as ``kink_signature`` so the gradient
checker can exclude finite-difference probes that cross a kink.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    """Named parameter: row-major data plus a same-shape gradient buffer."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = np.ascontiguousarray(data)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base: parameter-free, kink-free layer."""

    def tensors(self) -> list[Tensor]:
        return []

    def kink_signature(self) -> bytes | None:
        return None


def _im2col(x: np.ndarray, k: int, stride: int):
    b, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, ho, wo, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


class Conv2d(Layer):
    """Cross-correlation with square kernel; padding 'same' keeps H, W at
    stride 1."""

    def __init__(self, in_channels, out_channels, kernel, *, stride=1, padding="same",
                 rng=None, dtype=np.float32, name="conv"):
        if padding == "same":
            if stride != 1:
                raise ValueError("'same' padding requires stride 1")
            if kernel % 2 == 0:
                raise ValueError("'same' padding requires an odd kernel")
            padding = (kernel - 1) // 2
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = int(padding)
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(
            f"{name}.weight",
            kaiming_uniform((out_channels, in_channels, kernel, kernel), fan_in, rng, dtype),
        )
        self.bias = Tensor(f"{name}.bias", np.zeros(out_channels, dtype=dtype))
        self._cache = None

    def tensors(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ValueError(f"conv2d expects (B, C, H, W); got {x.ndim} dims")
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"conv2d expects {self.in_channels} input channels, got {x.shape[1]} (dim 1)"
            )
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        if xp.shape[2] < self.kernel or xp.shape[3] < self.kernel:
            raise ValueError(
                f"spatial dims {x.shape[2:]} too small for kernel {self.kernel} (dims 2, 3)"
            )
        cols, ho, wo = _im2col(xp, self.kernel, self.stride)
        w2 = self.weight.data.reshape(self.out_channels, -1)
        out = np.matmul(w2, cols) + self.bias.data[:, None]
        self._cache = (cols, x.shape, xp.shape)
        return out.reshape(x.shape[0], self.out_channels, ho, wo)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cols, x_shape, xp_shape = self._cache
        b, f = dy.shape[0], self.out_channels
        ho, wo = dy.shape[2], dy.shape[3]
        dy2 = dy.reshape(b, f, ho * wo)
        self.weight.grad += (
            np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.weight.shape)
        )
        self.bias.grad += dy2.sum(axis=(0, 2))
        w2 = self.weight.data.reshape(f, -1)
        dcols = np.matmul(w2.T, dy2)  # (B, C*k*k, L)
        k, s = self.kernel, self.stride
        c = self.in_channels
        dcols = dcols.reshape(b, c, k, k, ho, wo)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki : ki + s * ho : s, kj : kj + s * wo : s] += dcols[:, :, ki, kj]
        p = self.padding
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp if dxp.shape == x_shape else dxp[:, :, : x_shape[2], : x_shape[3]]


class MaxPool2d(Layer):
    """Non-overlapping max pool (stride = kernel); trailing rows/cols that
    do not fill a window are cropped."""

    def __init__(self, kernel: int):
        self.kernel = kernel
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        k = self.kernel
        b, c, h, w = x.shape
        ho, wo = h // k, w // k
        if ho == 0 or wo == 0:
            raise ValueError(f"spatial dims {(h, w)} smaller than pool kernel {k}")
        xc = x[:, :, : ho * k, : wo * k]
        win = xc.reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._cache = (arg, x.shape)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        arg, x_shape = self._cache
        k = self.kernel
        b, c, h, w = x_shape
        ho, wo = h // k, w // k
        dwin = np.zeros((b, c, ho, wo, k * k), dtype=dy.dtype)
        np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, : ho * k, : wo * k] = (
            dwin.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
        )
        return dx

    def kink_signature(self):
        return self._cache[0].tobytes() if self._cache is not None else None


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._mask

    def kink_signature(self):
        return self._mask.tobytes() if self._mask is not None else None


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_features, out_features, *, rng=None, dtype=np.float32, name="dense"):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(
            f"{name}.weight", kaiming_uniform((in_features, out_features), in_features, rng, dtype)
        )
        self.bias = Tensor(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self._x = None

    def tensors(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.weight.grad += self._x.T @ dy
        self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.data.T


class GraphConv(Layer):
    """Polynomial graph filter Y = sum_k S^k X H_k + b.

    Forward takes node features X of shape (B, N, F_in) (or (N, F_in))
    together with the stacked shift powers (B, K+1, N, N); one tap matrix
    H_k per power.
    """

    def __init__(self, in_features, out_features, hops, *, rng=None, dtype=np.float32,
                 name="graphconv"):
        if hops < 0:
            raise ValueError("hops must be >= 0")
        self.hops = hops
        rng = rng or np.random.default_rng(0)
        fan_in = in_features * (hops + 1)
        self.taps = Tensor(
            f"{name}.taps", kaiming_uniform((hops + 1, in_features, out_features), fan_in, rng, dtype)
        )
        self.bias = Tensor(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self._cache = None

    def tensors(self):
        return [self.taps, self.bias]

    def forward(self, x: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
            shifts = shifts[None] if shifts.ndim == 3 else shifts
        if shifts.shape[1] != self.hops + 1:
            raise ValueError(
                f"expected {self.hops + 1} shift powers (S^0..S^{self.hops}), "
                f"got {shifts.shape[1]}"
            )
        if x.shape[1] != shifts.shape[2]:
            raise ValueError(f"feature rows {x.shape[1]} != graph size {shifts.shape[2]}")
        shifts = shifts.astype(x.dtype, copy=False)
        xk = np.matmul(shifts, x[:, None])  # (B, K+1, N, F_in)
        out = np.einsum("bknf,kfo->bno", xk, self.taps.data) + self.bias.data
        self._cache = (xk, shifts, squeeze)
        return out[0] if squeeze else out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xk, shifts, squeeze = self._cache
        if squeeze:
            dy = dy[None]
        self.taps.grad += np.einsum("bknf,bno->kfo", xk, dy)
        self.bias.grad += dy.sum(axis=(0, 1))
        dxk = np.einsum("bno,kfo->bknf", dy, self.taps.data)
        dx = np.matmul(shifts.transpose(0, 1, 3, 2), dxk).sum(axis=1)
        return dx[0] if squeeze else dx


class Dropout(Layer):
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval.

    The mask generator is installed by the owning network at the start of
    each training run, so a fixed seed gives a bit-identical trajectory.
    """

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"drop rate must be in [0, 1), got {p}")
        self.p = p
        self.train_mode = False
        self.rng: np.random.Generator | None = None
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if not self.train_mode or self.p == 0.0:
            self._mask = None
            return x
        if self.rng is None:
            raise RuntimeError("dropout used in train mode without a seeded generator")
        keep = (self.rng.random(x.shape) >= self.p).astype(x.dtype)
        self._mask = keep / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy if self._mask is None else dy * self._mask

    def kink_signature(self):
        return None if self._mask is None else self._mask.tobytes()


class Sequential(Layer):
    """Plain chain of layers (no graph inputs)."""

    def __init__(self, *layers):
        self.layers = list(layers)

    def tensors(self):
        return [t for layer in self.layers for t in layer.tensors()]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def kink_signature(self):
        parts = [s for layer in self.layers if (s := layer.kink_signature()) is not None]
        return b"".join(parts) if parts else None
