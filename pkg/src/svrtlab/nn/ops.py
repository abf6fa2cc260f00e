"""Dense layers with explicit forward and backward passes.

Every layer owns its parameters and gradient buffers as plain numpy arrays.
``backward`` overwrites the gradient buffers (one backward per step) and
returns the gradient with respect to the layer input. All forwards run in the
parameter dtype; float32 for training, float64 for gradient checks. Reduction
orders are fixed, so outputs are bit-reproducible for a given input.
"""

from __future__ import annotations

import numpy as np

from ..errors import DivergedError, ShapeError


def ensure_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise DivergedError(f"non-finite values in {name}")
    return arr


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Common bookkeeping; subclasses fill _params with name -> array."""

    name = "layer"

    def __init__(self):
        self._params = {}
        self._grads = {}

    def _register(self, **arrays):
        for key, value in arrays.items():
            self._params[key] = value
            self._grads[key] = np.zeros_like(value)

    def params(self):
        return dict(self._params)

    def grads(self):
        return dict(self._grads)

    def set_params(self, values):
        for key, value in values.items():
            target = self._params[key]
            if target.shape != value.shape:
                raise ShapeError(f"{self.name}.{key}: have {target.shape}, got {value.shape}")
            target[...] = value

    def parameters(self):
        """(full_name, param, grad) triples; grads update in place."""
        return [(f"{self.name}.{k}", self._params[k], self._grads[k]) for k in sorted(self._params)]

    def state_arrays(self):
        """Parameters plus any non-trained buffers, for checkpoints."""
        return {f"{self.name}.{k}": v for k, v in sorted(self._params.items())}


class Conv2d(Layer):
    """3x3 (or kxk) cross-correlation via im2col, stride and zero padding."""

    def __init__(self, c_in, c_out, k=3, stride=1, pad=1, rng=None, dtype=np.float32, name="conv"):
        super().__init__()
        self.name = name
        self.c_in, self.c_out, self.k, self.stride, self.pad = c_in, c_out, k, stride, pad
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * k * k
        self._register(
            w=_uniform_init(rng, (c_out, c_in, k, k), fan_in, dtype),
            b=_uniform_init(rng, (c_out,), fan_in, dtype),
        )

    def _cols(self, x):
        n, c, h, w = x.shape
        k, s, p = self.k, self.stride, self.pad
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"{self.name}: input {x.shape} too small for k={k}, stride={s}, pad={p}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = xp[:, :, ki : ki + s * ho : s, kj : kj + s * wo : s]
        return cols.reshape(n, c * k * k, ho * wo), (n, c, h, w, ho, wo)

    def forward(self, x, train=True):
        x = np.ascontiguousarray(x, dtype=self._params["w"].dtype)
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name}: expected (N,{self.c_in},H,W), got {x.shape}")
        cols, dims = self._cols(x)
        n, c, h, w, ho, wo = dims
        w_mat = self._params["w"].reshape(self.c_out, -1)
        y = np.matmul(w_mat[None], cols) + self._params["b"][None, :, None]
        self._cache = (cols, dims)
        return ensure_finite(self.name, y.reshape(n, self.c_out, ho, wo))

    def backward(self, dy):
        cols, (n, c, h, w, ho, wo) = self._cache
        dy_mat = np.ascontiguousarray(dy, dtype=cols.dtype).reshape(n, self.c_out, ho * wo)
        self._grads["b"][...] = dy_mat.sum(axis=(0, 2))
        dw = np.matmul(dy_mat, cols.transpose(0, 2, 1)).sum(axis=0)
        self._grads["w"][...] = dw.reshape(self._params["w"].shape)
        w_mat = self._params["w"].reshape(self.c_out, -1)
        dcols = np.matmul(w_mat.T[None], dy_mat)
        k, s, p = self.k, self.stride, self.pad
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
        dcols = dcols.reshape(n, c, k, k, ho, wo)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki : ki + s * ho : s, kj : kj + s * wo : s] += dcols[:, :, ki, kj]
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class Linear(Layer):
    def __init__(self, d_in, d_out, rng=None, dtype=np.float32, name="linear"):
        super().__init__()
        self.name = name
        self.d_in, self.d_out = d_in, d_out
        rng = rng or np.random.default_rng(0)
        self._register(
            w=_uniform_init(rng, (d_out, d_in), d_in, dtype),
            b=_uniform_init(rng, (d_out,), d_in, dtype),
        )

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=self._params["w"].dtype)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"{self.name}: expected (N,{self.d_in}), got {x.shape}")
        self._cache = x
        return ensure_finite(self.name, x @ self._params["w"].T + self._params["b"])

    def backward(self, dy):
        x = self._cache
        dy = np.asarray(dy, dtype=x.dtype)
        self._grads["w"][...] = dy.T @ x
        self._grads["b"][...] = dy.sum(axis=0)
        return dy @ self._params["w"]


class BatchNorm2d(Layer):
    """Per-channel normalization over (N, H, W); biased batch statistics.

    Running statistics update as 0.9*old + 0.1*batch during training and are
    used verbatim in eval mode.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32, name="bn"):
        super().__init__()
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self._register(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
        )
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=self._params["gamma"].dtype)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected (N,{self.channels},H,W), got {x.shape}")
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv, train, x.shape)
        y = self._params["gamma"][None, :, None, None] * xhat + self._params["beta"][None, :, None, None]
        return ensure_finite(self.name, y)

    def backward(self, dy):
        xhat, inv, train, shape = self._cache
        dy = np.asarray(dy, dtype=xhat.dtype)
        self._grads["gamma"][...] = (dy * xhat).sum(axis=(0, 2, 3))
        self._grads["beta"][...] = dy.sum(axis=(0, 2, 3))
        g = self._params["gamma"][None, :, None, None]
        if not train:
            return dy * g * inv[None, :, None, None]
        n = shape[0] * shape[2] * shape[3]
        dxhat = dy * g
        term = dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True) \
            - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return term * inv[None, :, None, None]

    def state_arrays(self):
        out = super().state_arrays()
        out[f"{self.name}.running_mean"] = self.running_mean
        out[f"{self.name}.running_var"] = self.running_var
        return out


class LayerNorm(Layer):
    """Normalization over the last axis with learned gain and bias."""

    def __init__(self, dim, eps=1e-5, dtype=np.float32, name="ln"):
        super().__init__()
        self.name = name
        self.dim = dim
        self.eps = eps
        self._register(
            gain=np.ones(dim, dtype=dtype),
            bias=np.zeros(dim, dtype=dtype),
        )

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=self._params["gain"].dtype)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected last axis {self.dim}, got {x.shape}")
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv)
        return ensure_finite(self.name, self._params["gain"] * xhat + self._params["bias"])

    def backward(self, dy):
        xhat, inv = self._cache
        dy = np.asarray(dy, dtype=xhat.dtype)
        axes = tuple(range(dy.ndim - 1))
        self._grads["gain"][...] = (dy * xhat).sum(axis=axes)
        self._grads["bias"][...] = dy.sum(axis=axes)
        dxhat = dy * self._params["gain"]
        return (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) * inv


class ReLU(Layer):
    def __init__(self, name="relu"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return np.where(self._cache, dy, 0.0)


class MaxPool2x2(Layer):
    def __init__(self, name="pool"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"{self.name}: spatial dims must be even, got {x.shape}")
        tiles = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // 2, w // 2, 4
        )
        idx = tiles.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        idx, (n, c, h, w) = self._cache
        flat = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
        return flat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h, w
        )


class GlobalAvgPool(Layer):
    def __init__(self, name="gap"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._cache
        return np.broadcast_to(dy[:, :, None, None], (n, c, h, w)) / (h * w)


def relu(x):
    return np.where(x > 0, x, 0.0)


def sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(y, dy):
    """Backward of sigmoid given its output y."""
    return dy * y * (1.0 - y)


def residual_add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"residual_add: {a.shape} vs {b.shape}")
    return a + b


def residual_add_bwd(dy):
    return dy, dy


def softmax(x):
    """Stable softmax over the last axis."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(y, dy):
    """Backward of softmax given its output y."""
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))
