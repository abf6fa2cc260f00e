"""Spatial and feature-based multi-head self-attention over feature maps.

Both kinds share one core. A feature map (N, d_C, H, W) is flattened to a
matrix X' with ``rows`` R and ``content`` C per row:

  spatial kind:  X' is (d_C, d_N), R = d_C, C = d_N = H*W
  feature kind:  X' is transposed to (d_N, d_C), R = d_N, C = d_C

Per head i: Q_i = W^Q_i X', K_i = W^K_i X', V_i = W^V_i X' (each d x C);
A_i = softmax(Q_i K_i^T / sqrt(d)) is d x d and row-stochastic;
H_i = A_i V_i; Z = W^O concat(H_i); output = LayerNorm(Z + X') over the
content axis, reshaped back. The feature kind is exactly the spatial pipeline
conjugated by the channel/spatial transpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .ops import LayerNorm, ensure_finite, softmax, softmax_bwd, _uniform_init

_DEFAULTS = {
    "sam": {"d": 512, "n_heads": 4, "insert_after_block": 2},
    "fbam": {"d": 196, "n_heads": 1, "insert_after_block": 3},
}

_SCALES = ("sqrt_d", "sqrt_content")


@dataclass(frozen=True)
class AttentionConfig:
    kind: str
    d: int = None
    n_heads: int = None
    insert_after_block: int = None
    scale: str = "sqrt_d"

    def __post_init__(self):
        if self.kind not in _DEFAULTS:
            raise ConfigError(f"attention kind must be one of {sorted(_DEFAULTS)}, got {self.kind!r}")
        defaults = _DEFAULTS[self.kind]
        for field in ("d", "n_heads", "insert_after_block"):
            if getattr(self, field) is None:
                object.__setattr__(self, field, defaults[field])
        if self.d < 1 or self.n_heads < 1:
            raise ConfigError(f"d and n_heads must be positive, got d={self.d}, n_heads={self.n_heads}")
        if not 1 <= self.insert_after_block <= 4:
            raise ConfigError(f"insert_after_block must be in 1..4, got {self.insert_after_block}")
        if self.scale not in _SCALES:
            raise ConfigError(f"scale must be one of {_SCALES}, got {self.scale!r}")


class AttentionModule:
    """One attention block bound to fixed channel count and map size."""

    def __init__(self, kind, d_c, d_n, d, n_heads, rng, dtype=np.float32, scale="sqrt_d", name="attn"):
        if kind not in _DEFAULTS:
            raise ConfigError(f"unknown attention kind {kind!r}")
        self.kind = kind
        self.name = name
        self.d_c = d_c
        self.d_n = d_n
        self.d = d
        self.n_heads = n_heads
        rows, content = (d_c, d_n) if kind == "sam" else (d_n, d_c)
        self.rows = rows
        self.content = content
        self.scale_mode = scale
        self.scale = float(np.sqrt(d if scale == "sqrt_d" else content))
        self.wq = _uniform_init(rng, (n_heads, d, rows), rows, dtype)
        self.wk = _uniform_init(rng, (n_heads, d, rows), rows, dtype)
        self.wv = _uniform_init(rng, (n_heads, d, rows), rows, dtype)
        self.wo = _uniform_init(rng, (rows, n_heads * d), n_heads * d, dtype)
        self.dwq = np.zeros_like(self.wq)
        self.dwk = np.zeros_like(self.wk)
        self.dwv = np.zeros_like(self.wv)
        self.dwo = np.zeros_like(self.wo)
        self.ln = LayerNorm(content, dtype=dtype, name=f"{name}.ln")
        self.last_attention = None

    def _flatten(self, x):
        n, c, h, w = x.shape
        if c != self.d_c or h * w != self.d_n:
            raise ShapeError(
                f"{self.name}: built for (N,{self.d_c},{self.d_n} positions), got {x.shape}"
            )
        xp = x.reshape(n, c, h * w)
        if self.kind == "fbam":
            xp = xp.transpose(0, 2, 1)
        return np.ascontiguousarray(xp), (n, c, h, w)

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=self.wq.dtype)
        xp, dims = self._flatten(x)
        q = np.matmul(self.wq[None], xp[:, None])
        k = np.matmul(self.wk[None], xp[:, None])
        v = np.matmul(self.wv[None], xp[:, None])
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) / self.scale
        att = softmax(scores)
        heads = np.matmul(att, v)
        n = dims[0]
        concat = heads.reshape(n, self.n_heads * self.d, self.content)
        z = np.matmul(self.wo[None], concat)
        out = self.ln.forward(z + xp, train)
        self._cache = (xp, q, k, v, att, concat, dims)
        self.last_attention = att
        if self.kind == "fbam":
            out = out.transpose(0, 2, 1)
        return ensure_finite(self.name, out.reshape(dims))

    def backward(self, dy):
        xp, q, k, v, att, concat, dims = self._cache
        n, c, h, w = dims
        dy = np.asarray(dy, dtype=xp.dtype).reshape(n, c, h * w)
        if self.kind == "fbam":
            dy = dy.transpose(0, 2, 1)
        dres = self.ln.backward(dy)
        dxp = dres.copy()
        dconcat = np.matmul(self.wo.T[None], dres)
        self.dwo[...] = np.matmul(dres, concat.transpose(0, 2, 1)).sum(axis=0)
        dheads = dconcat.reshape(n, self.n_heads, self.d, self.content)
        datt = np.matmul(dheads, v.transpose(0, 1, 3, 2))
        dv = np.matmul(att.transpose(0, 1, 3, 2), dheads)
        dscores = softmax_bwd(att, datt) / self.scale
        dq = np.matmul(dscores, k)
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), q)
        xp_t = xp.transpose(0, 2, 1)[:, None]
        self.dwq[...] = np.matmul(dq, xp_t).sum(axis=0)
        self.dwk[...] = np.matmul(dk, xp_t).sum(axis=0)
        self.dwv[...] = np.matmul(dv, xp_t).sum(axis=0)
        for wmat, dmat in ((self.wq, dq), (self.wk, dk), (self.wv, dv)):
            dxp += np.matmul(wmat.transpose(0, 2, 1)[None], dmat).sum(axis=1)
        if self.kind == "fbam":
            dxp = dxp.transpose(0, 2, 1)
        return dxp.reshape(dims)

    def parameters(self):
        own = [
            (f"{self.name}.wq", self.wq, self.dwq),
            (f"{self.name}.wk", self.wk, self.dwk),
            (f"{self.name}.wv", self.wv, self.dwv),
            (f"{self.name}.wo", self.wo, self.dwo),
        ]
        return own + self.ln.parameters()

    def state_arrays(self):
        out = {
            f"{self.name}.wq": self.wq,
            f"{self.name}.wk": self.wk,
            f"{self.name}.wv": self.wv,
            f"{self.name}.wo": self.wo,
        }
        out.update(self.ln.state_arrays())
        return out

    def param_count(self):
        ln_params = 2 * self.content
        return self.n_heads * 3 * self.d * self.rows + self.rows * self.n_heads * self.d + ln_params
