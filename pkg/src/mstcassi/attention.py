"""Spectral-wise multi-head self-attention (S-MSA).

Each spectral feature map is a token. For a head of width ``d_h`` the
attention matrix is ``d_h x d_h``: ``A = softmax(sigma * K^T Q)`` normalised
over the key axis (rows), and ``head = V A``, so every output channel is a
convex combination of value channels. Cost is linear in the number of
pixels.

Token matrices are ``HW x C`` with pixel ``(y, x)`` at row ``y*W + x``.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, _rng, param, uniform_init
from .tensor import Tensor

_MAC_COUNTERS: list["MacCounter"] = []


class ConfigError(ValueError):
    """Invalid architecture configuration."""


class MacCounter:
    """Accumulates multiply-accumulates performed by the attention kernel."""

    def __init__(self):
        self.macs = 0

    def add(self, n: int) -> None:
        self.macs += int(n)


@contextlib.contextmanager
def count_attention_macs():
    counter = MacCounter()
    _MAC_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTERS.remove(counter)


def smsa_mac_count(h: int, w: int, c: int, n_heads: int) -> int:
    """MACs of the two attention products ``K_j^T Q_j`` and ``V_j A_j`` over all heads."""
    if c % n_heads:
        raise ConfigError(f"channels {c} not divisible by {n_heads} heads")
    return 2 * h * w * c * c // n_heads


def split_heads(t: Tensor, n_heads: int) -> Tensor:
    """``HW x C`` -> ``N x HW x d_h``, heads taken as contiguous channel groups."""
    hw, c = t.shape
    if c % n_heads:
        raise ConfigError(f"channels {c} not divisible by {n_heads} heads")
    return t.reshape(hw, n_heads, c // n_heads).transpose(1, 0, 2)


def merge_heads(heads: Tensor) -> Tensor:
    n, hw, dh = heads.shape
    return heads.transpose(1, 0, 2).reshape(hw, n * dh)


def project_qkv(x: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Bias-free projections ``Q = X W_Q``, ``K = X W_K``, ``V = X W_V``."""
    return T.matmul(x, w_q), T.matmul(x, w_k), T.matmul(x, w_v)


def attention_map(q: Tensor, k: Tensor, sigma) -> Tensor:
    """``softmax(sigma * K^T Q)`` over the key axis.

    ``q``/``k`` are ``HW x d_h`` or batched ``N x HW x d_h``; ``sigma`` is a
    scalar or one value per head.
    """
    kt = k.transpose(1, 0) if k.ndim == 2 else k.transpose(0, 2, 1)
    gram = T.matmul(kt, q)
    if _MAC_COUNTERS:
        heads = 1 if q.ndim == 2 else q.shape[0]
        hw, dh = q.shape[-2:]
        for c in _MAC_COUNTERS:
            c.add(heads * dh * hw * dh)
    if not isinstance(sigma, Tensor):
        sigma = Tensor(np.asarray(sigma), dtype=q.dtype)
    if sigma.ndim == 1:
        sigma = sigma.reshape(sigma.shape[0], 1, 1)
    return T.softmax(sigma * gram, axis=-2)


def mix_values(v: Tensor, a: Tensor) -> Tensor:
    """``head = V A``."""
    out = T.matmul(v, a)
    if _MAC_COUNTERS:
        heads = 1 if v.ndim == 2 else v.shape[0]
        hw, dh = v.shape[-2:]
        for c in _MAC_COUNTERS:
            c.add(heads * hw * dh * a.shape[-1])
    return out


def spectral_attention(q: Tensor, k: Tensor, v: Tensor, sigma) -> Tensor:
    return mix_values(v, attention_map(q, k, sigma))


def position_embedding(v: Tensor, conv1: Conv2d, conv2: Conv2d, h: int, w: int) -> Tensor:
    """Depth-wise conv3x3 -> GELU -> depth-wise conv3x3 on the value map, as tokens."""
    hw, c = v.shape
    fmap = v.transpose(1, 0).reshape(c, h, w)
    out = conv2(T.gelu(conv1(fmap)))
    return out.reshape(c, hw).transpose(1, 0)


def aggregate_heads(heads: Tensor, v: Tensor, w_out: Tensor, conv1: Conv2d | None,
                    conv2: Conv2d | None, h: int, w: int) -> Tensor:
    """Concatenate heads, project with ``W_out`` and add the position embedding."""
    out = T.matmul(merge_heads(heads), w_out)
    if conv1 is not None:
        out = out + position_embedding(v, conv1, conv2, h, w)
    return out


class SpectralMSA(Module):
    """S-MSA over a ``C x H x W`` feature map with optional value re-weighting.

    ``sigma`` starts at ``1/sqrt(d_h)`` so the first forward pass is plain
    scaled dot-product attention along the spectral axis.
    """

    def __init__(self, dim: int, heads: int, rng=None):
        if dim % heads:
            raise ConfigError(f"channels {dim} not divisible by {heads} heads")
        rng = _rng(rng)
        self.dim, self.heads = dim, heads
        self.w_q = uniform_init(rng, (dim, dim), dim)
        self.w_k = uniform_init(rng, (dim, dim), dim)
        self.w_v = uniform_init(rng, (dim, dim), dim)
        self.sigma = param(np.full(heads, 1.0 / math.sqrt(dim // heads)))
        self.w_out = uniform_init(rng, (dim, dim), dim)
        self.pos1 = Conv2d(dim, dim, 3, groups=dim, rng=rng)
        self.pos2 = Conv2d(dim, dim, 3, groups=dim, rng=rng)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def forward(self, x: Tensor, mask_attention: Tensor | None = None,
                position: bool = True) -> Tensor:
        """``x`` is ``C x H x W``; ``mask_attention`` (same shape) re-weights the values."""
        c, h, w = x.shape
        tokens = x.reshape(c, h * w).transpose(1, 0)
        q, k, v = project_qkv(tokens, self.w_q, self.w_k, self.w_v)
        qh, kh, vh = (split_heads(t, self.heads) for t in (q, k, v))
        if mask_attention is not None:
            m = mask_attention.reshape(c, h * w).transpose(1, 0)
            vh = split_heads(m, self.heads) * vh
        heads = spectral_attention(qh, kh, vh, self.sigma)
        conv1, conv2 = (self.pos1, self.pos2) if position else (None, None)
        out = aggregate_heads(heads, v, self.w_out, conv1, conv2, h, w)
        return out.transpose(1, 0).reshape(c, h, w)

    def macs(self, h: int, w: int) -> int:
        hw, c = h * w, self.dim
        projections = 4 * hw * c * c
        pos = self.pos1.macs(h, w) + self.pos2.macs(h, w)
        return projections + smsa_mac_count(h, w, c, self.heads) + pos
