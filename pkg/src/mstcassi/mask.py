"""Mask-guided mechanism: turn the sheared aperture into value re-weighting maps."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import ConfigError, mix_values
from .nn import Conv2d, Module, _rng
from .optics import modulate
from .tensor import DimensionError, Tensor


def shear_back(x: Tensor, d: int, width: int) -> Tensor:
    """Differentiable per-channel window: ``out[c] = x[c, :, d*c : d*c + width]``.

    Columns past the right edge of ``x`` read as zero. ``x`` is ``C x H x W'``.
    """
    c, h, wext = x.shape
    xd = x.data
    out = np.zeros((c, h, width), dtype=xd.dtype)
    spans = []
    for ch in range(c):
        lo = d * ch
        hi = min(lo + width, wext)
        n = max(hi - lo, 0)
        spans.append((lo, n))
        if n:
            out[ch, :, :n] = xd[ch, :, lo:hi]

    def back(g):
        gx = np.zeros_like(xd)
        for ch, (lo, n) in enumerate(spans):
            if n:
                gx[ch, :, lo : lo + n] += g[ch, :, :n]
        return (gx,)

    return Tensor._from_op(out, (x,), back)


class MaskGuidance(Module):
    """Per-stage mask attention.

    ``u = W1 * M_s``; ``M'_s = u * (1 + sigmoid(dw5(W2 * u)))``; shear back at
    full resolution with the model's step; then ``stage`` learnable strided
    conv4x4 downsamplers bring it to ``H/2^i x W/2^i`` with ``2^i C`` channels.
    """

    def __init__(self, n_lambda: int, dim: int, stage: int, rng=None):
        if stage < 0:
            raise ConfigError(f"stage must be non-negative, got {stage}")
        rng = _rng(rng)
        self.stage = stage
        self.w1 = Conv2d(n_lambda, dim, 1, rng=rng)
        self.w2 = Conv2d(dim, dim, 1, rng=rng)
        self.dw5 = Conv2d(dim, dim, 5, groups=dim, rng=rng)
        self.down = [Conv2d(dim * 2**k, dim * 2 ** (k + 1), 4, stride=2, pad=1, rng=rng)
                     for k in range(stage)]

    def forward(self, shifted_mask: Tensor, d: int, width: int, gate: bool = True) -> Tensor:
        """``shifted_mask`` is ``N_lambda x H x W'``; returns ``2^i C x H/2^i x W/2^i``."""
        u = self.w1(shifted_mask)
        if gate:
            u = u * (1.0 + T.sigmoid(self.dw5(self.w2(u))))
        m = shear_back(u, d, width)
        for conv in self.down:
            m = conv(m)
        return m

    def macs(self, h: int, wext: int, w: int) -> int:
        full = self.w1.macs(h, wext) + self.w2.macs(h, wext) + self.dw5.macs(h, wext)
        for k, conv in enumerate(self.down):
            full += conv.macs(h // 2 ** (k + 1), w // 2 ** (k + 1))
        return full


def mask_attention(shifted_mask: Tensor, guides: list[MaskGuidance], stage: int, d: int,
                   width: int, gate: bool = True) -> Tensor:
    if not 0 <= stage < len(guides):
        raise ConfigError(f"stage {stage} out of range for {len(guides)} stages")
    return guides[stage](shifted_mask, d, width, gate=gate)


def guided_head(m: Tensor, v: Tensor, a: Tensor) -> Tensor:
    """``(M ⊙ V) A``; with ``M`` all ones this is the unguided head bit for bit."""
    if m.shape != v.shape:
        raise DimensionError(f"mask {m.shape} and values {v.shape} differ")
    return mix_values(m * v, a)


def legacy_mask_input(cube: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Older input scheme: the shift-back cube multiplied by the aperture."""
    return modulate(cube, mask)
