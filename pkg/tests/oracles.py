"""Plain numpy reference implementations used as test oracles.

None of this touches the autodiff engine: convolutions are shifted-slice
sums, attention is written with explicit loops, and the network forward is
one straight-line function reading weights off a model instance.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from mstcassi.optics import shift_back, shift_mask


def gelu(x):
    return 0.5 * x * (1 + erf(x / math.sqrt(2)))


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def conv(x, w, b=None, stride=1, pad=0, groups=1):
    """Cross-correlation as a sum of kernel-offset slices."""
    cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    per = cout // groups
    for o in range(cout):
        g = o // per
        for c in range(cg):
            for dy in range(k):
                for dx in range(k):
                    sl = xp[g * cg + c, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride]
                    out[o] += w[o, c, dy, dx] * sl
    if b is not None:
        out += b[:, None, None]
    return out


def deconv2(x, w):
    cin, h, wd = x.shape
    out = np.zeros((w.shape[1], 2 * h, 2 * wd))
    for a in range(2):
        for b in range(2):
            out[:, a::2, b::2] = np.einsum("chw,co->ohw", x, w[:, :, a, b])
    return out


def layer_norm(x, gamma, beta, eps=1e-6):
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return (x - mu) / np.sqrt(var + eps) * gamma[:, None, None] + beta[:, None, None]


def loop_attention(q, k, v, sigma):
    """Two-loop reference: softmax over key channels of sigma * K^T Q, then V A."""
    hw, dh = q.shape
    a = np.zeros((dh, dh))
    for i in range(dh):
        for j in range(dh):
            a[i, j] = sigma * sum(k[p, i] * q[p, j] for p in range(hw))
    a = np.exp(a - a.max(axis=0))
    a /= a.sum(axis=0)
    out = np.zeros((hw, dh))
    for p in range(hw):
        for j in range(dh):
            out[p, j] = sum(v[p, i] * a[i, j] for i in range(dh))
    return out, a


def tokens(x):
    c, h, w = x.shape
    return np.stack([x[:, yy, xx] for yy in range(h) for xx in range(w)])


def smsa(x, mod, m=None, position=True):
    """S-MSA on a ``C x H x W`` array with weights read from ``mod``."""
    c, h, w = x.shape
    dh = c // mod.heads
    tok = tokens(x)
    q, k, v = tok @ mod.w_q.data, tok @ mod.w_k.data, tok @ mod.w_v.data
    vm = v if m is None else v * tokens(m)
    heads = []
    for j in range(mod.heads):
        s = slice(j * dh, (j + 1) * dh)
        heads.append(loop_attention(q[:, s], k[:, s], vm[:, s], mod.sigma.data[j])[0])
    out = np.concatenate(heads, axis=1) @ mod.w_out.data
    if position:
        vmap = v.T.reshape(c, h, w)
        pe = conv(gelu(conv(vmap, mod.pos1.weight.data, pad=1, groups=c)),
                  mod.pos2.weight.data, pad=1, groups=c)
        out = out + pe.reshape(c, h * w).T
    return out.T.reshape(c, h, w)


def guidance(ms, g, d, width):
    """Mask attention for a sheared mask ``ms`` (``N x H x W'``)."""
    u = conv(ms, g.w1.weight.data)
    z = conv(conv(u, g.w2.weight.data), g.dw5.weight.data, pad=2, groups=u.shape[0])
    out = shift_back((u * (1 + sigmoid(z))).transpose(1, 2, 0), d, width).transpose(2, 0, 1)
    for down in g.down:
        out = conv(out, down.weight.data, stride=2, pad=1)
    return out


def ffn(x, f):
    hidden = gelu(conv(x, f.expand.weight.data))
    hidden = gelu(conv(hidden, f.dw.weight.data, pad=1, groups=hidden.shape[0]))
    return conv(hidden, f.project.weight.data)


def msab(x, blk, m):
    if blk.attn is not None:
        x = x + smsa(layer_norm(x, blk.ln1.gamma.data, blk.ln1.beta.data), blk.attn, m, blk.use_position)
    return x + ffn(layer_norm(x, blk.ln2.gamma.data, blk.ln2.beta.data), blk.ffn)


def mst(h, mask, model):
    """Whole-network forward for ``h`` (``N x H x W``) and the aperture ``mask``."""
    cfg = model.cfg
    if cfg.input_mode == "legacy":
        h = h * mask[None]
    width = h.shape[2]
    if model.guides:
        ms = shift_mask(mask, cfg.d, cfg.n_lambda).transpose(2, 0, 1)
        maps = [guidance(ms, g, cfg.d, width) for g in model.guides]
    else:
        maps = [None] * 3
    x = conv(h, model.embed.weight.data, model.embed.bias.data, pad=1)
    for blk in model.enc0:
        x = msab(x, blk, maps[0])
    s0 = x
    x = conv(x, model.down0.weight.data, stride=2, pad=1)
    for blk in model.enc1:
        x = msab(x, blk, maps[1])
    s1 = x
    x = conv(x, model.down1.weight.data, stride=2, pad=1)
    for blk in model.bottleneck:
        x = msab(x, blk, maps[2])
    x = conv(np.concatenate([deconv2(x, model.up1.weight.data), s1]), model.fuse1.weight.data)
    for blk in model.dec1:
        x = msab(x, blk, maps[1])
    x = conv(np.concatenate([deconv2(x, model.up0.weight.data), s0]), model.fuse0.weight.data)
    for blk in model.dec0:
        x = msab(x, blk, maps[0])
    return h + conv(x, model.head.weight.data, model.head.bias.data, pad=1)
