"""Closed-form parameter and FLOP counts for an :class:`MstConfig`.

Conventions
-----------
* A convolution costs ``H_out * W_out * C_out * (C_in / groups) * k * k``
  multiply-accumulates (MACs); a ``2x2`` transposed convolution costs
  ``H_in * W_in * C_in * C_out * 4``; an ``HW x C`` by ``C x C`` projection
  costs ``HW * C * C``.
* Attention products cost ``2 * H * W * C**2 / N`` per block.
* Biases, layer norms, activations, softmax and elementwise products are
  not counted.
* FLOPs are reported the way the MST efficiency table reports them: one MAC
  counts as one FLOP. ``count_flops(..., per_mac=2)`` gives the
  two-FLOPs-per-MAC figure.

Nothing here builds a model; the tests compare these formulas against an
instantiated network.
"""

from __future__ import annotations

from .attention import smsa_mac_count
from .model import N_STAGES, MstConfig
from .optics import dispersed_width

# Params (M) and FLOPS (G) at 256x256 for MST-S, MST-M, MST-L.
REFERENCE_BUDGETS = {
    "mst-s": (0.93e6, 12.96e9),
    "mst-m": (1.50e6, 18.07e9),
    "mst-l": (2.03e6, 28.15e9),
}


def _block_params(cfg: MstConfig, stage: int) -> int:
    dim, heads, r = cfg.stage_dim(stage), cfg.stage_heads(stage), cfg.ffn_ratio
    total = 2 * dim  # ln2
    total += 2 * r * dim * dim + 9 * r * dim  # ffn
    if cfg.use_smsa:
        total += 2 * dim  # ln1
        total += 4 * dim * dim + heads + 2 * 9 * dim
    return total


def _block_macs(cfg: MstConfig, stage: int, h: int, w: int) -> int:
    dim, heads, r = cfg.stage_dim(stage), cfg.stage_heads(stage), cfg.ffn_ratio
    hw = h * w
    total = hw * (2 * r * dim * dim + 9 * r * dim)
    if cfg.use_smsa:
        total += 4 * hw * dim * dim + smsa_mac_count(h, w, dim, heads)
        if cfg.use_position:
            total += 2 * 9 * hw * dim
    return total


def _guided(cfg: MstConfig) -> bool:
    return cfg.use_mm and cfg.use_smsa


def count_params(cfg: MstConfig) -> int:
    c, L = cfg.dim, cfg.n_lambda
    n1, n2, n3 = cfg.depths
    total = (L * 9 * c + c) + (c * 9 * L + L)  # embed, head (with bias)
    total += 2 * n1 * _block_params(cfg, 0) + 2 * n2 * _block_params(cfg, 1) + n3 * _block_params(cfg, 2)
    total += c * 2 * c * 16 + 2 * c * 4 * c * 16  # encoder downsamplers
    total += 4 * c * 2 * c * 4 + 2 * c * c * 4  # decoder upsamplers
    total += 4 * c * 2 * c + 2 * c * c  # skip fusion 1x1
    if _guided(cfg):
        for stage in range(N_STAGES):
            total += L * c + c * c + 25 * c
            total += sum(c * 2**k * c * 2 ** (k + 1) * 16 for k in range(stage))
    return total


def count_macs(cfg: MstConfig, h: int, w: int) -> int:
    c, L = cfg.dim, cfg.n_lambda
    n1, n2, n3 = cfg.depths
    h1, w1, h2, w2 = h // 2, w // 2, h // 4, w // 4
    total = 2 * h * w * c * L * 9  # embed + head
    total += 2 * n1 * _block_macs(cfg, 0, h, w)
    total += 2 * n2 * _block_macs(cfg, 1, h1, w1)
    total += n3 * _block_macs(cfg, 2, h2, w2)
    total += h1 * w1 * 2 * c * c * 16 + h2 * w2 * 4 * c * 2 * c * 16
    total += h2 * w2 * 4 * c * 2 * c * 4 + h1 * w1 * 2 * c * c * 4
    total += h1 * w1 * 4 * c * 2 * c + h * w * 2 * c * c
    if _guided(cfg):
        wext = dispersed_width(w, cfg.d, L)
        for stage in range(N_STAGES):
            total += h * wext * (L * c + c * c + 25 * c)
            for k in range(stage):
                cin = c * 2**k
                total += (h >> (k + 1)) * (w >> (k + 1)) * 2 * cin * cin * 16
    return total


def count_flops(cfg: MstConfig, h: int, w: int, per_mac: int = 1) -> int:
    return per_mac * count_macs(cfg, h, w)


def attention_macs(cfg: MstConfig, h: int, w: int) -> int:
    """MACs spent in the spectral attention products alone, whole network."""
    if not cfg.use_smsa:
        return 0
    n1, n2, n3 = cfg.depths
    return (2 * n1 * smsa_mac_count(h, w, cfg.stage_dim(0), cfg.stage_heads(0))
            + 2 * n2 * smsa_mac_count(h // 2, w // 2, cfg.stage_dim(1), cfg.stage_heads(1))
            + n3 * smsa_mac_count(h // 4, w // 4, cfg.stage_dim(2), cfg.stage_heads(2)))


def budget_report(cfg: MstConfig, h: int, w: int, expect_params: float, expect_flops: float,
                  tol: float, per_mac: int = 1) -> tuple[bool, list[str]]:
    """Compare counts with expected values at relative tolerance ``tol``."""
    params, flops = count_params(cfg), count_flops(cfg, h, w, per_mac)
    lines, ok = [], True
    for label, got, want in (("params", params, expect_params), ("flops", flops, expect_flops)):
        rel = (got - want) / want
        passed = abs(rel) <= tol
        ok &= passed
        lines.append(f"{label}: got {got} expected {want:.6g} rel {rel:+.4f} "
                     f"{'ok' if passed else 'FAIL'} (tol {tol:g})")
    return ok, lines
