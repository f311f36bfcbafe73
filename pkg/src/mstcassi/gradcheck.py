"""Central finite-difference gradient checks.

The error reported for a parameter group is
``max |analytic - numeric| / max(max |analytic|, max |numeric|)``: the
numerator runs over the checked entries, the analytic maximum over the whole
tensor, so near-zero individual entries do not blow up the ratio.
Run under ``precision(np.float64)``.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .tensor import Tensor


def numeric_grad(loss_fn: Callable[[], Tensor], p: Tensor, idx, eps: float) -> float:
    old = p.data[idx]
    p.data[idx] = old + eps
    up = loss_fn().item()
    p.data[idx] = old - eps
    down = loss_fn().item()
    p.data[idx] = old
    return (up - down) / (2 * eps)


def check_gradients(loss_fn: Callable[[], Tensor], params: Iterable[tuple[str, Tensor]],
                    eps: float = 1e-5, samples: int | None = None, seed: int = 0) -> dict[str, float]:
    """Compare backprop against central differences for every named tensor.

    ``samples`` limits how many entries per tensor are perturbed (chosen at
    random); ``None`` checks all of them.
    """
    params = list(params)
    for _, p in params:
        p.grad = None
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    report = {}
    for name, p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = np.arange(p.size)
        if samples is not None and p.size > samples:
            flat = rng.choice(p.size, samples, replace=False)
        a = np.empty(len(flat))
        n = np.empty(len(flat))
        with T.no_grad():
            for j, f in enumerate(flat):
                idx = np.unravel_index(f, p.shape)
                a[j] = analytic[idx]
                n[j] = numeric_grad(loss_fn, p, idx, eps)
        scale = max(np.abs(analytic).max(), np.abs(n).max())
        report[name] = 0.0 if scale == 0 else float(np.abs(a - n).max() / scale)
    for _, p in params:
        p.grad = None
    return report


def projected_loss(fn: Callable[[], Tensor], seed: int = 1) -> Callable[[], Tensor]:
    """Wrap ``fn`` as ``sum(fn() * R)`` for a fixed random ``R``."""
    cache = {}

    def loss():
        out = fn()
        if "r" not in cache:
            cache["r"] = np.random.default_rng(seed).standard_normal(out.shape)
        return (out * Tensor(cache["r"], dtype=out.dtype)).sum()

    return loss


def _leaf(rng, *shape, positive=False):
    arr = rng.standard_normal(shape)
    if positive:
        arr = np.abs(arr) + 0.1
    return Tensor(arr, requires_grad=True)


def _suite_ops(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    results = {}

    def run(label, fn, leaves):
        rep = check_gradients(projected_loss(fn, seed), [(f"{label}.{k}", v) for k, v in leaves.items()])
        results.update(rep)

    a, b = _leaf(rng, 5, 4), _leaf(rng, 4, 3)
    run("matmul", lambda: T.matmul(a, b), {"a": a, "b": b})
    x, w = _leaf(rng, 3, 9, 9), _leaf(rng, 3, 1, 5, 5)
    run("conv2d_dw5", lambda: T.conv2d(x, w, pad=2, groups=3), {"x": x, "w": w})
    x2, w2, b2 = _leaf(rng, 4, 8, 8), _leaf(rng, 6, 4, 4, 4), _leaf(rng, 6)
    run("conv2d_s2k4", lambda: T.conv2d(x2, w2, b2, stride=2, pad=1), {"x": x2, "w": w2, "b": b2})
    x3, w3 = _leaf(rng, 2, 3, 3), _leaf(rng, 2, 5, 2, 2)
    run("conv2d_transpose", lambda: T.conv2d_transpose(x3, w3), {"x": x3, "w": w3})
    s = _leaf(rng, 4, 6)
    run("softmax", lambda: T.softmax(s, axis=0), {"x": s})
    ln, g, bt = _leaf(rng, 5, 3, 3), _leaf(rng, 5), _leaf(rng, 5)
    run("layer_norm", lambda: T.layer_norm(ln, 0, g, bt), {"x": ln, "gamma": g, "beta": bt})
    u = _leaf(rng, 7, 3)
    run("gelu", lambda: T.gelu(u), {"x": u})
    run("sigmoid", lambda: T.sigmoid(u), {"x": u})
    q = _leaf(rng, 7, 3, positive=True)
    run("sqrt", lambda: T.sqrt(q), {"x": q})
    return results


def _suite_smsa(seed: int) -> dict[str, float]:
    from .attention import SpectralMSA

    rng = np.random.default_rng(seed)
    mod = SpectralMSA(8, 2, rng=rng)
    x = _leaf(rng, 8, 4, 4)
    m = _leaf(rng, 8, 4, 4)
    params = [("x", x), ("mask", m)] + [(f"smsa.{k}", v) for k, v in mod.named_parameters()]
    return check_gradients(projected_loss(lambda: mod(x, m), seed), params)


def _suite_mask(seed: int) -> dict[str, float]:
    from .mask import MaskGuidance
    from .optics import generate_mask, shift_mask

    rng = np.random.default_rng(seed)
    mod = MaskGuidance(4, 4, 1, rng=rng)
    ms = Tensor(shift_mask(generate_mask(seed, 8, 8), 2, 4).transpose(2, 0, 1))
    params = [(f"mm.{k}", v) for k, v in mod.named_parameters()]
    return check_gradients(projected_loss(lambda: mod(ms, 2, 8), seed), params)


def _suite_block(seed: int) -> dict[str, float]:
    from .model import MSAB, FeedForward

    rng = np.random.default_rng(seed)
    ffn = FeedForward(4, 2, rng=rng)
    x = _leaf(rng, 4, 4, 4)
    out = check_gradients(projected_loss(lambda: ffn(x), seed),
                          [("ffn.x", x)] + [(f"ffn.{k}", v) for k, v in ffn.named_parameters()])
    blk = MSAB(8, 2, 2, rng=rng)
    xb, mb = _leaf(rng, 8, 4, 4), _leaf(rng, 8, 4, 4)
    out.update(check_gradients(projected_loss(lambda: blk(xb, mb), seed),
                               [("msab.x", xb)] + [(f"msab.{k}", v) for k, v in blk.named_parameters()]))
    return out


def _suite_mst(seed: int, samples: int = 4) -> dict[str, float]:
    from .model import MST, MstConfig
    from .optics import generate_mask

    cfg = MstConfig(dim=4, n_lambda=4, depths=(1, 1, 1), ffn_ratio=2)
    model = MST(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    h = Tensor(rng.random((4, 8, 8)))
    mask = generate_mask(seed, 8, 8)
    return check_gradients(projected_loss(lambda: model(h, mask), seed),
                           [(f"mst.{k}", v) for k, v in model.named_parameters()], samples=samples, seed=seed)


SUITES = {
    "ops": _suite_ops,
    "smsa": _suite_smsa,
    "mask": _suite_mask,
    "block": _suite_block,
    "mst": _suite_mst,
}


def run_suite(name: str, seed: int = 0) -> dict[str, float]:
    """Run one named suite (or ``all``) in float64 and return errors per group."""
    names = list(SUITES) if name == "all" else [name]
    out = {}
    with T.precision(np.float64):
        for n in names:
            if n not in SUITES:
                raise KeyError(f"unknown gradcheck suite {n!r}; choose from {sorted(SUITES)} or 'all'")
            out.update(SUITES[n](seed))
    return out
