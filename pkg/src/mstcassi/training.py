"""Losses, Adam, augmentation and the simulate-then-reconstruct training loop."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import MST
from .optics import Noise, init_input, simulate
from .tensor import DimensionError, Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite."""


# -- loss ---------------------------------------------------------------------


@dataclass
class LossReport:
    rmse: float
    scl: float
    total: float
    history: list[dict] = field(default_factory=list)


def spectral_diff(x: Tensor, axis: int = 0) -> Tensor:
    n = x.shape[axis]
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
    return x[tuple(hi)] - x[tuple(lo)]


def loss_terms(pred: Tensor, gt: Tensor, scl_weight: float = 1.0, axis: int = 0):
    """RMSE plus spectrum-constancy term, both as differentiable scalars.

    The spectrum-constancy term is the RMSE between first differences along
    the spectral axis (``axis``), so a constant offset costs nothing there.
    """
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and target {gt.shape} differ")
    rmse = T.sqrt(T.mean(T.square(pred - gt)))
    if pred.shape[axis] > 1:
        scl = T.sqrt(T.mean(T.square(spectral_diff(pred, axis) - spectral_diff(gt, axis))))
    else:
        scl = Tensor(0.0, dtype=pred.dtype)
    return rmse, scl, rmse + scl * scl_weight


def loss(pred, gt, scl_weight: float = 1.0) -> LossReport:
    """Numpy-facing loss on ``H x W x N`` cubes."""
    with T.no_grad():
        p = Tensor(np.asarray(pred), dtype=np.float64)
        g = Tensor(np.asarray(gt), dtype=np.float64)
        rmse, scl, total = loss_terms(p, g, scl_weight, axis=-1)
    return LossReport(rmse.item(), scl.item(), total.item())


# -- optimiser ------------------------------------------------------------------


class Adam:
    """Adam with bias correction; ``lr`` may be changed between steps."""

    def __init__(self, params: Sequence[Tensor], lr: float = 4e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def learning_rate(epoch: int, base: float = 4e-4, every: int = 50) -> float:
    return base * 0.5 ** (epoch // every)


# -- augmentation ---------------------------------------------------------------


def augment(cube: np.ndarray, seed=None, flip: int | None = None, rot: int | None = None) -> np.ndarray:
    """Random flip (none / horizontal / vertical) then rotation by a multiple of 90 degrees.

    ``flip`` and ``rot`` pin the draw; otherwise both are sampled from ``seed``.
    """
    if flip is None or rot is None:
        rng = np.random.default_rng(seed)
        f, r = rng.integers(3), rng.integers(4)
        flip = f if flip is None else flip
        rot = r if rot is None else rot
    out = np.asarray(cube)
    if flip == 1:
        out = out[:, ::-1]
    elif flip == 2:
        out = out[::-1]
    return np.ascontiguousarray(np.rot90(out, k=int(rot), axes=(0, 1)))


# -- training loop --------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 4e-4
    halve_every: int = 50
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 300
    steps_per_epoch: int = 1
    batch: int = 5
    patch: int = 256
    seed: int = 0
    augment: bool = True
    noise: str = "none"
    scl_weight: float = 1.0
    log_path: str | None = None
    snapshot_every: int = 0
    snapshot_dir: str | None = None

    @classmethod
    def toy(cls, **kw) -> "TrainConfig":
        base = dict(epochs=5, steps_per_epoch=100, batch=1, patch=32, augment=False)
        base.update(kw)
        return cls(**base)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


def _crop(rng, cube: np.ndarray, mask: np.ndarray, size: int):
    h, w = cube.shape[:2]
    if size > min(h, w):
        raise DimensionError(f"patch {size} larger than scene {h}x{w}")
    y = int(rng.integers(h - size + 1))
    x = int(rng.integers(w - size + 1))
    return cube[y : y + size, x : x + size], mask[y : y + size, x : x + size]


def make_sample(cube: np.ndarray, mask: np.ndarray, d: int, rng, tc: TrainConfig):
    """Crop, augment and simulate; returns (ground truth, shift-back input, mask patch)."""
    gt, m = _crop(rng, cube, mask, tc.patch)
    if tc.augment:
        gt = augment(gt, rng)
    y = simulate(gt, m, d, Noise.parse(tc.noise), rng)
    return gt, init_input(y, d, gt.shape[2]), m


def train(model: MST, scenes: Sequence[np.ndarray], mask: np.ndarray, tc: TrainConfig) -> list[dict]:
    """Optimise ``model`` in place; returns one record per step.

    Each step simulates a fresh measurement from an (optionally augmented)
    crop, reconstructs from its shift-back initialisation and takes one Adam
    step on the mean loss over the batch.
    """
    cfg = model.cfg
    for s in scenes:
        if s.shape[0] % 4 or s.shape[1] % 4 or s.shape[2] != cfg.n_lambda:
            raise DimensionError(f"scene {s.shape} incompatible with config (n_lambda={cfg.n_lambda}, extents % 4)")
    rng = np.random.default_rng(tc.seed)
    dtype = model.embed.weight.dtype
    opt = Adam(model.parameters(), tc.lr, tc.betas, tc.eps)
    history: list[dict] = []
    writer = fh = None
    if tc.log_path:
        fh = open(tc.log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "rmse", "scl", "total"])
    try:
        step = 0
        for epoch in range(tc.epochs):
            opt.lr = learning_rate(epoch, tc.lr, tc.halve_every)
            for _ in range(tc.steps_per_epoch):
                opt.zero_grad()
                sums = np.zeros(3)
                for _ in range(tc.batch):
                    cube = scenes[int(rng.integers(len(scenes)))]
                    gt, h, m = make_sample(cube, mask, cfg.d, rng, tc)
                    x = Tensor(h.transpose(2, 0, 1), dtype=dtype)
                    target = Tensor(gt.transpose(2, 0, 1), dtype=dtype)
                    rmse, scl, total = loss_terms(model(x, m), target, tc.scl_weight)
                    (total * (1.0 / tc.batch)).backward()
                    sums += (rmse.item(), scl.item(), total.item())
                rmse_v, scl_v, total_v = sums / tc.batch
                if not math.isfinite(total_v):
                    raise TrainingDiverged(
                        f"non-finite loss at step {step} (epoch {epoch}, lr {opt.lr:g}): "
                        f"rmse={rmse_v} scl={scl_v}")
                opt.step()
                rec = {"step": step, "lr": opt.lr, "rmse": rmse_v, "scl": scl_v, "total": total_v}
                history.append(rec)
                if writer:
                    writer.writerow([step, f"{opt.lr:.6f}", f"{rmse_v:.6f}", f"{scl_v:.6f}", f"{total_v:.6f}"])
                if tc.snapshot_every and tc.snapshot_dir and (step + 1) % tc.snapshot_every == 0:
                    Path(tc.snapshot_dir).mkdir(parents=True, exist_ok=True)
                    model.save_weights(os.path.join(tc.snapshot_dir, f"step{step + 1:06d}.hsit"))
                if step % 50 == 0:
                    log.debug("step %d lr %.3g total %.6f", step, opt.lr, total_v)
                step += 1
    finally:
        if fh:
            fh.close()
    return history
