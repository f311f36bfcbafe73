"""scikit-learn style wrapper: ``fit`` on scenes, ``predict`` cubes from snapshots."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .metrics import psnr
from .model import MST, preset
from .optics import dispersed_width, init_input
from .training import TrainConfig, train
from .validation import check_cubes, check_mask, check_measurements


class MSTReconstructor(BaseEstimator):
    """Learn to invert a fixed CASSI system.

    Parameters
    ----------
    preset : str
        Architecture preset (``toy``, ``mst-s``, ``mst-m``, ``mst-l``, ...).
    depths, dim, n_lambda, d : optional overrides of the preset.
    use_smsa, use_mm, input_mode : ablation switches.
    lr, epochs, steps_per_epoch, batch, patch, augment, noise : training protocol.
    random_state : seeds both weight init and the training stream.

    Fitted attributes: ``model_``, ``mask_``, ``history_``, ``n_features_in_``.
    """

    def __init__(self, preset="toy", depths=None, dim=None, n_lambda=None, d=None,
                 use_smsa=True, use_mm=True, input_mode="plain", lr=4e-4, epochs=5,
                 steps_per_epoch=100, batch=1, patch=None, augment=False, noise="none",
                 random_state=0):
        self.preset = preset
        self.depths = depths
        self.dim = dim
        self.n_lambda = n_lambda
        self.d = d
        self.use_smsa = use_smsa
        self.use_mm = use_mm
        self.input_mode = input_mode
        self.lr = lr
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch = batch
        self.patch = patch
        self.augment = augment
        self.noise = noise
        self.random_state = random_state

    def _config(self):
        overrides = {k: getattr(self, k) for k in ("depths", "dim", "n_lambda", "d")
                     if getattr(self, k) is not None}
        return preset(self.preset, use_smsa=self.use_smsa, use_mm=self.use_mm,
                      input_mode=self.input_mode, **overrides)

    def fit(self, X, y=None, mask=None):
        """Train on ground-truth scenes ``X`` (``n x H x W x N``) seen through ``mask``."""
        scenes = check_cubes(X)
        if mask is None:
            raise ValueError("fit() needs the coded aperture: fit(X, mask=...)")
        mask = check_mask(mask, scenes.shape[1:3])
        cfg = self._config()
        seed = 0 if self.random_state is None else int(self.random_state)
        tc = TrainConfig(lr=self.lr, epochs=self.epochs, steps_per_epoch=self.steps_per_epoch,
                         batch=self.batch, patch=self.patch or min(scenes.shape[1:3]),
                         seed=seed, augment=self.augment, noise=self.noise)
        self.model_ = MST(cfg, seed=seed)
        self.mask_ = mask
        self.n_features_in_ = scenes.shape[3]
        with T.threads():
            self.history_ = train(self.model_, list(scenes), mask, tc)
        return self

    def shift_back(self, Y) -> np.ndarray:
        check_is_fitted(self, "model_")
        cfg = self.model_.cfg
        ys = check_measurements(Y, dispersed_width(self.mask_.shape[1], cfg.d, cfg.n_lambda))
        return np.stack([init_input(y, cfg.d, cfg.n_lambda) for y in ys])

    def predict(self, Y) -> np.ndarray:
        """Reconstruct ``n x H x W x N`` cubes from ``n x H x W'`` measurements."""
        inputs = self.shift_back(Y)
        with T.threads():
            return np.stack([self.model_.reconstruct(h, self.mask_) for h in inputs])

    transform = predict

    def score(self, Y, X) -> float:
        """Mean PSNR (dB) of the reconstructions against ground truth ``X``."""
        pred = self.predict(Y)
        gt = check_cubes(X)
        return float(np.mean([psnr(p, g) for p, g in zip(pred, gt)]))
