import csv
import math

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from mstcassi import metrics
from mstcassi import tensor as T
from mstcassi.model import MST, preset
from mstcassi.optics import disperse, generate_mask, generate_scene, measure, modulate
from mstcassi.tensor import DimensionError, Tensor
from mstcassi.training import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    augment,
    learning_rate,
    loss,
    loss_terms,
    train,
)

# -- loss -------------------------------------------------------------------------


def test_loss_simple_cases():
    gt = np.random.default_rng(0).random((4, 4, 5))
    assert loss(gt, gt).total == 0
    rep = loss(gt + 0.1, gt)
    assert math.isclose(rep.rmse, 0.1, rel_tol=1e-12) and rep.scl < 1e-12
    assert rep.total >= 0
    with pytest.raises(DimensionError):
        loss(gt, gt[:, :, :4])


def test_loss_loop_oracle():
    rng = np.random.default_rng(1)
    p, g = rng.random((3, 4, 5)), rng.random((3, 4, 5))
    se = sd = 0.0
    for i in range(3):
        for j in range(4):
            for n in range(5):
                se += (p[i, j, n] - g[i, j, n]) ** 2
                if n:
                    sd += ((p[i, j, n] - p[i, j, n - 1]) - (g[i, j, n] - g[i, j, n - 1])) ** 2
    rmse, scl = math.sqrt(se / 60), math.sqrt(sd / 48)
    rep = loss(p, g, scl_weight=0.5)
    assert abs(rep.rmse - rmse) < 1e-6 and abs(rep.scl - scl) < 1e-6
    assert abs(rep.total - (rmse + 0.5 * scl)) < 1e-6


def test_loss_gradient_finite_at_exact_match():
    x = Tensor(np.ones((2, 3, 3)), requires_grad=True)
    loss_terms(x, Tensor(np.ones((2, 3, 3))))[2].backward()
    assert np.all(np.isfinite(x.grad))


# -- metrics ----------------------------------------------------------------------


def test_metric_simple_cases():
    x = np.random.default_rng(2).random((16, 16, 3))
    assert metrics.psnr(x, x) == math.inf
    assert metrics.ssim(x, x) == 1.0
    assert metrics.psnr(np.ones((4, 4, 2)), np.zeros((4, 4, 2))) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_skimage(seed):
    rng = np.random.default_rng(seed)
    gt = generate_scene(seed, 24, 20, 4).astype(np.float64)
    pred = np.clip(gt + rng.normal(0, rng.uniform(0.01, 0.2), gt.shape), 0, 1)
    want_psnr = np.mean([peak_signal_noise_ratio(gt[:, :, n], pred[:, :, n], data_range=1.0)
                         for n in range(4)])
    want_ssim = structural_similarity(pred, gt, data_range=1.0, channel_axis=2, gaussian_weights=True,
                                      sigma=1.5, use_sample_covariance=False)
    assert abs(metrics.psnr(pred, gt) - want_psnr) < 0.01
    assert abs(metrics.ssim(pred, gt) - want_ssim) < 1e-4


def test_spectral_correlation():
    a = np.random.default_rng(3).random(28)
    assert metrics.spectral_correlation(a, a) == pytest.approx(1.0)
    assert metrics.spectral_correlation(a, -2 * a + 1) == pytest.approx(-1.0)
    assert metrics.spectral_correlation(np.ones(4), np.ones(4)) == 1.0


# -- optimiser -------------------------------------------------------------------------


def test_adam_first_two_steps_by_hand():
    x = Tensor(np.array(0.0), requires_grad=True, dtype=np.float64)
    opt = Adam([x], lr=0.1)
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = v = 0.0
    want = 0.0
    for t in (1, 2):
        g = 2 * (want - 3)  # d/dx (x - 3)^2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        want -= 0.1 * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        opt.zero_grad()
        T.square(x - 3.0).backward()
        opt.step()
        assert float(x.data) == pytest.approx(want, abs=1e-15)
    assert want == pytest.approx(0.2, abs=1e-3)


def test_learning_rate_schedule():
    assert learning_rate(0) == 4e-4 and learning_rate(49) == 4e-4
    assert learning_rate(50) == 2e-4 and learning_rate(149) == 1e-4
    assert all(learning_rate(e) == 4e-4 * 0.5 ** (e // 50) for e in range(300))


# -- augmentation -------------------------------------------------------------------------


def test_augment_properties():
    cube = generate_scene(4, 8, 8, 3)
    assert np.array_equal(augment(cube, flip=0, rot=0), cube)
    twice = augment(augment(cube, flip=0, rot=1), flip=0, rot=1)
    assert np.array_equal(twice, augment(cube, flip=0, rot=2))
    assert np.array_equal(augment(cube, flip=1, rot=0), cube[:, ::-1])
    assert np.array_equal(augment(cube, flip=2, rot=0), cube[::-1])
    assert np.array_equal(augment(cube, 7), augment(cube, 7))
    draws = {(augment(cube, s).tobytes()) for s in range(200)}
    assert len(draws) == 8  # 12 draws, but h-flip and v-flip overlap under rotation


def test_augmented_simulation_conserves_energy():
    cube = generate_scene(5, 8, 8, 4).astype(np.float64)
    mask = generate_mask(5, 8, 8).astype(np.float64)
    for seed in range(12):
        aug = augment(cube, seed)
        fp = modulate(aug, mask)
        assert measure(disperse(fp, 2)).sum() == pytest.approx(fp.sum(), rel=1e-12)


# -- loop ---------------------------------------------------------------------------------


def toy_setup(seed=0):
    cfg = preset("toy")
    return cfg, [generate_scene(seed, 16, 16, 8)], generate_mask(seed, 16, 16)


def test_zero_lr_leaves_weights_unchanged():
    cfg, scenes, mask = toy_setup()
    model = MST(cfg)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    train(model, scenes, mask, TrainConfig.toy(lr=0.0, epochs=1, steps_per_epoch=3, patch=16))
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())


def test_training_is_deterministic_and_logged(tmp_path):
    cfg, scenes, mask = toy_setup()
    tc = TrainConfig.toy(epochs=2, steps_per_epoch=3, patch=12, batch=2, augment=True, halve_every=1,
                         log_path=str(tmp_path / "log.csv"), snapshot_every=3,
                         snapshot_dir=str(tmp_path / "snap"))
    with T.threads(1):
        h1 = train(MST(cfg), scenes, mask, tc)
        h2 = train(MST(cfg), scenes, mask, tc)
    assert [r["total"] for r in h1] == [r["total"] for r in h2]
    assert [r["lr"] for r in h1] == [4e-4] * 3 + [2e-4] * 3
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["step", "lr", "rmse", "scl", "total"]
    assert len(rows) == 7 and rows[1][2] == f"{h1[0]['rmse']:.6f}"
    assert sorted(p.name for p in (tmp_path / "snap").iterdir()) == ["step000003.hsit", "step000006.hsit"]


def test_training_reduces_loss():
    cfg, scenes, mask = toy_setup(1)
    hist = train(MST(cfg), scenes, mask, TrainConfig.toy(epochs=1, steps_per_epoch=60, patch=16, lr=2e-3))
    assert np.mean([r["total"] for r in hist[-10:]]) < np.mean([r["total"] for r in hist[:10]])


def test_divergence_is_reported():
    cfg, scenes, mask = toy_setup()
    bad = scenes[0].copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="step 0"):
        train(MST(cfg), [bad], mask, TrainConfig.toy(epochs=1, steps_per_epoch=1, patch=16))


def test_scene_shape_validated():
    cfg, _, mask = toy_setup()
    with pytest.raises(DimensionError):
        train(MST(cfg), [np.zeros((14, 16, 8), np.float32)], mask, TrainConfig.toy(patch=12))
