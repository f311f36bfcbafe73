import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mstcassi import MSTReconstructor
from mstcassi.optics import generate_mask, generate_scene, init_input, simulate
from mstcassi.tensor import DimensionError


def data(n=2, size=16):
    scenes = np.stack([generate_scene(s, size, size, 8) for s in range(n)])
    mask = generate_mask(0, size, size)
    ys = np.stack([simulate(s, mask, 2) for s in scenes])
    return scenes, mask, ys


def test_params_follow_sklearn_conventions():
    est = MSTReconstructor(epochs=2, lr=1e-3)
    params = est.get_params()
    assert params["epochs"] == 2 and params["preset"] == "toy"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(dim=16).dim == 16


def test_fit_predict_score():
    scenes, mask, ys = data()
    est = MSTReconstructor(epochs=1, steps_per_epoch=4, random_state=3)
    with pytest.raises(NotFittedError):
        est.predict(ys)
    assert est.fit(scenes, mask=mask) is est
    assert est.n_features_in_ == 8 and len(est.history_) == 4
    pred = est.predict(ys)
    assert pred.shape == scenes.shape
    assert np.array_equal(est.shift_back(ys[0])[0], init_input(ys[0], 2, 8))
    assert np.isfinite(est.score(ys, scenes))
    again = MSTReconstructor(epochs=1, steps_per_epoch=4, random_state=3).fit(scenes, mask=mask)
    assert np.array_equal(again.predict(ys), pred)


def test_input_validation():
    scenes, mask, ys = data(1)
    est = MSTReconstructor(epochs=1, steps_per_epoch=1)
    with pytest.raises(ValueError):
        est.fit(scenes)
    with pytest.raises(DimensionError):
        est.fit(scenes, mask=mask[:8])
    est.fit(scenes[0], mask=mask)
    with pytest.raises(DimensionError):
        est.predict(ys[:, :, :20])
