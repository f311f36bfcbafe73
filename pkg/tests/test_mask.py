import numpy as np
import pytest

from mstcassi import tensor as T
from mstcassi.attention import ConfigError, SpectralMSA, attention_map, mix_values, spectral_attention
from mstcassi.gradcheck import run_suite
from mstcassi.mask import MaskGuidance, guided_head, legacy_mask_input, mask_attention, shear_back
from mstcassi.optics import generate_mask, modulate, shift_back, shift_mask
from mstcassi.tensor import DimensionError, Tensor

from .oracles import guidance as reference_guidance

D = 2


def shifted(seed, h=8, w=8, n=4, d=D):
    m = generate_mask(seed, h, w).astype(np.float64)
    return m, Tensor(shift_mask(m, d, n).transpose(2, 0, 1), dtype=np.float64)


def guide(n=4, c=4, stage=0, seed=0):
    with T.precision(np.float64):
        return MaskGuidance(n, c, stage, rng=np.random.default_rng(seed))


def test_shear_back_matches_numpy_shift_back():
    x = np.random.default_rng(0).random((5, 3, 12))
    got = shear_back(Tensor(x, dtype=np.float64), 2, 6).data
    assert np.array_equal(got, shift_back(x.transpose(1, 2, 0), 2, 6).transpose(2, 0, 1))


def test_disabled_gate_is_exact_shift_back_of_projection():
    _, ms = shifted(1)
    g = guide()
    g.w1.weight.data[:] = np.abs(g.w1.weight.data) + 0.1
    g.w2.weight.data[:] = -1e6
    g.dw5.weight.data[:] = 0
    g.dw5.weight.data[:, :, 2, 2] = 1  # centre tap: dw5 passes W2 u through
    want = shear_back(g.w1(ms), D, 8).data
    assert np.array_equal(g(ms, D, 8).data, want)
    assert np.array_equal(g(ms, D, 8, gate=False).data, want)


def test_zero_gate_branch_scales_by_one_and_a_half():
    _, ms = shifted(2)
    g = guide()
    g.w2.weight.data[:] = 0
    g.dw5.weight.data[:] = 0
    assert np.allclose(g(ms, D, 8).data, 1.5 * shear_back(g.w1(ms), D, 8).data, rtol=1e-15)


@pytest.mark.parametrize("stage", [0, 1, 2])
def test_matches_reference(stage):
    _, ms = shifted(3 + stage)
    g = guide(stage=stage, seed=stage)
    with T.precision(np.float64):
        got = g(ms, D, 8).data
    assert got.shape == (4 * 2**stage, 8 >> stage, 8 >> stage)
    assert np.allclose(got, reference_guidance(ms.data, g, D, 8), atol=1e-6)


def test_amplification_bounded():
    _, ms = shifted(4)
    g = guide(seed=4)
    u = g.w1(ms).data
    gated = (g.w1(ms) * (1.0 + T.sigmoid(g.dw5(g.w2(g.w1(ms)))))).data
    assert np.all(np.abs(gated) >= np.abs(u)) and np.all(np.abs(gated) <= 2 * np.abs(u))


def test_alignment_with_broadcast_projection():
    m, ms = shifted(5)
    g = guide()
    g.w1.weight.data[:] = 0
    for c in range(4):
        g.w1.weight.data[c, c] = 1  # channel c reads sheared band c
    out = g(ms, D, 8, gate=False).data
    assert all(np.array_equal(out[c], m) for c in range(4))


def test_stage_range_checked():
    _, ms = shifted(6)
    guides = [guide(stage=i) for i in range(3)]
    assert mask_attention(ms, guides, 1, D, 8).shape == (8, 4, 4)
    for bad in (-1, 3):
        with pytest.raises(ConfigError):
            mask_attention(ms, guides, bad, D, 8)


def test_guided_head_reduces_to_unguided():
    rng = np.random.default_rng(7)
    q, k, v = (Tensor(rng.standard_normal((2, 16, 4)), dtype=np.float64) for _ in range(3))
    sigma = Tensor(np.array([0.5, 1.5]), dtype=np.float64)
    a = attention_map(q, k, sigma)
    ones = Tensor(np.ones((2, 16, 4)), dtype=np.float64)
    assert np.array_equal(guided_head(ones, v, a).data, spectral_attention(q, k, v, sigma).data)
    zero = Tensor(np.zeros((2, 16, 4)), dtype=np.float64)
    assert not guided_head(Tensor(rng.random((2, 16, 4))), zero, a).data.any()


def test_guided_head_loop_oracle():
    rng = np.random.default_rng(8)
    m, v = rng.random((6, 3)), rng.standard_normal((6, 3))
    a = rng.random((3, 3))
    got = guided_head(Tensor(m, dtype=np.float64), Tensor(v, dtype=np.float64), Tensor(a, dtype=np.float64)).data
    for p in range(6):
        for j in range(3):
            assert abs(got[p, j] - sum(m[p, i] * v[p, i] * a[i, j] for i in range(3))) < 1e-12
    with pytest.raises(DimensionError):
        guided_head(Tensor(np.ones((6, 2))), Tensor(v), Tensor(a))


def test_smsa_with_unit_mask_is_bitwise_unguided():
    rng = np.random.default_rng(9)
    mod = SpectralMSA(8, 2, rng=rng)
    x = Tensor(rng.random((8, 4, 4)))
    assert np.array_equal(mod(x, Tensor(np.ones((8, 4, 4)))).data, mod(x).data)


def test_legacy_input():
    rng = np.random.default_rng(10)
    h = rng.random((4, 4, 3))
    assert np.array_equal(legacy_mask_input(h, np.ones((4, 4))), h)
    m = (rng.random((4, 4)) > 0.5).astype(float)
    out = legacy_mask_input(h, m)
    assert not out[m == 0].any()
    assert np.array_equal(out, modulate(h, m))
    with pytest.raises(DimensionError):
        legacy_mask_input(h, np.ones((3, 4)))


def test_mix_values_is_the_unguided_path():
    rng = np.random.default_rng(11)
    v, a = Tensor(rng.random((5, 3))), Tensor(rng.random((3, 3)))
    assert np.array_equal(mix_values(v, a).data, (v @ a).data)


def test_mask_gradients():
    assert max(run_suite("mask").values()) < 1e-4
