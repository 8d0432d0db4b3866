import numpy as np
import pytest

from physichm.optim import AdamW, cosine_lr


def test_zero_grad_no_decay_is_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    opt = AdamW(lr=1e-3, weight_decay=0.0)
    for _ in range(3):
        opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_first_step_is_minus_lr():
    p = {"w": np.array(1.0)}
    AdamW(lr=1e-4, weight_decay=0.0).step(p, {"w": np.array(1.0)})
    assert p["w"] == pytest.approx(1.0 - 1e-4, abs=1e-12)


def test_decoupled_decay_shrinks():
    p = {"w": np.array([2.0])}
    AdamW(lr=1e-2, weight_decay=0.1).step(p, {"w": np.zeros(1)})
    np.testing.assert_allclose(p["w"], 2.0 * (1 - 1e-2 * 0.1), rtol=1e-15)


def test_moments_shape_and_counter():
    p = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
    opt = AdamW()
    for i in range(1, 4):
        opt.step(p, {"a": np.ones((2, 3)), "b": np.ones(4)})
        assert opt.step_count == i
    assert all(opt.m[k].shape == p[k].shape == opt.v[k].shape for k in p)


def test_missing_or_bad_gradient():
    opt = AdamW()
    with pytest.raises(KeyError):
        opt.step({"w": np.zeros(1)}, {})
    with pytest.raises(FloatingPointError):
        opt.step({"w": np.zeros(1)}, {"w": np.array([np.nan])})


def test_cosine_schedule_points():
    assert cosine_lr(0, 60, 1e-4) == 1e-4
    assert cosine_lr(59, 60, 1e-4, 1e-6) == pytest.approx(1e-6, abs=1e-18)
    assert cosine_lr(5, 11, 1e-4) == pytest.approx(5e-5, rel=1e-12)
    with pytest.raises(ValueError):
        cosine_lr(60, 60, 1e-4)
