import math

import numpy as np
import pytest

from musicnet.optim import BETA1, BETA2, EPS, NonFiniteGradientError, OptimizerState, adamw_step, cosine_lr
from musicnet.tensor import Tensor


def scalar_adam(theta, g, k, lr):
    m = v = 0.0
    out = []
    for t in range(1, k + 1):
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        mh = m / (1 - BETA1**t)
        vh = v / (1 - BETA2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + EPS)
        out.append(theta)
    return out


def test_scalar_trajectory_matches_oracle():
    p = {"w": Tensor(np.array(0.7))}
    st = OptimizerState(base_lr=0.01)
    traj = []
    for _ in range(25):
        adamw_step(p, {"w": np.array(-0.3)}, st)
        traj.append(float(p["w"].data))
    np.testing.assert_allclose(traj, scalar_adam(0.7, -0.3, 25, 0.01), rtol=0, atol=1e-12)


def test_zero_gradient_without_decay_is_exact_noop():
    x = np.array([1.5, -2.0])
    p = {"w": Tensor(x.copy())}
    adamw_step(p, {"w": np.zeros(2)}, OptimizerState())
    np.testing.assert_array_equal(p["w"].data, x)


def test_zero_gradient_with_decay_only_shrinks():
    x = np.array([1.5, -2.0])
    p = {"w": Tensor(x.copy())}
    adamw_step(p, {"w": np.zeros(2)}, OptimizerState(base_lr=0.1), weight_decay=0.5)
    np.testing.assert_allclose(p["w"].data, x * (1 - 0.1 * 0.5), rtol=1e-15)


def test_zero_lr_is_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2))
    p = {"w": Tensor(x.copy())}
    st = OptimizerState()
    for _ in range(3):
        adamw_step(p, {"w": rng.normal(size=(3, 2))}, st, lr=0.0)
    np.testing.assert_array_equal(p["w"].data, x)
    assert st.step == 3
    assert st.m["w"].shape == x.shape


def test_nonfinite_gradient_names_parameter():
    p = {"enc.wq": Tensor(np.zeros(2))}
    with pytest.raises(NonFiniteGradientError, match="enc.wq"):
        adamw_step(p, {"enc.wq": np.array([0.0, np.nan])}, OptimizerState())


def test_cosine_schedule():
    assert cosine_lr(0, 300, 1e-3) == 1e-3
    assert cosine_lr(150, 300, 1e-3) == pytest.approx(5e-4, abs=1e-18)
    closed = 1e-3 * 0.5 * (1 + math.cos(math.pi * 299 / 300))
    assert abs(cosine_lr(299, 300, 1e-3) - closed) <= 1e-15
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1e-3)
