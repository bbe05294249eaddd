import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from musicnet import losses
from musicnet.losses import (
    EmptyMaskWarning,
    LossWeights,
    adjust_loss,
    cls_loss,
    contrastive_loss,
    forecast_loss,
    recon_loss,
    total_loss,
)
from musicnet.tensor import Tensor


def masked_loop(pred, target, mask):
    tot, n = 0.0, 0
    for idx in np.ndindex(pred.shape):
        if mask[idx]:
            tot += (pred[idx] - target[idx]) ** 2
            n += 1
    return tot / n


def test_recon_examples():
    x = np.arange(6.0).reshape(1, 3, 2)
    m = np.zeros_like(x, dtype=bool)
    m[0, 1, 1] = True
    assert recon_loss(Tensor(x), x, m).item() == 0.0
    y = x.copy()
    y[0, 1, 1] += 0.5
    assert recon_loss(Tensor(y), x, m).item() == 0.25


def test_recon_empty_mask_warns():
    x = np.zeros((1, 2, 2))
    with pytest.warns(EmptyMaskWarning):
        assert recon_loss(Tensor(x), x, np.zeros_like(x, dtype=bool)).item() == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_recon_and_forecast_match_loop(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 5, 2))
    m = rng.random((3, 5, 2)) < 0.4
    m[0, 0, 0] = True
    want = masked_loop(p, y, m)
    assert abs(recon_loss(Tensor(p), y, m).item() - want) <= 1e-12
    assert abs(forecast_loss(Tensor(p), y, m).item() - want) <= 1e-12


def test_forecast_examples():
    y = np.ones((1, 3, 1))
    m = np.array([[[True], [False], [False]]])
    assert forecast_loss(Tensor(y), y, m).item() == 0.0
    assert forecast_loss(Tensor(y + 2.0), y, m).item() == 4.0
    with pytest.raises(ValueError, match="no valid"):
        forecast_loss(Tensor(y), y, np.zeros_like(m))


def test_adjust_examples():
    c = np.full((1, 4, 2), 1.5)
    assert adjust_loss(Tensor(np.full((1, 8, 2), 1.5)), Tensor(c)).item() == 0.0
    a, b, m_ = 0.2, 1.0, 0.3
    got = adjust_loss(Tensor(np.array([[[a], [b]]])), Tensor(np.array([[[m_]]]))).item()
    assert got == pytest.approx(((a + b) / 2 - m_) ** 2, abs=1e-15)
    with pytest.raises(ValueError):
        adjust_loss(Tensor(np.zeros((1, 5, 1))), Tensor(np.zeros((1, 2, 1))))


@pytest.mark.parametrize("seed", range(5))
def test_adjust_matches_groupby(seed):
    rng = np.random.default_rng(seed)
    Tc, D = 4, 3
    fine, coarse = rng.normal(size=(Tc * 2, D)), rng.normal(size=(Tc, D))
    cm = rng.random((Tc, D)) < 0.7
    cm[0, 0] = True
    tot, n = 0.0, 0
    for w in range(Tc):
        for d in range(D):
            if cm[w, d]:
                pooled = (fine[2 * w, d] + fine[2 * w + 1, d]) / 2
                tot += (pooled - coarse[w, d]) ** 2
                n += 1
    got = adjust_loss(Tensor(fine), Tensor(coarse), cm).item()
    assert abs(got - tot / n) <= 1e-12


def test_adjust_with_fine_mask_uses_observed_cells():
    fine = np.array([[1.0], [5.0], [2.0]])
    coarse = np.array([[0.0]])
    pool = np.ones((1, 3))
    fm = np.array([[True], [False], [True]])
    got = adjust_loss(Tensor(fine), Tensor(coarse), None, pool, fm).item()
    assert got == pytest.approx(1.5**2, abs=1e-15)


def contrastive_scalar(a, b):
    """Direct evaluation of the cross-scale contrastive objective."""
    norm = lambda v: v / np.sqrt((v * v).sum())
    a = [norm(v) for v in a]
    b = [norm(v) for v in b]
    B = len(a)
    tot = 0.0
    for i in range(B):
        den = 0.0
        for j in range(B):
            den += math.exp(float(a[i] @ b[j]))
            if j != i:
                den += math.exp(float(a[i] @ a[j]))
        tot += -math.log(math.exp(float(a[i] @ b[i])) / den)
    return tot / B


def test_contrastive_orthonormal_example():
    a = np.eye(2)
    got = contrastive_loss(Tensor(a), Tensor(a)).item()
    # positive e^1, one cross negative e^0, one self negative e^0
    want = -math.log(math.e / (math.e + 1 + 1))
    assert abs(got - want) <= 1e-12
    assert abs(got - contrastive_scalar(a, a)) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_contrastive_matches_scalar(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(4, 6)) * 30, rng.normal(size=(4, 6))
    assert abs(contrastive_loss(Tensor(a), Tensor(b)).item() - contrastive_scalar(a, b)) <= 1e-12


def test_contrastive_needs_negatives():
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))))


def test_contrastive_batch_permutation():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    x = contrastive_loss(Tensor(a), Tensor(b)).item()
    y = contrastive_loss(Tensor(a[perm]), Tensor(b[perm])).item()
    assert abs(x - y) <= 1e-12


def test_cls_examples():
    assert cls_loss(Tensor(np.zeros((4, 2))), [0, 1, 1, 0]).item() == pytest.approx(math.log(2), abs=1e-15)
    confident = np.array([[50.0, -50.0], [-50.0, 50.0]])
    assert cls_loss(Tensor(confident), [0, 1]).item() < 1e-40


def test_cls_balanced_loop_oracle():
    rng = np.random.default_rng(2)
    labels = np.array([0] * 9 + [1])
    logits = rng.normal(size=(10, 2))
    ce = [float(np.log(np.exp(l).sum()) - l[y]) for l, y in zip(logits, labels)]
    per_class = [np.mean([c for c, y in zip(ce, labels) if y == k]) for k in (0, 1)]
    assert abs(cls_loss(Tensor(logits), labels).item() - np.mean(per_class)) <= 1e-12
    # equal per-class errors: balanced equals plain mean
    same = np.tile([[0.3, -0.1]], (10, 1))
    same[labels == 1] = [-0.1, 0.3]
    plain = float(np.mean([np.log(np.exp(l).sum()) - l[y] for l, y in zip(same, labels)]))
    assert abs(cls_loss(Tensor(same), labels).item() - plain) <= 1e-12


def test_cls_absent_class_skipped():
    logits = np.random.default_rng(3).normal(size=(3, 3))
    labels = [0, 2, 2]
    ce = [float(np.log(np.exp(l).sum()) - l[y]) for l, y in zip(logits, labels)]
    want = (ce[0] + (ce[1] + ce[2]) / 2) / 2
    assert abs(cls_loss(Tensor(logits), labels).item() - want) <= 1e-12


def test_total_examples():
    w0 = LossWeights(0.0, 0.0, 0.0)
    assert total_loss(3.0, 5.0, 7.0, 11.0, w0, 4, "classify") == 3.0 / 4
    w = LossWeights(1.0, 1.0, 1.0)
    assert total_loss(3.0, 5.0, 7.0, 11.0, w, 2, "classify") == 3.0 / 2 + 5.0 + 7.0 + 11.0
    assert total_loss(3.0, 5.0, 7.0, 11.0, w, 2, "interpolate") == 3.0 / 2 + 5.0 + 7.0


@settings(max_examples=50, deadline=None)
@given(
    parts=st.lists(st.floats(0, 100), min_size=4, max_size=4),
    lam=st.lists(st.floats(0, 10), min_size=3, max_size=3),
    L=st.integers(2, 8),
)
def test_total_recombination_and_linearity(parts, lam, L):
    r, a, c, t = parts
    w = LossWeights(*lam)
    got = total_loss(r, a, c, t, w, L, "forecast")
    want = r / L + lam[0] * a / (L - 1) + lam[1] * c / (L - 1) + lam[2] * t
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
    # linear in lambda1
    w2 = LossWeights(2 * lam[0], lam[1], lam[2])
    assert total_loss(r, a, c, t, w2, L, "forecast") - got == pytest.approx(lam[0] * a / (L - 1), rel=1e-9, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_losses_nonnegative_and_mask_insensitive(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6, 3))
    m = rng.random((2, 6, 3)) < 0.5
    m[0, 0, 0] = True
    noise = np.where(m, 0.0, rng.normal(size=m.shape) * 1e3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyMaskWarning)
        a = recon_loss(Tensor(p), y, m).item()
        b = recon_loss(Tensor(p + noise), y + noise, m).item()
    assert a >= 0 and a == b
    assert forecast_loss(Tensor(p), y, m).item() == forecast_loss(Tensor(p + noise), y - noise, m).item()
    cm = m[:, :3]
    coarse = rng.normal(size=(2, 3, 3))
    cnoise = np.where(cm, 0.0, 1e3)
    x1 = adjust_loss(Tensor(p), Tensor(coarse), cm).item()
    x2 = adjust_loss(Tensor(p), Tensor(coarse + cnoise), cm).item()
    assert x1 >= 0 and x1 == x2
    h1, h2 = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    assert contrastive_loss(Tensor(h1), Tensor(h2)).item() >= 0
    assert cls_loss(Tensor(rng.normal(size=(4, 2))), [0, 1, 1, 0]).item() >= 0


def test_unknown_task():
    with pytest.raises(ValueError):
        total_loss(0.0, 0.0, 0.0, None, LossWeights(), 2, "regress")
    assert "none" in losses.TASKS
