import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from musicnet import tensor as T
from musicnet.tensor import DegenerateRowError, DimensionError, Tape, Tensor, backward

from gradcases import PRIMITIVES, corre_case
from oracles import grad_check


def test_matmul_identity():
    eye = np.eye(2)
    np.testing.assert_array_equal((Tensor(eye) @ Tensor(eye)).data, eye)
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(a) @ Tensor(eye)).data, a)


def test_matmul_loop_oracle():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    out = (Tensor(a) @ Tensor(b)).data
    for i in range(3):
        for j in range(2):
            acc = 0.0
            for k in range(4):
                acc += a[i, k] * b[k, j]
            assert out[i, j] == pytest.approx(acc, abs=1e-14)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_masked_softmax_examples():
    np.testing.assert_allclose(T.masked_softmax(Tensor([0.0, 0.0, 0.0]), [True] * 3).data, [1 / 3] * 3)
    out = T.masked_softmax(Tensor([10.0, 10.0, -np.inf]), [True, True, False]).data
    np.testing.assert_array_equal(out, [0.5, 0.5, 0.0])
    s = np.array([1.0, 2.0, 3.0])
    direct = np.exp(s) / np.exp(s).sum()
    np.testing.assert_allclose(T.masked_softmax(Tensor(s), [True] * 3).data, direct, rtol=0, atol=1e-12)


def test_masked_softmax_degenerate_row_named():
    mask = np.array([[True, False], [False, False]])
    with pytest.raises(DegenerateRowError, match=r"\(1,\)"):
        T.masked_softmax(Tensor(np.zeros((2, 2))), mask)


@settings(max_examples=60, deadline=None)
@given(
    rows=st.integers(1, 5),
    cols=st.integers(1, 7),
    seed=st.integers(0, 2**31 - 1),
    scale=st.floats(0.01, 300.0),
)
def test_masked_softmax_rows_normalized(rows, cols, seed, scale):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(rows, cols)) * scale
    m = rng.random((rows, cols)) < 0.5
    m[np.arange(rows), rng.integers(0, cols, size=rows)] = True
    y = T.masked_softmax(Tensor(s), m).data
    assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-9)
    # masked entries are exact zeros, bit pattern included
    assert np.all(y[~m].view(np.int64) == 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_attention_pool_matches_explicit_weights(seed):
    rng = np.random.default_rng(seed)
    H, K, D, Tn = rng.integers(1, 5, size=4)
    s = rng.normal(size=(H, K, Tn)) * 5
    m = rng.random((D, Tn)) < 0.5
    m[:, 0] = True
    x = rng.normal(size=(D, Tn))
    y = T.masked_attention_pool(Tensor(s), m, x).data
    for h in range(H):
        for k in range(K):
            for d in range(D):
                w = T.masked_softmax(Tensor(s[h, k]), m[d]).data
                assert y[h, k, d] == pytest.approx(float(w @ np.where(m[d], x[d], 0)), abs=1e-12)


def test_attention_pool_ignores_unobserved_values():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(2, 3, 5))
    m = rng.random((4, 5)) < 0.5
    m[:, 1] = True
    x = rng.normal(size=(4, 5))
    x2 = np.where(m, x, 1e6)
    np.testing.assert_array_equal(
        T.masked_attention_pool(Tensor(s), m, x).data, T.masked_attention_pool(Tensor(s), m, x2).data
    )


def test_attention_pool_underflow_falls_back():
    # channel 1 only sees a position whose score is 1000 below the row max
    s = Tensor(np.array([[0.0, -1000.0]]))
    m = np.array([[True, True], [False, True]])
    x = np.array([[1.0, 2.0], [3.0, 5.0]])
    y = T.masked_attention_pool(s, m, x).data
    assert np.all(np.isfinite(y))
    assert y[0, 1] == 5.0


def test_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = x.sum()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_half_square_gives_identity():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum() * 0.5
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, x.data)


def test_nonscalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        backward(y, tape)


def test_tape_is_topological():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = (x.sin() * x).sum()
    seen = {id(x)}
    for out, inputs, _ in tape.nodes:
        for i in inputs:
            assert id(i) in seen or not i.requires_grad
        seen.add(id(out))
    assert id(y) in seen


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        loss = (x * x + x).sum()
    backward(loss, tape)
    assert x.grad[0] == 5.0


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients(name, seed):
    assert grad_check(*PRIMITIVES[name](seed)) < 1e-4


def test_encoder_reconstruction_gradients():
    assert grad_check(*corre_case(0)) < 1e-4
