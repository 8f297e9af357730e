import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waverora.numerics import (
    Parameter,
    RngState,
    ShapeError,
    Tensor,
    concat,
    dropout,
    elu1,
    gelu,
    grad_check,
    matmul,
    silu,
    softmax,
)


def matmul_oracle(a, b):
    """Naive three-loop product; the reference matmul is checked against."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


# -- matmul -------------------------------------------------------------------


def test_matmul_identity():
    out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0, 4.0], [5.0, 6.0]]))
    assert np.array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])


def test_matmul_row_times_column():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert np.array_equal(out.data, [[11.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 7))
    b = rng.normal(size=(7, 3))
    assert np.abs(matmul(Tensor(a), Tensor(b)).data - matmul_oracle(a, b)).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(
    m=st.integers(1, 32),
    k=st.integers(1, 32),
    n=st.integers(1, 32),
    seed=st.integers(0, 2**31),
)
def test_matmul_matches_oracle_property(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, k))
    b = rng.normal(size=(k, n))
    assert np.abs(matmul(Tensor(a), Tensor(b)).data - matmul_oracle(a, b)).max() < 1e-12


def test_matmul_batched_matches_per_slice():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 5, 7))
    b = rng.normal(size=(4, 7, 3))
    out = matmul(Tensor(a), Tensor(b)).data
    for i in range(4):
        assert np.abs(out[i] - matmul_oracle(a[i], b[i])).max() < 1e-12


def test_matmul_broadcasts_rank2_against_rank3():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 5, 7))
    b = rng.normal(size=(7, 3))
    out = matmul(Tensor(a), Tensor(b)).data
    for i in range(4):
        assert np.abs(out[i] - matmul_oracle(a[i], b)).max() < 1e-12


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_matmul_rejects_vectors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


# -- activations and softmax ---------------------------------------------------


def test_softmax_uniform():
    out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    assert np.abs(out.data - 1.0 / 3.0).max() < 1e-12


def test_softmax_large_logits_stable():
    out = softmax(Tensor([1000.0, 0.0]), axis=0)
    assert np.all(np.isfinite(out.data))
    assert abs(out.data[0] - 1.0) < 1e-12


def test_softmax_direct_value():
    out = softmax(Tensor([1.0, 2.0, 3.0]), axis=0)
    assert np.abs(out.data - [0.0900, 0.2447, 0.6652]).max() < 1e-3


@settings(max_examples=50, deadline=None)
@given(
    rows=st.integers(1, 6),
    cols=st.integers(1, 6),
    scale=st.floats(0.1, 100.0),
    seed=st.integers(0, 2**31),
)
def test_softmax_rows_sum_to_one(rows, cols, scale, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(rows, cols)) * scale
    out = softmax(Tensor(x), axis=1).data
    assert np.all(out > 0)
    assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-9


def test_silu_values():
    assert silu(Tensor(0.0)).item() == 0.0
    assert abs(silu(Tensor(20.0)).item() - 20.0) < 1e-6
    assert abs(silu(Tensor(1.0)).item() - 0.7311) < 1e-3


def test_gelu_values():
    assert gelu(Tensor(0.0)).item() == 0.0
    assert abs(gelu(Tensor(10.0)).item() - 10.0) < 1e-6
    assert abs(gelu(Tensor(1.0)).item() - 0.8413) < 1e-3


def test_elu1_positive_and_piecewise():
    x = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
    out = elu1(Tensor(x)).data
    assert np.all(out > 0)
    assert np.abs(out[x > 0] - (x[x > 0] + 1.0)).max() < 1e-12
    assert np.abs(out[x < 0] - np.exp(x[x < 0])).max() < 1e-12


# -- rng ------------------------------------------------------------------------


def test_rng_fixed_seed_bit_identical():
    a = RngState(1234)
    b = RngState(1234)
    assert np.array_equal(a.normal((16,)), b.normal((16,)))
    assert np.array_equal(a.uniform((4, 4)), b.uniform((4, 4)))
    assert np.array_equal(a.permutation(50), b.permutation(50))


def test_rng_different_seed_differs():
    assert not np.array_equal(RngState(1).normal((16,)), RngState(2).normal((16,)))


# -- gradient checks -------------------------------------------------------------


def test_grad_check_quadratic():
    theta = Parameter(np.array([1.0, 2.0]), "theta")
    err = grad_check(lambda: (theta * theta).sum(), [theta], epsilon=1e-5)
    assert err < 1e-8
    assert np.abs(theta.grad - [2.0, 4.0]).max() < 1e-12


def test_grad_check_constant():
    theta = Parameter(np.array([1.0, 2.0]), "theta")
    err = grad_check(lambda: (theta * 0.0).sum(), [theta], epsilon=1e-5)
    assert err == 0.0


def test_grad_check_rejects_nonfinite_loss():
    theta = Parameter(np.array([0.0]), "theta")
    with np.errstate(invalid="ignore"), pytest.raises(ValueError):
        grad_check(lambda: (theta / theta).sum(), [theta])


def _rand_param(rng, shape, name):
    return Parameter(rng.normal(size=shape), name)


def test_grad_matmul_and_elementwise():
    rng = np.random.default_rng(7)
    a = _rand_param(rng, (4, 5), "a")
    b = _rand_param(rng, (5, 3), "b")
    c = _rand_param(rng, (4, 3), "c")

    def loss():
        y = matmul(a, b)
        y = y * c + y / (elu1(c) + 1.0) - c
        return (y * y).mean()

    assert grad_check(loss, [a, b, c], epsilon=1e-5) < 1e-4


def test_grad_batched_matmul():
    rng = np.random.default_rng(8)
    a = _rand_param(rng, (3, 4, 5), "a")
    b = _rand_param(rng, (5, 2), "b")

    def loss():
        return (matmul(a, b) * matmul(a, b)).sum()

    assert grad_check(loss, [a, b], epsilon=1e-5) < 1e-4


def test_grad_softmax_activations():
    rng = np.random.default_rng(9)
    x = _rand_param(rng, (4, 6), "x")

    def loss():
        y = softmax(x, axis=1)
        return (silu(y) + gelu(x) * 0.1).sum()

    assert grad_check(loss, [x], epsilon=1e-5) < 1e-4


def test_grad_shape_ops():
    rng = np.random.default_rng(10)
    x = _rand_param(rng, (4, 6), "x")
    y = _rand_param(rng, (4, 2), "y")

    def loss():
        t = x.transpose((1, 0)).reshape((2, 12))
        u = concat([x, y], axis=1)
        v = u[:, 1:5] * t.reshape((4, 6))[:, :4]
        return (v * v).mean() + u.sum(axis=0).mean()

    assert grad_check(loss, [x, y], epsilon=1e-5) < 1e-4


def test_grad_reductions_and_sqrt():
    rng = np.random.default_rng(11)
    x = _rand_param(rng, (5, 4), "x")

    def loss():
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) * (x - mu)).mean(axis=1, keepdims=True)
        z = (x - mu) / (var + 1e-5).sqrt()
        return (z * z * z).sum()

    assert grad_check(loss, [x], epsilon=1e-5) < 1e-4


def test_grad_dropout_with_fixed_stream():
    rng = np.random.default_rng(12)
    x = _rand_param(rng, (6, 6), "x")

    def loss():
        out = dropout(x, 0.4, RngState(99), training=True)
        return (out * out).sum()

    assert grad_check(loss, [x], epsilon=1e-5) < 1e-4


def test_dropout_eval_is_identity():
    x = Tensor(np.ones((3, 3)))
    assert dropout(x, 0.5, RngState(0), training=False) is x


def test_dropout_preserves_expectation():
    x = Tensor(np.ones((200, 200)))
    out = dropout(x, 0.25, RngState(5), training=True)
    assert abs(out.data.mean() - 1.0) < 0.02


def test_detach_blocks_gradient():
    x = Parameter(np.array([3.0]), "x")
    y = x.detach() * x
    y.backward()
    assert np.abs(x.grad - [3.0]).max() < 1e-12


def test_grad_accumulates_across_reuse():
    x = Parameter(np.array([2.0]), "x")
    y = x * x + x * 3.0
    y.backward()
    assert np.abs(x.grad - [7.0]).max() < 1e-12


def test_parameter_keeps_name_and_zero_grad():
    p = Parameter(np.ones((2, 3)), "weights.level0")
    assert p.name == "weights.level0"
    assert p.grad.shape == (2, 3)
    assert np.all(p.grad == 0.0)
