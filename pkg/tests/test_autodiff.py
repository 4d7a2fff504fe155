import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dfilab import autodiff as ad
from dfilab.autodiff import Tensor
from dfilab.nn import central_difference, max_relative_error

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
mats = arrays(np.float64, (3, 4), elements=finite)


def numeric_grad(fn, x):
    return central_difference(lambda v: float(fn(Tensor(v)).data), x.copy(), 1e-6)


def analytic_grad(fn, x):
    t = Tensor(x.copy(), requires_grad=True)
    (g,) = ad.grad(fn(t), [t])
    return g.data


UNARY = {
    "exp": lambda t: ad.exp(t * 0.5).sum(),
    "tanh": lambda t: ad.tanh(t).sum(),
    "sigmoid": lambda t: (ad.sigmoid(t) * ad.sigmoid(t)).sum(),
    "softplus": lambda t: ad.softplus(t).sum(),
    "log": lambda t: ad.log(t * t + 1.0).sum(),
    "sqrt": lambda t: ad.sqrt(t * t + 1.0).sum(),
    "power": lambda t: ad.power(t * t + 1.0, 1.5).sum(),
    "div": lambda t: (1.0 / (t * t + 2.0)).sum(),
    "mean_axis": lambda t: (ad.mean(t, axis=0) * ad.mean(t, axis=0)).sum(),
    "tsum_keepdims": lambda t: (t * ad.tsum(t, axis=1, keepdims=True)).sum(),
    "transpose": lambda t: (ad.matmul(t, ad.transpose(t)) * 0.1).sum(),
    "reshape": lambda t: (ad.reshape(t, (4, 3)) * np.arange(12.0).reshape(4, 3)).sum(),
    "concat": lambda t: (ad.concat([t, t * t], axis=1) ** 2).sum(),
    "getitem": lambda t: (t[:, 1:3] * t[:, 0:2]).sum(),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(x=mats)
def test_op_gradients_match_finite_differences(name, x):
    fn = UNARY[name]
    np.testing.assert_allclose(analytic_grad(fn, x), numeric_grad(fn, x), rtol=1e-5, atol=1e-6)


@given(x=mats)
def test_leaky_relu_gradient_away_from_kink(x):
    x = np.where(x >= 0, x + 0.01, x - 0.01)
    fn = lambda t: (ad.leaky_relu(t, 0.2) * np.arange(12.0).reshape(3, 4)).sum()
    np.testing.assert_allclose(analytic_grad(fn, x), numeric_grad(fn, x), rtol=1e-5, atol=1e-6)


def test_leaky_relu_definition():
    assert ad.leaky_relu(Tensor(np.array([-1.0, 2.0])), 0.2).data.tolist() == [-0.2, 2.0]


@given(a=arrays(np.float64, (3, 4), elements=finite), b=arrays(np.float64, (4,), elements=finite))
def test_broadcast_add_unbroadcasts_gradient(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ga, gb = ad.grad((ta + tb).sum(), [ta, tb])
    assert ga.shape == a.shape and gb.shape == b.shape
    np.testing.assert_array_equal(gb.data, np.full(4, 3.0))


def test_affine_matches_composite():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 2)), rng.standard_normal(2)
    np.testing.assert_allclose(ad.affine(x, w, b).data, x @ w + b, rtol=1e-15)


def test_second_order_through_affine_and_tanh():
    # d/dx of ||d/dx sum(tanh(x W))||^2 against finite differences of the first gradient
    rng = np.random.default_rng(3)
    w = rng.standard_normal((3, 2))
    b = np.zeros(2)

    def grad_norm(x):
        t = Tensor(x, requires_grad=True)
        (g,) = ad.grad(ad.tanh(ad.affine(t, w, b)).sum(), [t], create_graph=True)
        return (g * g).sum(), t

    x = rng.standard_normal((4, 3))
    val, t = grad_norm(x)
    (gg,) = ad.grad(val, [t])
    num = central_difference(lambda v: float(grad_norm(v)[0].data), x.copy(), 1e-6)
    np.testing.assert_allclose(gg.data, num, rtol=1e-5, atol=1e-6)


def test_grad_returns_none_for_unrelated_input():
    a, b = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
    ga, gb = ad.grad((a * 2).sum(), [a, b])
    assert gb is None and np.all(ga.data == 2)


def test_no_grad_records_nothing():
    a = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = a * 3
    assert not y.requires_grad


def test_shared_subexpression_accumulates():
    a = Tensor(np.array([2.0]), requires_grad=True)
    y = a * a
    (g,) = ad.grad((y + y).sum(), [a])
    assert g.data.tolist() == [8.0]


def test_fused_norms_refuse_higher_order():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    out, _, _ = ad.batch_norm_train(x, np.ones(3), np.zeros(3), 1e-5)
    with pytest.raises(NotImplementedError):
        ad.grad((out * out * np.arange(12.0).reshape(4, 3)).sum(), [x], create_graph=True)
    x2 = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    out2 = ad.group_norm(x2, np.ones(6), np.zeros(6), 2, 1e-5)
    with pytest.raises(NotImplementedError):
        ad.grad((out2 * np.arange(24.0).reshape(4, 6)).sum(), [x2], create_graph=True)


def test_group_norm_statistics():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((7, 12)) * 3 + 1
    out = ad.group_norm(Tensor(x), np.ones(12), np.zeros(12), 3, 1e-5).data.reshape(7, 3, 4)
    assert np.abs(out.mean(axis=2)).max() < 1e-6
    assert np.abs(out.var(axis=2) - 1).max() < 1e-4
