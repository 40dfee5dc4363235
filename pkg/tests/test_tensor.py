import numpy as np
import pytest

from terracer.autodiff import SGD, Adam, Parameter, Tensor, build_optimizer, no_grad
from terracer.autodiff.tensor import is_grad_enabled


def test_shape_invariants():
    t = Tensor(np.arange(6).reshape(2, 3))
    assert t.shape == (2, 3)
    assert t.size == 6
    assert t.dtype == np.float32
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64


def test_product_rule_on_scalars():
    x = Tensor(3.0, requires_grad=True, dtype=np.float64)
    y = Tensor(-2.0, requires_grad=True, dtype=np.float64)
    (x * y).backward()
    assert x.grad == pytest.approx(-2.0)
    assert y.grad == pytest.approx(3.0)


def test_fan_out_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    out = (x * 2.0 + x * 3.0 + x).sum()
    out.backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_backward_is_linear():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    alpha, beta = 0.7, -1.3

    def grads(fn):
        x = Tensor(a.copy(), requires_grad=True, dtype=np.float64)
        fn(x).backward()
        return x.grad

    l1 = lambda x: (x * x).sum()  # noqa: E731
    l2 = lambda x: (x * 3.0).sum()  # noqa: E731
    combined = grads(lambda x: l1(x) * alpha + l2(x) * beta)
    np.testing.assert_allclose(combined, alpha * grads(l1) + beta * grads(l2), rtol=1e-12)


def test_diamond_graph_visits_each_node_once():
    x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    shared = x * x
    out = (shared * 2.0 + shared * 5.0).sum()
    out.backward()
    np.testing.assert_allclose(x.grad, [7.0 * 2 * 2.0])


def test_slicing_and_reshape_gradients():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True, dtype=np.float64)
    (x[1:, ::2].reshape(4) * 2.0).sum().backward()
    expected = np.zeros((3, 4))
    expected[1:, ::2] = 2.0
    np.testing.assert_array_equal(x.grad, expected)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        y = x * 2.0
    assert is_grad_enabled()
    assert not y.requires_grad


def test_non_finite_gradient_is_an_error():
    x = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    y = x * np.inf
    with pytest.raises(FloatingPointError):
        y.sum().backward()


def test_sgd_closed_form_step():
    p = Parameter(np.array([1.0]), dtype=np.float64)
    opt = SGD([p], lr=0.1)
    (p * p * 0.5).sum().backward()
    opt.step()
    assert p.data[0] == pytest.approx(0.9)


@pytest.mark.parametrize("kind,hyper", [("sgd", {"lr": 0.1, "momentum": 0.9}), ("adam", {"lr": 0.05})])
def test_optimizers_converge_on_quadratic(kind, hyper):
    p = Parameter(np.array([4.0]), dtype=np.float64)
    opt = build_optimizer(kind, [p], **hyper)
    for _ in range(500):
        opt.zero_grad()
        ((p - 1.5) * (p - 1.5)).sum().backward()
        opt.step()
    assert p.data[0] == pytest.approx(1.5, abs=1e-3)


def test_optimizer_state_round_trip():
    p = Parameter(np.array([1.0, -2.0]))
    opt = Adam([p])
    (p * p).sum().backward()
    opt.step()
    state = opt.state_dict()
    clone = Adam([Parameter(p.data.copy())])
    clone.load_state_dict(state)
    assert clone.step_count == 1
    np.testing.assert_array_equal(clone.m[0], opt.m[0])


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        build_optimizer("lbfgs", [])
