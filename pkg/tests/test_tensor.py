import numpy as np
import pytest

from pairvae.errors import ContractError, ShapeError
from pairvae.nd import ParamTape, Tensor, backward


def test_add_mul_values_match_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    out = Tensor(a) * Tensor(b) + Tensor(a)
    assert np.array_equal(out.data, a * b + a)


def test_linear_backward_is_input():
    # loss = sum(x @ W) with x = [1, 1] -> dW fills with ones
    tape = ParamTape()
    w = tape.add("W", np.array([[2.0], [5.0]]))
    loss = (Tensor(np.array([1.0, 1.0])) @ w).sum()
    grads = backward(loss, tape)
    assert np.array_equal(grads["W"], np.array([[1.0], [1.0]]))


def test_quadratic_residual_gradient_analytic():
    # loss = ||x @ W - y||^2  ->  dW = x^T * 2(x @ W - y)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(3)
    y = rng.standard_normal(2)
    tape = ParamTape()
    w = tape.add("W", rng.standard_normal((3, 2)))
    r = Tensor(x) @ w - y
    grads = backward((r * r).sum(), tape)
    expected = np.outer(x, 2.0 * (x @ w.data - y))
    assert np.allclose(grads["W"], expected, atol=1e-12)


def test_unused_parameter_gets_zero_gradient():
    tape = ParamTape()
    used = tape.add("used", np.ones(2))
    tape.add("unused", np.ones(3))
    grads = backward((used * used).sum(), tape)
    assert np.array_equal(grads["used"], 2.0 * np.ones(2))
    assert np.array_equal(grads["unused"], np.zeros(3))


def test_shared_node_accumulates_both_paths():
    t = Tensor(np.array([3.0]))
    y = t * t  # dy/dt = 2t through two uses of the same parent
    y.sum().backward()
    assert np.allclose(t.grad, [6.0])


def test_broadcast_bias_gradient_sums_over_rows():
    tape = ParamTape()
    b = tape.add("b", np.zeros(3))
    h = Tensor(np.ones((4, 3))) + b
    grads = backward(h.sum(), tape)
    assert np.array_equal(grads["b"], np.full(3, 4.0))


def test_slice_cols_scatter_gradient():
    tape = ParamTape()
    p = tape.add("p", np.arange(6.0).reshape(2, 3))
    grads = backward(p.slice_cols(1, 3).sum(), tape)
    assert np.array_equal(grads["p"], np.array([[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]]))


def test_clamp_blocks_gradient_outside_range():
    tape = ParamTape()
    p = tape.add("p", np.array([-2.0, 0.5, 2.0]))
    grads = backward(p.clamp(-1.0, 1.0).sum(), tape)
    assert np.array_equal(grads["p"], np.array([0.0, 1.0, 0.0]))


def test_sqrt_at_zero_has_zero_subgradient():
    tape = ParamTape()
    p = tape.add("p", np.array([0.0, 4.0]))
    grads = backward(p.sqrt().sum(), tape)
    assert np.array_equal(grads["p"], np.array([0.0, 0.25]))


def test_axis_sum_then_mean_reduction():
    tape = ParamTape()
    p = tape.add("p", np.ones((2, 3)))
    grads = backward(p.sum(axis=1).mean(), tape)
    assert np.allclose(grads["p"], np.full((2, 3), 0.5))


def test_ops_are_pure_and_deterministic():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 5))
    w = rng.standard_normal((5, 3))

    def run():
        return ((Tensor(x) @ Tensor(w)).tanh().exp() / 2.0).sum().item()

    assert run() == run()


def test_backward_rejects_non_scalar():
    with pytest.raises(ContractError):
        Tensor(np.ones(3)).backward()


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 5)))


def test_duplicate_parameter_name_rejected():
    tape = ParamTape()
    tape.add("w", np.zeros(1))
    with pytest.raises(ContractError):
        tape.add("w", np.zeros(1))


def test_tape_iteration_order_is_insertion_order():
    tape = ParamTape()
    for name in ("z", "a", "m"):
        tape.add(name, np.zeros(1))
    assert tape.names() == ("z", "a", "m")
