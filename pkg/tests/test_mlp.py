import numpy as np
import pytest

from pairvae.errors import ShapeError
from pairvae.nd import LayerSpec, ParamTape, init_mlp, mlp_forward


def test_identity_linear_layer_passes_input_through():
    tape = ParamTape()
    tape.add("W0", np.eye(2))
    tape.add("b0", np.zeros(2))
    out = mlp_forward(tape, np.array([1.0, 2.0]), [LayerSpec(2, 2)])
    assert np.array_equal(out.data, np.array([1.0, 2.0]))


def test_single_layer_hand_arithmetic():
    # weights all ones, bias 0.5: [2, 3] -> [2 + 3 + 0.5]
    tape = ParamTape()
    tape.add("W0", np.array([[1.0], [1.0]]))
    tape.add("b0", np.array([0.5]))
    out = mlp_forward(tape, np.array([2.0, 3.0]), [LayerSpec(2, 1)])
    assert np.allclose(out.data, [5.5])


def test_two_layer_tanh_matches_straight_line_oracle():
    layers = [LayerSpec(3, 4, "tanh"), LayerSpec(4, 2)]
    tape = init_mlp(layers, np.random.default_rng(42))
    x = np.ones(3)

    # independent straight-line reimplementation
    h = np.tanh(x @ tape["W0"].data + tape["b0"].data)
    expected = h @ tape["W1"].data + tape["b1"].data

    out = mlp_forward(tape, x, layers)
    assert np.allclose(out.data, expected, atol=1e-15)
    assert out.shape == (2,)


def test_batched_forward_equals_per_row_forward():
    layers = [LayerSpec(3, 5, "relu"), LayerSpec(5, 2)]
    tape = init_mlp(layers, np.random.default_rng(3))
    xs = np.random.default_rng(4).standard_normal((6, 3))
    batched = mlp_forward(tape, xs, layers).data
    rows = np.stack([mlp_forward(tape, row, layers).data for row in xs])
    assert np.allclose(batched, rows, atol=1e-14)


def test_wrong_input_dim_names_offending_layer():
    layers = [LayerSpec(3, 4), LayerSpec(4, 2)]
    tape = init_mlp(layers, np.random.default_rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        mlp_forward(tape, np.ones(5), layers)


def test_init_bounds_and_zero_biases():
    layers = [LayerSpec(10, 20, "tanh")]
    tape = init_mlp(layers, np.random.default_rng(5))
    bound = np.sqrt(6.0 / 30.0)
    assert np.all(np.abs(tape["W0"].data) <= bound)
    assert np.array_equal(tape["b0"].data, np.zeros(20))


def test_init_is_seed_deterministic():
    layers = [LayerSpec(4, 4, "tanh"), LayerSpec(4, 1)]
    a = init_mlp(layers, np.random.default_rng(11))
    b = init_mlp(layers, np.random.default_rng(11))
    for name, tensor in a.items():
        assert np.array_equal(tensor.data, b[name].data)
