import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfcritic import autodiff as ad
from selfcritic.autodiff import Tensor, grad
from selfcritic.errors import ContractError, DimensionError
from selfcritic.models import ModelSpec, forward, init_params
from selfcritic.params import ParameterSet


def test_init_is_deterministic_per_seed():
    spec = ModelSpec(4, (40, 40), 5)
    assert init_params(spec, 7).equal(init_params(spec, 7))


def test_parameter_count_of_default_layout():
    spec = ModelSpec(4, (40, 40), 5)
    expected = 4 * 40 + 40 + 40 * 40 + 40 + 40 * 5 + 5
    assert expected == 2045
    assert spec.n_params == 2045
    assert init_params(spec, 0).size == 2045


def test_different_seeds_differ():
    spec = ModelSpec(4, (40, 40), 5)
    a, b = init_params(spec, 0), init_params(spec, 1)
    assert a["layer0.weight"].data[0, 0] != b["layer0.weight"].data[0, 0]


def test_biases_start_at_zero_and_weights_within_glorot_limit():
    spec = ModelSpec(6, (10,), 3)
    theta = init_params(spec, 0)
    assert not theta["layer0.bias"].data.any()
    assert np.abs(theta["layer0.weight"].data).max() <= np.sqrt(6.0 / 16)


def test_zero_parameters_give_zero_logits():
    spec = ModelSpec(3, (5,), 4)
    theta = init_params(spec, 0).map(lambda t: Tensor(np.zeros(t.shape)))
    np.testing.assert_array_equal(forward(np.ones((2, 3)), theta).data, np.zeros((2, 4)))


def test_one_layer_linear_hand_case():
    theta = ParameterSet([("layer0.weight", Tensor([[2.0]])), ("layer0.bias", Tensor([1.0]))])
    assert forward(np.array([[3.0]]), theta).data[0, 0] == 7.0


def test_wrong_input_dim_is_contract_error():
    theta = init_params(ModelSpec(3, (4,), 2), 0)
    with pytest.raises(ContractError):
        forward(np.ones((2, 5)), theta)


def test_layout_mismatch_is_contract_error():
    theta = init_params(ModelSpec(3, (4,), 2), 0)
    with pytest.raises(ContractError):
        forward(np.ones((2, 3)), theta, spec=ModelSpec(3, (5,), 2))


def test_forward_is_pure(rng):
    theta = init_params(ModelSpec(3, (4, 4), 2), 0)
    x = rng.normal(size=(6, 3))
    assert forward(x, theta).data.tobytes() == forward(x, theta).data.tobytes()


def test_gradient_reaches_every_tensor(rng):
    theta = init_params(ModelSpec(3, (6, 6), 4), 1).as_leaves()
    x = Tensor(rng.normal(size=(20, 3)))
    g = grad(ad.mean(forward(x, theta)), theta)
    for name, t in g.items():
        if name.endswith("weight") or name.startswith("layer2"):
            assert np.count_nonzero(t.data) > 0, name


def test_flatten_unflatten_round_trip_bitwise():
    theta = init_params(ModelSpec(4, (40, 40), 5), 3)
    flat = theta.flatten()
    assert flat.shape == (1, 2045)
    back = ParameterSet.unflatten(flat, theta.layout)
    assert back.equal(theta)


def test_empty_set_flattens_to_length_zero():
    assert ParameterSet().flatten().shape == (1, 0)


def test_unflatten_length_mismatch():
    theta = init_params(ModelSpec(2, (), 2), 0)
    with pytest.raises(DimensionError):
        ParameterSet.unflatten(np.zeros(theta.size + 1), theta.layout)


def test_duplicate_names_rejected():
    with pytest.raises(ContractError):
        ParameterSet([("a", Tensor(1.0)), ("a", Tensor(2.0))])


@given(st.integers(1, 9), st.lists(st.integers(1, 12), max_size=3), st.integers(1, 7))
def test_parameter_count_formula_matches_layout(d, hidden, c):
    spec = ModelSpec(d, tuple(hidden), c)
    widths = [d, *hidden, c]
    formula = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    theta = init_params(spec, 0)
    assert spec.n_params == formula == theta.size
    assert theta.layout == spec.layout


@given(st.integers(0, 2**31 - 1))
def test_flatten_round_trip_property(seed):
    theta = init_params(ModelSpec(3, (5,), 2), seed)
    assert ParameterSet.unflatten(theta.flat_numpy(), theta.layout).equal(theta)
