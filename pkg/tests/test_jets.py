import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hktgeom.exceptions import DomainError, OrderExhaustionError
from hktgeom.jets import Jet, antiderivative, compose_at, contract, get_space, inverse

coordinates = st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), min_size=3, max_size=3)


def sample_function(x):
    return x[0].exp() * x[1] + x[2] ** 3


def test_space_prefix_and_size():
    space = get_space(3, 2)
    assert space.size == 10
    assert space.prefix(0) == 1
    assert space.prefix(1) == 4
    assert space.exponents[:4] == [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]


def test_truncation_is_a_prefix():
    x = Jet.variables([0.3, -0.2, 0.5], 4)
    f = sample_function(x)
    low = sample_function(Jet.variables([0.3, -0.2, 0.5], 2))
    np.testing.assert_allclose(f.truncate(2).coeffs, low.coeffs, atol=1e-14)


@given(coordinates)
@settings(max_examples=25, deadline=None)
def test_first_derivatives_match_finite_differences(point):
    point = np.array(point)
    jet = sample_function(Jet.variables(point, 2))
    gradient = jet.grad().value
    h = 1e-6
    for i in range(3):
        step = np.zeros(3)
        step[i] = h
        plus = sample_function(Jet.variables(point + step, 0)).value
        minus = sample_function(Jet.variables(point - step, 0)).value
        assert gradient[i] == pytest.approx((plus - minus) / (2 * h), abs=1e-6)


@given(coordinates, coordinates)
@settings(max_examples=25, deadline=None)
def test_leibniz_rule(point, weights):
    x = Jet.variables(np.array(point), 3)
    f = x[0] * weights[0] + x[1] * x[2]
    g = (x[2] * weights[1] + 2.0).exp()
    product = (f * g).grad()
    expected = f.grad() * g.truncate(2) + f.truncate(2) * g.grad()
    np.testing.assert_allclose(product.coeffs, expected.coeffs, atol=1e-12)


def test_log_inverts_exp():
    x = Jet.variables([0.7, 0.1, 0.2], 4)
    f = x[0] * x[0] + 1.0
    np.testing.assert_allclose(f.log().exp().coeffs, f.coeffs, atol=1e-12)


def test_fractional_power_of_a_square():
    x = Jet.variables([0.8, 0.1, 0.2], 4)
    np.testing.assert_allclose((x[0] * x[0]).power(0.5).coeffs, x[0].coeffs, atol=1e-12)


def test_matrix_inverse():
    x = Jet.variables([0.2, -0.4, 0.1], 3)
    matrix = Jet.stack([Jet.stack([x[0] + 2.0, x[1]]), Jet.stack([x[1], x[2] * x[2] + 1.0])])
    product = contract('ij,jk->ik', matrix, inverse(matrix))
    np.testing.assert_allclose(product.value, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(product.coeffs[..., 1:], 0.0, atol=1e-12)


def test_contract_matches_einsum_on_values():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 3))
    x = Jet.variables([0.1, 0.2, 0.3], 2)
    jet = contract('ij,j->i', a, x)
    np.testing.assert_allclose(jet.value, a @ np.array([0.1, 0.2, 0.3]))
    assert np.allclose(contract('ij,jk->ik', a, a), a @ a)


def test_compose_at_substitutes_a_jet_valued_point():
    point = np.array([0.3, 0.4])
    x = Jet.variables(point, 3)
    inner = x * 2.0
    outer = Jet.variables(2.0 * point, 3)
    composed = compose_at(outer[0] * outer[0] + outer[1], inner)
    expected = x[0] * x[0] * 4.0 + x[1] * 2.0
    np.testing.assert_allclose(composed.coeffs, expected.coeffs, atol=1e-12)


def test_antiderivative_recovers_function():
    x = Jet.variables([0.2, 0.5, -0.3], 3)
    f = sample_function(x)
    recovered = antiderivative(f.grad(), float(f.value))
    np.testing.assert_allclose(recovered.coeffs, f.coeffs, atol=1e-12)


def test_differentiating_order_zero_raises():
    with pytest.raises(OrderExhaustionError):
        Jet.variables([0.1, 0.2], 0)[0].derivative(0)


def test_log_of_negative_value_raises():
    with pytest.raises(DomainError):
        (Jet.variables([-0.5, 0.2], 2)[0]).log()


def test_abs_at_zero_raises():
    with pytest.raises(DomainError):
        Jet.variables([0.0, 0.2], 2)[0].abs()
