import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hktgeom.exceptions import OrderExhaustionError, SingularMetricError, ValenceMismatchError
from hktgeom.jetcalc import (Chart, constant_field, dilation_field, exterior_derivative, function_field, interior,
                             inverse_jet, levi_civita, lie_bracket, lie_derivative, metric_norm, riemann_curvature,
                             sectional_curvature, wedge, weyl_tensor)
from hktgeom.jets import Jet
from hktgeom.utils import max_abs, pseudo_orthonormalize


def round_sphere_metric(chart):
    """Unit S^4 in stereographic coordinates: 4|dx|^2 / (1 + |x|^2)^2."""
    return function_field(chart, 'll', lambda x: ((x * x).sum() + 1.0).power(-2) * 4.0 * np.eye(4), 'round',
                          'symmetric')


def test_chart_rejects_small_dimension():
    with pytest.raises(ValueError):
        Chart.euclidean(3)


def test_chart_sampling_respects_guard():
    chart = Chart.euclidean(4, guard=lambda p: p[0] > 0)
    points = chart.sample(10, seed=3)
    assert points.shape == (10, 4)
    assert np.all(points[:, 0] > 0)
    np.testing.assert_array_equal(points, chart.sample(10, seed=3))


@given(st.lists(st.floats(min_value=-2.0, max_value=2.0, allow_nan=False), min_size=4, max_size=4))
@settings(max_examples=15, deadline=None)
def test_d_squared_vanishes(weights):
    chart = Chart.euclidean(4)

    def one_form(x):
        return Jet.stack([x[1] * x[2] * weights[0], x[0] ** 3 * weights[1], (x[3] * weights[2]).exp(),
                          x[0] * x[1] * x[2] * weights[3]])

    alpha = function_field(chart, 'l', one_form, 'alpha')
    dd = exterior_derivative(exterior_derivative(alpha))
    for point in chart.sample(3):
        assert max_abs(dd.value(point)) < 1e-10


def test_wedge_uses_determinant_convention(chart4):
    dx0 = constant_field(chart4, np.eye(4)[0], 'l', 'dx0')
    dx1 = constant_field(chart4, np.eye(4)[1], 'l', 'dx1')
    form = wedge(dx0, dx1).value(np.zeros(4))
    assert form[0, 1] == pytest.approx(1.0)
    assert form[1, 0] == pytest.approx(-1.0)
    np.testing.assert_allclose(wedge(dx1, dx0).value(np.zeros(4)), -form)


def test_interior_of_dilation_in_exact_form(chart4):
    r2 = function_field(chart4, '', lambda x: (x * x).sum(), 'r2')
    point = np.array([0.1, 0.2, -0.3, 0.4])
    value = interior(dilation_field(chart4), exterior_derivative(r2)).value(point)
    assert float(value) == pytest.approx(2.0 * point @ point)


def test_lie_derivative_of_euclidean_metric_along_dilation(chart4):
    g = constant_field(chart4, np.eye(4), 'll', 'g0', 'symmetric')
    lie = lie_derivative(dilation_field(chart4), g)
    for point in chart4.sample(4):
        np.testing.assert_allclose(lie.value(point), 2.0 * np.eye(4), atol=1e-12)


def test_dilation_commutes_with_constant_rotation(chart4):
    X = dilation_field(chart4)
    rotation = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)
    Y = function_field(chart4, 'u', lambda x: Jet.stack([-x[1], x[0], -x[3], x[2]]), 'Y')
    for point in chart4.sample(3):
        assert max_abs(lie_bracket(X, Y).value(point)) < 1e-12
        np.testing.assert_allclose(Y.value(point), rotation @ point)


def test_flat_levi_civita_vanishes(chart4):
    g = constant_field(chart4, np.diag([1.0, 1.0, -1.0, 1.0]), 'll', 'g', 'symmetric')
    gamma = levi_civita(g)
    assert max_abs(gamma.coefficients(np.zeros(4), 2).coeffs) == 0.0


def test_round_sphere_has_unit_sectional_curvature(chart4):
    g = round_sphere_metric(chart4)
    curvature = riemann_curvature(levi_civita(g))
    rng = np.random.default_rng(0)
    for point in chart4.sample(3):
        x, y = rng.standard_normal((2, 4))
        value = sectional_curvature(curvature.value(point), g.value(point), x, y)
        assert value == pytest.approx(1.0, abs=1e-8)


def test_round_sphere_is_conformally_flat(chart4):
    g = round_sphere_metric(chart4)
    curvature = riemann_curvature(levi_civita(g))
    point = np.array([0.3, -0.1, 0.2, 0.5])
    assert max_abs(weyl_tensor(curvature.value(point), g.value(point))) < 1e-8


def test_metric_norm(chart4):
    g = constant_field(chart4, 2.0 * np.eye(4), 'll', 'g', 'symmetric')
    point = np.array([1.0, 0.0, 1.0, 0.0])
    assert float(metric_norm(g, dilation_field(chart4)).value(point)) == pytest.approx(4.0)


def test_capped_leaf_raises_order_exhaustion(chart4):
    g = constant_field(chart4, np.eye(4), 'll', 'g', 'symmetric', max_order=1)
    curvature = riemann_curvature(levi_civita(g))
    with pytest.raises(OrderExhaustionError):
        curvature.value(np.zeros(4))


def test_singular_metric_is_rejected(chart4):
    zero = Jet.constant(np.diag([1.0, 1.0, 1.0, 0.0]), Jet.variables(np.zeros(4), 1).space)
    with pytest.raises(SingularMetricError):
        inverse_jet(zero)


def test_exterior_derivative_requires_alternating_forms(chart4):
    g = constant_field(chart4, np.eye(4), 'll', 'g', 'symmetric')
    with pytest.raises(ValenceMismatchError):
        exterior_derivative(g)


def test_pseudo_orthonormal_frame_pivots_on_largest_norm():
    frame, signs = pseudo_orthonormalize(np.diag([0.5, 3.0, -2.0]))
    np.testing.assert_allclose(signs, [1.0, 1.0, -1.0])
    expected = np.array([[0.0, 1 / np.sqrt(0.5), 0.0], [1 / np.sqrt(3.0), 0.0, 0.0], [0.0, 0.0, 1 / np.sqrt(2.0)]])
    np.testing.assert_allclose(frame, expected, atol=1e-12)


def test_pseudo_orthonormal_frame_escapes_the_null_cone():
    gram = np.array([[0.0, 1.0], [1.0, 0.0]])
    frame, signs = pseudo_orthonormalize(gram)
    np.testing.assert_allclose(signs, [1.0, -1.0])
    np.testing.assert_allclose(frame.T @ gram @ frame, np.diag(signs), atol=1e-12)
