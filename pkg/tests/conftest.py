import numpy as np
import pytest

from hktgeom.jetcalc import Chart, constant_field, dilation_field, function_field
from hktgeom.quatgeom import HKTStructure, standard_triple
from hktgeom.schemas import NumericConfig


def _outside_small_ball(point):
    return float(point @ point) > 0.25


@pytest.fixture
def chart4():
    return Chart.euclidean(4, (-1.0, 1.0), name='H')


@pytest.fixture
def chart8():
    return Chart.euclidean(8, (-1.0, 1.0), _outside_small_ball, name='H2')


@pytest.fixture
def punctured_chart4():
    return Chart.euclidean(4, (-1.0, 1.0), lambda p: float(p @ p) > 0.09, name='H*')


@pytest.fixture
def flat_hkt4(chart4):
    metric = constant_field(chart4, np.eye(4), 'll', 'g0', 'symmetric')
    return HKTStructure(metric, standard_triple(chart4), 'flat')


@pytest.fixture
def flat_hkt8(chart8):
    metric = constant_field(chart8, np.eye(8), 'll', 'g0', 'symmetric')
    return HKTStructure(metric, standard_triple(chart8), 'flat')


@pytest.fixture
def quartic_potential(punctured_chart4):
    return function_field(punctured_chart4, '', lambda x: (x * x).sum() ** 2, 'mu')


@pytest.fixture
def dilation4(chart4):
    return dilation_field(chart4)


@pytest.fixture
def dilation8(chart8):
    return dilation_field(chart8)


@pytest.fixture
def numeric():
    return NumericConfig(points=6, seed=0)
