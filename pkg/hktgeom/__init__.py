# hktgeom - Chart-based verification of HKT and QKT geometry
# Jets, tensor calculus, special homotheties, quotients and the U(N) bundle construction

__version__ = '0.1.0'

from .exceptions import GeometryError, ScenarioError
from .homothety import TransformSpec, hkt_from_potential, measure_type, parameter_change
from .jetcalc import Chart, TensorField
from .jets import Jet
from .quatgeom import HKTStructure, QuaternionTriple, standard_triple, verify_hkt
from .scenarios import builtin_names, load_scenario, parse_scenario
from .schemas import NumericConfig, Report
from .suites import render, run_suites

__all__ = [
    '__version__', 'Chart', 'GeometryError', 'HKTStructure', 'Jet', 'NumericConfig', 'QuaternionTriple', 'Report',
    'ScenarioError', 'TensorField', 'TransformSpec', 'builtin_names', 'hkt_from_potential', 'load_scenario',
    'measure_type', 'parameter_change', 'parse_scenario', 'render', 'run_suites', 'standard_triple', 'verify_hkt',
]
