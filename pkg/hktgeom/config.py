# hktgeom - Configuration Settings
# Numeric defaults for jet evaluation, sampling and verification tolerances

import os

from dotenv import load_dotenv

load_dotenv()


def _env_float(name, default):
    return float(os.getenv(name, str(default)))


def _env_int(name, default):
    return int(os.getenv(name, str(default)))


# === JET SETTINGS ===
JET_ORDER = _env_int('HKTGEOM_JET_ORDER', 4)  # jets of g; dτ on a quotient needs fourth
POTENTIAL_HEADROOM = 2  # g = dd^c mu: scalar fields carry two more jets than g
FIELD_CACHE_SIZE = _env_int('HKTGEOM_FIELD_CACHE_SIZE', 256)

# === SAMPLING SETTINGS ===
SAMPLE_POINTS = _env_int('HKTGEOM_POINTS', 32)
SAMPLE_SEED = _env_int('HKTGEOM_SEED', 0)
DEFAULT_BOX = (-1.0, 1.0)
MAX_SAMPLING_ROUNDS = 64
SLICE_RADIUS = _env_float('HKTGEOM_SLICE_RADIUS', 0.2)
FIBER_ANNULUS = (0.5, 2.0)  # |x| range for U(N) fiber coordinates
RANDOM_DIRECTIONS = 8
QUOTIENT_SAMPLES = _env_int('HKTGEOM_QUOTIENT_SAMPLES', 16)
BUNDLE_POINTS = _env_int('HKTGEOM_BUNDLE_POINTS', 8)  # U(N) checks run on fewer points

# === TOLERANCE SETTINGS ===
BASE_TOLERANCE = _env_float('HKTGEOM_TOLERANCE', 1e-7)
FOURTH_JET_TOLERANCE = _env_float('HKTGEOM_LOOSE_TOLERANCE', 1e-5)
HERMITIAN_TOLERANCE = 1e-9
FIT_ACCEPTANCE = 1e-6
SINGULAR_FLOOR = 1e-12  # relative to scale**dim
NEGATIVE_CONTROL_FACTOR = 10.0

# Named tolerances used by individual checks
TOLERANCES = {
    'identity': 1e-10,
    'tight': 1e-9,
    'torsion': 1e-8,
    'base': BASE_TOLERANCE,
    'fit': FIT_ACCEPTANCE,
    'loose': FOURTH_JET_TOLERANCE,
}

# === QUOTIENT SETTINGS ===
BETA_NORMALIZATION = 1.0
DEFAULT_LEVEL = 1.0
NEWTON_MAX_ITERATIONS = 40
TRACE_KAPPA = 2.0  # sum_i eps_i g(xi_Y e_i, e_i) = TRACE_KAPPA tau(Y)

# === HEURISTIC SETTINGS ===
HEURISTIC_ATTEMPTS = 20
HEURISTIC_INITIAL_COEFFICIENT = 1.0
POTENTIAL_RK4_STEPS = _env_int('HKTGEOM_RK4_STEPS', 64)

# === LOGGING SETTINGS ===
LOG_LEVEL = os.getenv('HKTGEOM_LOG_LEVEL', 'WARNING')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# === REPORT SETTINGS ===
REPORT_FORMAT = os.getenv('HKTGEOM_REPORT_FORMAT', 'text')
