# hktgeom - Utility Functions
# Logging setup, point sampling, quaternion algebra and residual helpers

import logging
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from . import config
from .exceptions import DomainError, SingularMetricError

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None):
    """Configure root logging once for command-line use."""
    logging.basicConfig(level=getattr(logging, (level or config.LOG_LEVEL).upper(), logging.WARNING),
                        format=config.LOG_FORMAT)


# === SAMPLING ===

def halton_points(lower: Sequence[float], upper: Sequence[float], count: int, seed: int = 0,
                  guard: Optional[Callable[[np.ndarray], bool]] = None) -> np.ndarray:
    """Scrambled Halton points in the box [lower, upper], filtered by `guard`."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    sampler = qmc.Halton(d=lower.size, scramble=True, seed=seed)
    accepted = []
    for _ in range(config.MAX_SAMPLING_ROUNDS):
        batch = qmc.scale(sampler.random(n=max(2 * count, 16)), lower, upper)
        for point in batch:
            if guard is None or guard(point):
                accepted.append(point)
                if len(accepted) == count:
                    logger.debug(f"sampled {count} points (seed={seed})")
                    return np.array(accepted)
    raise DomainError(f"only {len(accepted)} of {count} sample points satisfy the domain guard")


def random_vectors(count: int, dim: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((count, dim))


def random_rotation(seed: int = 0) -> np.ndarray:
    """A random element of SO(3)."""
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# === QUATERNIONS ===
# Basis (1, i, j, k); QUATERNION_TABLE[c, a, b] is the e_c component of e_a * e_b.

def _quaternion_table() -> np.ndarray:
    table = np.zeros((4, 4, 4))
    products = {
        (0, 0): (0, 1), (0, 1): (1, 1), (0, 2): (2, 1), (0, 3): (3, 1),
        (1, 0): (1, 1), (1, 1): (0, -1), (1, 2): (3, 1), (1, 3): (2, -1),
        (2, 0): (2, 1), (2, 1): (3, -1), (2, 2): (0, -1), (2, 3): (1, 1),
        (3, 0): (3, 1), (3, 1): (2, 1), (3, 2): (1, -1), (3, 3): (0, -1),
    }
    for (a, b), (c, sign) in products.items():
        table[c, a, b] = sign
    return table


QUATERNION_TABLE = _quaternion_table()
UNITS = np.eye(4)


def qmul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.einsum('cab,...a,...b->...c', QUATERNION_TABLE, p, q)


def qconj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q) * np.array([1.0, -1.0, -1.0, -1.0])


def qinv(q: np.ndarray) -> np.ndarray:
    return qconj(q) / np.sum(np.asarray(q) ** 2, axis=-1, keepdims=True)


def right_multiplication(q: np.ndarray) -> np.ndarray:
    """4x4 matrix of v -> v q."""
    return np.einsum('cab,b->ca', QUATERNION_TABLE, q)


def left_multiplication(q: np.ndarray) -> np.ndarray:
    """4x4 matrix of v -> q v."""
    return np.einsum('cab,a->cb', QUATERNION_TABLE, q)


def standard_triple_matrices(groups: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """I, J, K on H^groups acting by negated right multiplication by i, j, k."""
    return tuple(np.kron(np.eye(groups), -right_multiplication(UNITS[u])) for u in (1, 2, 3))


# === RESIDUALS ===

def max_abs(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values))) if values.size else 0.0


def relative_spread(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    mean = np.mean(values)
    if mean == 0:
        return float('inf')
    return float((np.max(values) - np.min(values)) / abs(mean))


def least_squares_ratio(samples: Sequence[np.ndarray], references: Sequence[np.ndarray]) -> float:
    """Scalar s minimising sum |sample - s reference|^2."""
    num = sum(float(np.sum(s * r)) for s, r in zip(samples, references))
    den = sum(float(np.sum(r * r)) for r in references)
    return num / den if den else 0.0


def signature(matrix: np.ndarray, floor: float = 1e-12) -> Tuple[int, int]:
    """(positive, negative) eigenvalue counts of a symmetric matrix."""
    eigenvalues = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    scale = max(np.max(np.abs(eigenvalues)), 1.0)
    if np.min(np.abs(eigenvalues)) < floor * scale:
        raise SingularMetricError(f"degenerate bilinear form (smallest |eigenvalue| {np.min(np.abs(eigenvalues)):.3e})")
    return int(np.sum(eigenvalues > 0)), int(np.sum(eigenvalues < 0))


def pseudo_orthonormalize(gram: np.ndarray, basis: Optional[np.ndarray] = None,
                          floor: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt for an indefinite symmetric form.

    Columns of `basis` (default: the identity) are pivoted on the largest
    |g(v,v)| among the remaining vectors, ties going to the smallest index.
    Returns (frame as columns, signs) with +1 signs first.
    """
    n = gram.shape[0]
    vectors = np.eye(n) if basis is None else np.array(basis, dtype=float)
    remaining = [vectors[:, i].copy() for i in range(vectors.shape[1])]
    frame, signs = [], []
    scale = max(np.max(np.abs(gram)), 1.0)
    while remaining:
        norms = [abs(v @ gram @ v) for v in remaining]
        best = int(np.argmax(norms))
        if norms[best] < floor * scale:
            # all remaining vectors null: mix with the first to escape the null cone
            mixed = None
            for k in range(1, len(remaining)):
                candidate = remaining[0] + remaining[k]
                if abs(candidate @ gram @ candidate) >= floor * scale:
                    mixed = candidate
                    break
            if mixed is None:
                raise SingularMetricError("form is degenerate on the given basis")
            remaining[0] = mixed
            continue
        v = remaining.pop(best)
        norm = v @ gram @ v
        e = v / np.sqrt(abs(norm))
        sign = 1.0 if norm > 0 else -1.0
        frame.append(e)
        signs.append(sign)
        remaining = [w - sign * (e @ gram @ w) * e for w in remaining]
    frame = np.array(frame).T
    signs = np.array(signs)
    order = np.argsort(-signs, kind='stable')
    return frame[:, order], signs[order]
