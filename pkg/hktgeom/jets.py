"""
Truncated multivariate Taylor jets.

A Jet holds a tensor of Taylor expansions around a common base point, all
truncated at the same total degree. Coefficients live in the last array axis;
monomials are ordered by total degree and then lexicographically, so that the
monomials of degree <= r always form a prefix. Truncation is therefore a slice.

The coefficient of x^alpha is d^alpha f / alpha!, i.e. plain Taylor
coefficients, so multiplication is the truncated Cauchy product.
"""

import itertools
import logging
from functools import lru_cache
from math import factorial
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from .exceptions import DomainError, OrderExhaustionError, ValenceMismatchError

logger = logging.getLogger(__name__)

_LETTERS = 'abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ'


class JetSpace:
    """Monomial bookkeeping for jets in `dim` variables up to total degree `order`."""

    def __init__(self, dim: int, order: int):
        if dim < 1 or order < 0:
            raise ValueError(f"invalid jet space dim={dim}, order={order}")
        self.dim = dim
        self.order = order
        exponents = []
        offsets = []
        for degree in range(order + 1):
            for combo in itertools.combinations_with_replacement(range(dim), degree):
                exponent = [0] * dim
                for i in combo:
                    exponent[i] += 1
                exponents.append(tuple(exponent))
            offsets.append(len(exponents))
        self.exponents: List[Tuple[int, ...]] = exponents
        self.index = {e: n for n, e in enumerate(exponents)}
        self.size = len(exponents)
        self._offsets = offsets
        self._table = None
        self._reducer = None
        self._derivative_maps = None
        self._parents = None

    def __repr__(self):
        return f"JetSpace(dim={self.dim}, order={self.order}, size={self.size})"

    def prefix(self, order: int) -> int:
        """Number of monomials of total degree <= order."""
        return self._offsets[min(order, self.order)]

    def product_table(self):
        """Index triples (left, right, target) of all monomial pairs with degree <= order."""
        if self._table is None:
            left, right, target = [], [], []
            for a, ea in enumerate(self.exponents):
                budget = self.order - sum(ea)
                for b in range(self.prefix(budget)):
                    eb = self.exponents[b]
                    left.append(a)
                    right.append(b)
                    target.append(self.index[tuple(x + y for x, y in zip(ea, eb))])
            left = np.asarray(left, dtype=np.intp)
            right = np.asarray(right, dtype=np.intp)
            target = np.asarray(target, dtype=np.intp)
            pairs = len(target)
            self._reducer = sparse.csr_matrix(
                (np.ones(pairs), (target, np.arange(pairs))), shape=(self.size, pairs))
            self._table = (left, right, target)
            logger.debug(f"built product table for {self}: {pairs} pairs")
        return self._table

    def reduce(self, products: np.ndarray) -> np.ndarray:
        """Sum pairwise coefficient products (last axis) into monomial slots."""
        self.product_table()
        lead = products.shape[:-1]
        flat = products.reshape(-1, products.shape[-1])
        out = np.asarray(self._reducer @ flat.T).T
        return out.reshape(lead + (self.size,))

    def derivative_maps(self):
        """For each variable i: (source index, factor) arrays producing d/dx_i in the order-1 space."""
        if self._derivative_maps is None:
            maps = []
            lower = self.prefix(self.order - 1) if self.order > 0 else 0
            for i in range(self.dim):
                sources = np.empty(lower, dtype=np.intp)
                factors = np.empty(lower)
                for t in range(lower):
                    e = list(self.exponents[t])
                    e[i] += 1
                    sources[t] = self.index[tuple(e)]
                    factors[t] = e[i]
                maps.append((sources, factors))
            self._derivative_maps = maps
        return self._derivative_maps

    def parents(self):
        """For each monomial of degree >= 1: (index of monomial with one variable removed, variable)."""
        if self._parents is None:
            parent = np.zeros(self.size, dtype=np.intp)
            variable = np.zeros(self.size, dtype=np.intp)
            for n, e in enumerate(self.exponents[1:], start=1):
                i = next(k for k, v in enumerate(e) if v)
                reduced = list(e)
                reduced[i] -= 1
                parent[n] = self.index[tuple(reduced)]
                variable[n] = i
            self._parents = (parent, variable)
        return self._parents


@lru_cache(maxsize=None)
def get_space(dim: int, order: int) -> JetSpace:
    return JetSpace(dim, order)


Operand = Union['Jet', np.ndarray, float, int]


class Jet:
    """A tensor of truncated Taylor expansions sharing one JetSpace."""

    __slots__ = ('coeffs', 'space')
    __array_priority__ = 1000

    def __init__(self, coeffs: np.ndarray, space: JetSpace):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != space.size:
            raise ValueError(f"coefficient axis {coeffs.shape[-1]} does not match {space}")
        self.coeffs = coeffs
        self.space = space

    # -- construction -------------------------------------------------------

    @classmethod
    def constant(cls, value, space: JetSpace) -> 'Jet':
        value = np.asarray(value, dtype=float)
        coeffs = np.zeros(value.shape + (space.size,))
        coeffs[..., 0] = value
        return cls(coeffs, space)

    @classmethod
    def zeros(cls, shape, space: JetSpace) -> 'Jet':
        return cls(np.zeros(tuple(shape) + (space.size,)), space)

    @classmethod
    def variables(cls, point: Sequence[float], order: int) -> 'Jet':
        """Coordinate functions x^i expanded at `point`; shape (dim,)."""
        point = np.asarray(point, dtype=float)
        space = get_space(point.size, order)
        coeffs = np.zeros((point.size, space.size))
        coeffs[:, 0] = point
        if order > 0:
            for i in range(point.size):
                coeffs[i, 1 + i] = 1.0
        return cls(coeffs, space)

    @staticmethod
    def stack(items: Sequence[Operand], axis: int = 0) -> 'Jet':
        jets = [item for item in items if isinstance(item, Jet)]
        if not jets:
            raise ValueError("stack needs at least one Jet")
        space = min((j.space for j in jets), key=lambda s: s.order)
        lifted = [lift(item, space).coeffs for item in items]
        if axis < 0:
            axis -= 1
        return Jet(np.stack(lifted, axis=axis), space)

    # -- shape --------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.coeffs.shape[:-1]

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def coefficient(self, multi_index: Iterable[int]) -> np.ndarray:
        return self.coeffs[..., self.space.index[tuple(multi_index)]]

    def is_constant(self) -> bool:
        return not np.any(self.coeffs[..., 1:])

    def __getitem__(self, key) -> 'Jet':
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.coeffs[key + (slice(None),)], self.space)

    def __repr__(self):
        return f"Jet(shape={self.shape}, order={self.order}, dim={self.dim})"

    def transpose(self, *axes) -> 'Jet':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(len(self.shape))))
        return Jet(self.coeffs.transpose(tuple(axes) + (len(self.shape),)), self.space)

    def swapaxes(self, a: int, b: int) -> 'Jet':
        return Jet(np.swapaxes(self.coeffs, a, b), self.space)

    def reshape(self, *shape) -> 'Jet':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Jet(self.coeffs.reshape(tuple(shape) + (self.space.size,)), self.space)

    def sum(self, axis=None) -> 'Jet':
        if axis is None:
            axis = tuple(range(len(self.shape)))
        return Jet(self.coeffs.sum(axis=axis), self.space)

    def truncate(self, order: int) -> 'Jet':
        if order == self.order:
            return self
        if order > self.order:
            raise ValueError(f"cannot raise jet order {self.order} to {order}")
        space = get_space(self.dim, order)
        return Jet(self.coeffs[..., :space.size], space)

    # -- arithmetic ---------------------------------------------------------

    def __neg__(self):
        return Jet(-self.coeffs, self.space)

    def __add__(self, other: Operand):
        if isinstance(other, Jet):
            a, b = common(self, other)
            return Jet(a.coeffs + b.coeffs, a.space)
        other = np.asarray(other, dtype=float)
        coeffs = np.array(np.broadcast_to(self.coeffs, np.broadcast_shapes(self.shape, other.shape) + (self.space.size,)))
        coeffs[..., 0] += other
        return Jet(coeffs, self.space)

    __radd__ = __add__

    def __sub__(self, other: Operand):
        return self + (-other)

    def __rsub__(self, other: Operand):
        return (-self) + other

    def __mul__(self, other: Operand):
        if isinstance(other, Jet):
            return multiply(self, other)
        other = np.asarray(other, dtype=float)
        return Jet(self.coeffs * other[..., None], self.space)

    __rmul__ = __mul__

    def __truediv__(self, other: Operand):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other: Operand):
        return self.reciprocal() * other

    def __pow__(self, exponent: float):
        return self.power(exponent)

    # -- calculus -----------------------------------------------------------

    def derivative(self, i: int) -> 'Jet':
        """Partial derivative along variable i; the result has order - 1."""
        if self.order == 0:
            raise OrderExhaustionError("cannot differentiate an order-0 jet")
        sources, factors = self.space.derivative_maps()[i]
        return Jet(self.coeffs[..., sources] * factors, get_space(self.dim, self.order - 1))

    def grad(self) -> 'Jet':
        """All first partials, stacked as a new leading axis of length dim."""
        if self.order == 0:
            raise OrderExhaustionError("cannot differentiate an order-0 jet")
        maps = self.space.derivative_maps()
        coeffs = np.stack([self.coeffs[..., s] * f for s, f in maps], axis=0)
        return Jet(coeffs, get_space(self.dim, self.order - 1))

    def _compose_scalar(self, derivatives: Sequence[np.ndarray]) -> 'Jet':
        """f(self) from the derivative values f^(k)(value), k = 0..order."""
        h = self - self.value
        result = Jet.constant(derivatives[0], self.space)
        power = None
        for k in range(1, self.order + 1):
            power = h if power is None else power * h
            result = result + power * (np.asarray(derivatives[k]) / factorial(k))
        return result

    def exp(self) -> 'Jet':
        e = np.exp(self.value)
        return self._compose_scalar([e] * (self.order + 1))

    def log(self) -> 'Jet':
        v = self.value
        if np.any(v <= 0):
            raise DomainError("log of a non-positive value")
        derivatives = [np.log(v)]
        for k in range(1, self.order + 1):
            derivatives.append((-1) ** (k - 1) * factorial(k - 1) / v ** k)
        return self._compose_scalar(derivatives)

    def power(self, exponent: float) -> 'Jet':
        exponent = float(exponent)
        if exponent.is_integer() and exponent >= 0:
            return _integer_power(self, int(exponent))
        v = self.value
        if exponent.is_integer():
            if np.any(v == 0):
                raise DomainError("negative power of zero")
        elif np.any(v <= 0):
            raise DomainError(f"non-integer power {exponent} of a non-positive value")
        derivatives = []
        falling = 1.0
        for k in range(self.order + 1):
            derivatives.append(falling * v ** (exponent - k))
            falling *= exponent - k
        return self._compose_scalar(derivatives)

    def reciprocal(self) -> 'Jet':
        return self.power(-1.0)

    def sqrt(self) -> 'Jet':
        return self.power(0.5)

    def abs(self) -> 'Jet':
        v = self.value
        if np.any(v == 0):
            raise DomainError("abs is not smooth at zero")
        return self * np.sign(v)


def _integer_power(base: Jet, n: int) -> Jet:
    result = Jet.constant(np.ones(base.shape), base.space)
    square = base
    while n:
        if n & 1:
            result = result * square
        n >>= 1
        if n:
            square = square * square
    return result


def lift(item: Operand, space: JetSpace) -> Jet:
    """Coerce a Jet or array into `space` (truncating jets of higher order)."""
    if isinstance(item, Jet):
        if item.dim != space.dim:
            raise ValenceMismatchError(f"jet dimension {item.dim} does not match {space.dim}")
        return item.truncate(space.order)
    return Jet.constant(item, space)


def common(a: Jet, b: Jet) -> Tuple[Jet, Jet]:
    if a.space is b.space:
        return a, b
    if a.dim != b.dim:
        raise ValenceMismatchError(f"jet dimensions differ: {a.dim} vs {b.dim}")
    order = min(a.order, b.order)
    return a.truncate(order), b.truncate(order)


def multiply(a: Jet, b: Jet) -> Jet:
    """Elementwise (broadcasting) truncated product."""
    a, b = common(a, b)
    if b.is_constant():
        return Jet(a.coeffs * b.value[..., None], a.space)
    if a.is_constant():
        return Jet(b.coeffs * a.value[..., None], b.space)
    left, right, _ = a.space.product_table()
    return Jet(a.space.reduce(a.coeffs[..., left] * b.coeffs[..., right]), a.space)


def contract(subscripts: str, *operands: Operand):
    """numpy.einsum over jets and plain arrays (no ellipsis), folded left to right."""
    inputs, output = subscripts.replace(' ', '').split('->')
    terms = inputs.split(',')
    if len(terms) != len(operands):
        raise ValueError(f"{subscripts!r} expects {len(terms)} operands, got {len(operands)}")
    spare = next(c for c in _LETTERS if c not in subscripts)
    current_term, current = terms[0], operands[0]
    if len(terms) == 1:
        return _single(current_term, current, output, spare)
    for idx in range(1, len(terms)):
        term, operand = terms[idx], operands[idx]
        if idx == len(terms) - 1:
            target = output
        else:
            later = set(''.join(terms[idx + 1:]) + output)
            target = ''.join(dict.fromkeys(c for c in current_term + term if c in later))
        current = _pairwise(current_term, current, term, operand, target, spare)
        current_term = target
    return current


def _single(term, operand, output, m):
    if isinstance(operand, Jet):
        return Jet(np.einsum(f'{term}{m}->{output}{m}', operand.coeffs), operand.space)
    return np.einsum(f'{term}->{output}', operand)


def _pairwise(ta, a, tb, b, out, m):
    if isinstance(a, Jet) and isinstance(b, Jet):
        a, b = common(a, b)
        if b.is_constant():
            b = b.value
        elif a.is_constant():
            a = a.value
    if isinstance(a, Jet) and isinstance(b, Jet):
        space = a.space
        left, right, _ = space.product_table()
        products = np.einsum(f'{ta}{m},{tb}{m}->{out}{m}', a.coeffs[..., left], b.coeffs[..., right])
        return Jet(space.reduce(products), space)
    if isinstance(a, Jet):
        return Jet(np.einsum(f'{ta}{m},{tb}->{out}{m}', a.coeffs, np.asarray(b, dtype=float)), a.space)
    if isinstance(b, Jet):
        return Jet(np.einsum(f'{ta},{tb}{m}->{out}{m}', np.asarray(a, dtype=float), b.coeffs), b.space)
    return np.einsum(f'{ta},{tb}->{out}', a, b)


def inverse(matrix: Jet) -> Jet:
    """Inverse of a square matrix of jets by the Neumann series around its value."""
    base = np.linalg.inv(matrix.value)
    nilpotent = matrix - matrix.value
    term = Jet.constant(base, matrix.space)
    result = term
    step = -contract('ij,jk->ik', base, nilpotent)
    for _ in range(matrix.order):
        term = contract('ij,jk->ik', step, term)
        result = result + term
    return result


def monomial_powers(delta: Jet, order: int) -> np.ndarray:
    """Coefficients of delta^alpha for every monomial alpha of degree <= order.

    `delta` has shape (n,) and zero constant term; the result has shape
    (monomials of the n-variable order space, size of delta's space).
    """
    if delta.shape != (delta.shape[0],):
        raise ValenceMismatchError("monomial_powers needs a vector of jets")
    if np.any(np.abs(delta.value) > 0):
        raise ValueError("delta must have zero constant term")
    outer = get_space(delta.shape[0], order)
    parent, variable = outer.parents()
    rows = np.zeros((outer.size, delta.space.size))
    rows[0, 0] = 1.0
    scalars = [Jet(rows[0], delta.space)]
    for n in range(1, outer.size):
        product = multiply(scalars[parent[n]], delta[int(variable[n])])
        scalars.append(product)
        rows[n] = product.coeffs
    return rows


def compose(outer: Jet, powers: np.ndarray, inner_space: JetSpace) -> Jet:
    """Substitute a jet-valued point into `outer` using precomputed monomial powers."""
    rows = min(outer.space.size, powers.shape[0])
    return Jet(outer.coeffs[..., :rows] @ powers[:rows], inner_space)


def compose_at(outer: Jet, point: Jet) -> Jet:
    """outer (expanded at point.value) evaluated along the jet-valued point."""
    delta = point - point.value
    order = min(outer.order, point.order)
    powers = monomial_powers(delta, order)
    return compose(outer.truncate(order), powers, point.space)


def antiderivative(one_form: Jet, constant: float) -> Jet:
    """Scalar jet phi with d(phi) = one_form (closed, shape (dim,)) and phi(0) = constant."""
    space = get_space(one_form.dim, one_form.order + 1)
    coeffs = np.zeros(space.size)
    coeffs[0] = constant
    lower = one_form.space
    for n, e in enumerate(space.exponents[1:], start=1):
        i = next(k for k, v in enumerate(e) if v)
        reduced = list(e)
        reduced[i] -= 1
        coeffs[n] = one_form.coeffs[i, lower.index[tuple(reduced)]] / e[i]
    return Jet(coeffs, space)
