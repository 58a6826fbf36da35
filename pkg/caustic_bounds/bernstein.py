"""
Dense multivariate polynomials in the Bernstein basis over the unit box.

A polynomial with per-axis degrees n = (n_1, ..., n_m) is stored as a
coefficient tensor of shape (n_1 + 1, ..., n_m + 1). Its coefficients enclose
the polynomial's range on [0, 1]^m, and coefficient ratios enclose the range
of a rational function whose numerator and denominator share a degree.

Usage:
    from caustic_bounds.bernstein import from_monomial, range_bound

    p = from_monomial([0.0, 4.0, -1.0], (2,))   # 4x - x^2
    range_bound(p)                               # Interval(lo=0.0, hi=3.0)
"""

import logging
import math
import numbers
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import convolve
from scipy.special import comb

logger = logging.getLogger(__name__)

# Coefficients below this magnitude count as sign violations in rational_bound.
ZERO_TOLERANCE = 1e-12

INF = math.inf

DIRECT_CONVOLUTION_LIMIT = 1 << 18


class DegreeCapExceeded(ValueError):
    """A product would exceed the configured degree cap; reduce_degree first."""

    def __init__(self, degrees, cap):
        self.degrees = tuple(degrees)
        self.cap = cap
        super().__init__(f"degree {self.degrees} exceeds cap {cap}")


# ---------------------------------------------------------------------------
# Intervals, boxes and remainder variables
# ---------------------------------------------------------------------------

class IntervalKind(str, Enum):
    FINITE = "finite"
    TWO_SIDED = "two-sided-unbounded"
    UNIVERSAL = "universal"


def _mul(a: float, b: float) -> float:
    # 0 * inf is 0 for enclosure products.
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


@dataclass(frozen=True)
class Interval:
    """A range enclosure.

    FINITE is the connected set [lo, hi] (endpoints may be infinite),
    TWO_SIDED is (-inf, lo] U [hi, +inf), UNIVERSAL is the whole real line.
    """

    lo: float = -INF
    hi: float = INF
    kind: IntervalKind = IntervalKind.FINITE

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if self.kind == IntervalKind.FINITE and self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def universal(cls) -> "Interval":
        return cls(-INF, INF, IntervalKind.UNIVERSAL)

    @classmethod
    def two_sided(cls, below: float, above: float) -> "Interval":
        return cls(below, above, IntervalKind.TWO_SIDED)

    @property
    def is_finite(self) -> bool:
        return self.kind == IntervalKind.FINITE

    @property
    def width(self) -> float:
        if not self.is_finite:
            return INF
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        if self.kind == IntervalKind.UNIVERSAL:
            return True
        if self.kind == IntervalKind.TWO_SIDED:
            return x <= self.lo or x >= self.hi
        return self.lo <= x <= self.hi

    def widened(self, slack: float) -> "Interval":
        """Grow the enclosed set by a relative amount (floating-point guard)."""
        if slack <= 0.0 or self.kind == IntervalKind.UNIVERSAL:
            return self
        if self.kind == IntervalKind.TWO_SIDED:
            return Interval.two_sided(
                self.lo + slack * abs(self.lo), self.hi - slack * abs(self.hi)
            )
        finite = [abs(v) for v in (self.lo, self.hi) if math.isfinite(v)]
        scale = max(finite) if finite else 0.0
        return Interval(self.lo - slack * scale, self.hi + slack * scale)

    def hull(self) -> "Interval":
        if self.is_finite:
            return self
        return Interval(-INF, INF)

    def clip(self, lo: float, hi: float) -> Optional["Interval"]:
        """Hull of the intersection with [lo, hi]; None when disjoint."""
        if self.kind == IntervalKind.UNIVERSAL:
            return Interval(lo, hi)
        if self.kind == IntervalKind.TWO_SIDED:
            parts = []
            if self.lo >= lo:
                parts.append((lo, min(self.lo, hi)))
            if self.hi <= hi:
                parts.append((max(self.hi, lo), hi))
            if not parts:
                return None
            return Interval(min(p[0] for p in parts), max(p[1] for p in parts))
        new_lo, new_hi = max(self.lo, lo), min(self.hi, hi)
        if new_lo > new_hi:
            return None
        return Interval(new_lo, new_hi)

    def intersect(self, other: "Interval") -> Optional["Interval"]:
        a, b = self.hull(), other.hull()
        lo, hi = max(a.lo, b.lo), min(a.hi, b.hi)
        if lo > hi:
            return None
        return Interval(lo, hi)

    def magnitude(self) -> "Interval":
        """Enclosure of |x| over the set."""
        if self.kind == IntervalKind.UNIVERSAL:
            return Interval(0.0, INF)
        if self.kind == IntervalKind.TWO_SIDED:
            if self.lo >= 0.0 or self.hi <= 0.0:
                return Interval(0.0, INF)
            return Interval(min(-self.lo, self.hi), INF)
        if self.lo >= 0.0:
            return self
        if self.hi <= 0.0:
            return Interval(-self.hi, -self.lo)
        return Interval(0.0, max(-self.lo, self.hi))

    def __mul__(self, other):
        if not isinstance(other, Interval):
            other = Interval(float(other), float(other))
        a, b = self.hull(), other.hull()
        products = [_mul(x, y) for x in (a.lo, a.hi) for y in (b.lo, b.hi)]
        return Interval(min(products), max(products))

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, Interval):
            other = Interval(float(other), float(other))
        a, b = self.hull(), other.hull()
        return Interval(a.lo + b.lo, a.hi + b.hi)

    __radd__ = __add__

    def __neg__(self):
        a = self.hull()
        return Interval(-a.hi, -a.lo)

    def __sub__(self, other):
        if not isinstance(other, Interval):
            other = Interval(float(other), float(other))
        return self + (-other)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by per-variable lower and upper corners."""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("box corners have different dimensions")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"inverted box {lo} > {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls, dims: int = 2) -> "Box":
        return cls((0.0,) * dims, (1.0,) * dims)

    @property
    def dims(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> Tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def area(self) -> float:
        return float(np.prod(self.widths))

    @property
    def center(self) -> Tuple[float, ...]:
        return tuple(0.5 * (a + b) for a, b in zip(self.lo, self.hi))

    def contains(self, point: Sequence[float], tol: float = 0.0) -> bool:
        return all(a - tol <= x <= b + tol for a, b, x in zip(self.lo, self.hi, point))

    def quadrants(self) -> Tuple["Box", "Box", "Box", "Box"]:
        """Split the first two axes at the midpoint."""
        (u0, v0), (u1, v1) = self.lo[:2], self.hi[:2]
        um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
        rest_lo, rest_hi = self.lo[2:], self.hi[2:]
        return tuple(
            Box((a, c) + rest_lo, (b, d) + rest_hi)
            for (c, d) in ((v0, vm), (vm, v1))
            for (a, b) in ((u0, um), (um, u1))
        )


class RemainderKind(str, Enum):
    SQRT_APPROX = "sqrt-approx"
    SQRT_DERIVATIVE = "sqrt-derivative"
    DEGREE_REDUCTION = "degree-reduction"


@dataclass(frozen=True)
class RemainderSpec:
    """An auxiliary [0, 1] variable absorbing a bounded error term.

    Substituting xi on `axis` contributes lo + xi * (hi - lo). For square-root
    remainders `slope`/`intercept` hold the linear approximant a*beta + b.
    """

    axis: int
    lo: float
    hi: float
    provenance: RemainderKind
    slope: Optional[float] = None
    intercept: Optional[float] = None

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"remainder interval [{self.lo}, {self.hi}] is inverted")

    def solve(self, error: float) -> float:
        """The xi reproducing a given error (0 for a point interval)."""
        if self.hi == self.lo:
            return 0.0
        return (error - self.lo) / (self.hi - self.lo)


# ---------------------------------------------------------------------------
# Basis helpers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _binomials(n: int) -> np.ndarray:
    out = comb(n, np.arange(n + 1))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _monomial_to_bernstein(n: int) -> np.ndarray:
    i = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    matrix = np.where(j <= i, comb(i, j) / comb(n, j), 0.0)
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=None)
def _elevation(n: int, r: int) -> np.ndarray:
    i = np.arange(n + r + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    k = i - j
    matrix = np.where(
        (k >= 0) & (k <= r),
        comb(r, np.clip(k, 0, r)) * comb(n, j) / comb(n + r, i),
        0.0,
    )
    matrix.setflags(write=False)
    return matrix


def _basis(n: int, x) -> np.ndarray:
    """Bernstein basis values B_{i,n}(x), shape (len(x), n + 1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
    i = np.arange(n + 1)[None, :]
    return _binomials(n)[None, :] * x**i * (1.0 - x) ** (n - i)


def _apply_axis(coeffs: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(matrix, coeffs, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _split_axis(coeffs: np.ndarray, axis: int, t: float):
    """de Casteljau split along one axis at t; returns (left, right)."""
    work = np.array(np.moveaxis(coeffs, axis, 0), dtype=float)
    n = work.shape[0] - 1
    left = np.empty_like(work)
    right = np.empty_like(work)
    left[0] = work[0]
    right[n] = work[n]
    for r in range(1, n + 1):
        work[: n + 1 - r] = (1.0 - t) * work[: n + 1 - r] + t * work[1 : n + 2 - r]
        left[r] = work[0]
        right[n - r] = work[n - r]
    return np.moveaxis(left, 0, axis), np.moveaxis(right, 0, axis)


def _binomial_scale(coeffs: np.ndarray, inverse: bool = False) -> np.ndarray:
    out = coeffs
    for axis, size in enumerate(coeffs.shape):
        shape = [1] * coeffs.ndim
        shape[axis] = size
        weights = _binomials(size - 1).reshape(shape)
        out = out / weights if inverse else out * weights
    return out


# ---------------------------------------------------------------------------
# BernsteinPoly
# ---------------------------------------------------------------------------

class BernsteinPoly:
    """Immutable dense Bernstein-form polynomial over [0, 1]^m."""

    __slots__ = ("coeffs",)
    # Keep numpy scalars from swallowing arithmetic with polynomials.
    __array_ufunc__ = None

    def __init__(self, coeffs):
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.ndim == 0:
            coeffs = coeffs.reshape(1)
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("Bernstein coefficients must be finite")
        coeffs.setflags(write=False)
        self.coeffs = coeffs

    @classmethod
    def _wrap(cls, coeffs: np.ndarray) -> "BernsteinPoly":
        poly = object.__new__(cls)
        coeffs = np.ascontiguousarray(coeffs, dtype=float)
        coeffs.setflags(write=False)
        poly.coeffs = coeffs
        return poly

    @classmethod
    def constant(cls, value: float, num_vars: int = 1) -> "BernsteinPoly":
        return cls._wrap(np.full((1,) * num_vars, float(value)))

    @classmethod
    def variable(cls, num_vars: int, axis: int, lo: float = 0.0, hi: float = 1.0) -> "BernsteinPoly":
        """The affine map t -> lo + (hi - lo) * t along `axis`."""
        shape = [1] * num_vars
        shape[axis] = 2
        return cls._wrap(np.array([lo, hi], dtype=float).reshape(shape))

    @property
    def degrees(self) -> Tuple[int, ...]:
        return tuple(s - 1 for s in self.coeffs.shape)

    @property
    def num_vars(self) -> int:
        return self.coeffs.ndim

    @property
    def max_degree(self) -> int:
        return max(self.degrees)

    def __repr__(self):
        return f"BernsteinPoly(degrees={self.degrees})"

    def pad(self, num_vars: int) -> "BernsteinPoly":
        """Append degree-0 axes up to num_vars variables."""
        if self.num_vars >= num_vars:
            return self
        shape = self.coeffs.shape + (1,) * (num_vars - self.num_vars)
        return BernsteinPoly._wrap(self.coeffs.reshape(shape))

    def elevate(self, degrees: Sequence[int]) -> "BernsteinPoly":
        degrees = tuple(degrees)
        poly = self.pad(len(degrees))
        coeffs = poly.coeffs
        for axis, (current, target) in enumerate(zip(poly.degrees, degrees)):
            if target < current:
                raise ValueError(f"cannot elevate axis {axis} from {current} down to {target}")
            if target > current:
                coeffs = _apply_axis(coeffs, _elevation(current, target - current), axis)
        return BernsteinPoly._wrap(coeffs)

    def evaluate(self, point):
        """Evaluate at one point (shape (m,)) or a batch (shape (N, m))."""
        pts = np.asarray(point, dtype=float)
        single = pts.ndim <= 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] < self.num_vars:
            missing = self.degrees[pts.shape[1]:]
            if any(missing):
                raise ValueError(f"point has {pts.shape[1]} coordinates, polynomial needs {self.num_vars}")
            pts = np.hstack([pts, np.zeros((pts.shape[0], self.num_vars - pts.shape[1]))])
        degrees = self.degrees
        result = np.tensordot(_basis(degrees[0], pts[:, 0]), self.coeffs, axes=([1], [0]))
        for axis in range(1, self.num_vars):
            result = np.einsum("ni,ni...->n...", _basis(degrees[axis], pts[:, axis]), result)
        return float(result[0]) if single else result

    __call__ = evaluate

    def corner(self, corner: Sequence[int]) -> float:
        index = tuple(0 if c == 0 else -1 for c in corner)
        return float(self.coeffs[index])

    # Arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, BernsteinPoly):
            a, b = _aligned(self, other)
            return BernsteinPoly._wrap(a + b)
        if isinstance(other, numbers.Real):
            return BernsteinPoly._wrap(self.coeffs + float(other))
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return BernsteinPoly._wrap(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, BernsteinPoly):
            return multiply(self, other)
        if isinstance(other, numbers.Real):
            return BernsteinPoly._wrap(self.coeffs * float(other))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        return BernsteinPoly._wrap(self.coeffs / float(other))


def _aligned(p: BernsteinPoly, q: BernsteinPoly):
    """Coefficient tensors of p and q at a common variable count and degree."""
    m = max(p.num_vars, q.num_vars)
    p, q = p.pad(m), q.pad(m)
    degrees = tuple(max(a, b) for a, b in zip(p.degrees, q.degrees))
    return p.elevate(degrees).coeffs, q.elevate(degrees).coeffs


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def from_monomial(monomial_coeffs, degrees: Sequence[int]) -> BernsteinPoly:
    """Convert a dense power-basis tensor a[j1, ..., jm] to Bernstein form."""
    coeffs = np.array(monomial_coeffs, dtype=float)
    degrees = tuple(int(d) for d in degrees)
    if coeffs.ndim == 0:
        coeffs = coeffs.reshape((1,) * max(len(degrees), 1))
    expected = tuple(d + 1 for d in degrees)
    if coeffs.shape != expected:
        raise ValueError(f"monomial tensor shape {coeffs.shape} does not match degrees {degrees}")
    for axis, n in enumerate(degrees):
        coeffs = _apply_axis(coeffs, _monomial_to_bernstein(n), axis)
    return BernsteinPoly(coeffs)


def multiply(p: BernsteinPoly, q: BernsteinPoly, degree_cap: Optional[int] = None) -> BernsteinPoly:
    m = max(p.num_vars, q.num_vars)
    p, q = p.pad(m), q.pad(m)
    degrees = tuple(a + b for a, b in zip(p.degrees, q.degrees))
    if degree_cap is not None and max(degrees) > degree_cap:
        raise DegreeCapExceeded(degrees, degree_cap)
    # Direct sums keep small products exact; FFT only pays off for large tensors
    # and its rounding stays far below the bound widening slack.
    method = "direct" if p.coeffs.size * q.coeffs.size <= DIRECT_CONVOLUTION_LIMIT else "fft"
    product = convolve(
        _binomial_scale(p.coeffs), _binomial_scale(q.coeffs), method=method
    )
    return BernsteinPoly._wrap(_binomial_scale(product, inverse=True))


def partial_derivative(p: BernsteinPoly, axis: int) -> BernsteinPoly:
    if not 0 <= axis < p.num_vars:
        raise ValueError(f"axis {axis} out of range for {p.num_vars} variables")
    n = p.degrees[axis]
    if n == 0:
        return BernsteinPoly._wrap(np.zeros_like(p.coeffs))
    return BernsteinPoly._wrap(n * np.diff(p.coeffs, axis=axis))


def restrict_to_subbox(p: BernsteinPoly, sub: Box) -> BernsteinPoly:
    """Reparameterize p so that the unit box maps affinely onto `sub`.

    Axes beyond sub.dims are left untouched.
    """
    if sub.dims > p.num_vars:
        p = p.pad(sub.dims)
    coeffs = p.coeffs
    for axis, (lo, hi) in enumerate(zip(sub.lo, sub.hi)):
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"sub-box axis {axis} [{lo}, {hi}] leaves the unit interval")
        if p.degrees[axis] == 0 or (lo == 0.0 and hi == 1.0):
            continue
        if hi < 1.0:
            coeffs, _ = _split_axis(coeffs, axis, hi)
        if lo > 0.0:
            _, coeffs = _split_axis(coeffs, axis, lo / hi if hi > 0.0 else 0.0)
    return BernsteinPoly._wrap(coeffs)


def range_bound(p: BernsteinPoly) -> Interval:
    return Interval(float(p.coeffs.min()), float(p.coeffs.max()))


def _single_signed(coeffs: np.ndarray) -> bool:
    return bool(np.all(coeffs > ZERO_TOLERANCE) or np.all(coeffs < -ZERO_TOLERANCE))


def rational_bound(p: BernsteinPoly, q: BernsteinPoly) -> Interval:
    """Range enclosure of p / q from coefficient ratios at a common degree.

    Falls back to bounding the reciprocal q / p when q changes sign, and to
    the universal set when both change sign.
    """
    a, b = _aligned(p, q)
    if _single_signed(b):
        ratios = a / b
        return Interval(float(ratios.min()), float(ratios.max()))
    if _single_signed(a):
        ratios = b / a
        low, high = float(ratios.min()), float(ratios.max())
        if low >= 0.0 and high > 0.0:
            return Interval(1.0 / high, INF)
        if high <= 0.0 and low < 0.0:
            return Interval(-INF, 1.0 / low)
        if low < 0.0 < high:
            return Interval.two_sided(1.0 / low, 1.0 / high)
    return Interval.universal()


def _chebyshev_nodes(count: int) -> np.ndarray:
    k = np.arange(count)
    return 0.5 - 0.5 * np.cos(np.pi * (k + 0.5) / count)


def reduce_degree(
    p: BernsteinPoly,
    target: Sequence[int],
    remainder_axes: Iterable[int] = (),
) -> Tuple[BernsteinPoly, RemainderSpec]:
    """Least-squares low-degree approximant plus a fresh remainder axis.

    Axes listed in `remainder_axes` are collapsed (degree 0) and their
    variation is absorbed, together with the fitting error, into the new
    remainder variable appended after the existing axes.
    """
    target = tuple(int(t) for t in target)
    if len(target) != p.num_vars:
        raise ValueError(f"target has {len(target)} axes, polynomial has {p.num_vars}")
    collapsed = set(remainder_axes)
    degrees = p.degrees
    for axis, (t, n) in enumerate(zip(target, degrees)):
        if t > n:
            raise ValueError(f"target degree {t} on axis {axis} exceeds current degree {n}")
    new_axis = p.num_vars
    unchanged = all(
        degrees[axis] == 0 if axis in collapsed else target[axis] == degrees[axis]
        for axis in range(p.num_vars)
    )
    if unchanged:
        return p, RemainderSpec(new_axis, 0.0, 0.0, RemainderKind.DEGREE_REDUCTION)

    approx = p.coeffs
    for axis, n in enumerate(degrees):
        if axis in collapsed:
            projection = _basis(n, [0.5])
        else:
            t = min(target[axis], n)
            nodes = _chebyshev_nodes(max(2 * (t + 1), t + 2))
            # Separable least squares: SVD pseudo-inverse of the target basis.
            projection = np.linalg.pinv(_basis(t, nodes)) @ _basis(n, nodes)
        approx = _apply_axis(approx, projection, axis)

    approx_poly = BernsteinPoly._wrap(approx)
    residual = range_bound(p - approx_poly)
    logger.debug(
        "Reduced degree %s -> %s, remainder [%.3e, %.3e]",
        degrees, approx_poly.degrees, residual.lo, residual.hi,
    )
    coeffs = np.stack([approx + residual.lo, approx + residual.hi], axis=-1)
    spec = RemainderSpec(new_axis, residual.lo, residual.hi, RemainderKind.DEGREE_REDUCTION)
    return BernsteinPoly._wrap(coeffs), spec
