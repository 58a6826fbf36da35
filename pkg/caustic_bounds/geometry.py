"""
Scene primitives and the rational formulation of specular chains.

A chain is parameterized by the barycentric coordinates u1 = (u, v) of its
first specular vertex. Every vertex position, normal and direction is kept as
polynomial numerators (plus a shared positive denominator for positions) in
the Bernstein basis over the piece domain, so that downstream bounds only
need coefficient ratios. Square roots of refraction are replaced by a secant
line plus a remainder variable, and total derivatives with respect to the
global u1 ride along as jets for the irradiance bounds.

`trace_chain` is the numeric counterpart: it follows one ray with exact
square roots and forward-mode duals, giving the exact Jacobian of the
receiver coordinates.
"""

import logging
import math
import numbers
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .bernstein import (
    BernsteinPoly,
    Box,
    Interval,
    RemainderKind,
    RemainderSpec,
    ZERO_TOLERANCE,
    range_bound,
    rational_bound,
    reduce_degree,
    restrict_to_subbox,
)
from .conf import app_settings

logger = logging.getLogger(__name__)

# Barycentric tolerance for "inside the triangle" decisions on traced paths.
INSIDE_TOLERANCE = 1e-9


class PieceDropped(ValueError):
    """No admissible path can start in the current domain piece."""


class TotalInternalReflection(PieceDropped):
    pass


class UnboundedPiece(ValueError):
    """A sign needed by the rational formulation is undecided over the piece."""


# ---------------------------------------------------------------------------
# Scene primitives
# ---------------------------------------------------------------------------

class Scattering(str, Enum):
    REFLECT = "R"
    REFRACT = "T"


class MaterialKind(str, Enum):
    MIRROR = "mirror"
    DIELECTRIC = "dielectric"
    RECEIVER = "receiver"


@dataclass(frozen=True)
class Material:
    kind: MaterialKind
    ior: float = 1.0

    def __post_init__(self):
        if self.kind == MaterialKind.DIELECTRIC and not self.ior > 0.0:
            raise ValueError(f"index of refraction must be positive, got {self.ior}")

    @property
    def is_specular(self) -> bool:
        return self.kind != MaterialKind.RECEIVER

    def supports(self, scattering: Scattering) -> bool:
        if scattering == Scattering.REFLECT:
            return self.kind == MaterialKind.MIRROR
        return self.kind == MaterialKind.DIELECTRIC


@dataclass(frozen=True, eq=False)
class TriangleData:
    """One scene triangle with per-vertex shading normals.

    Normals may be unnormalized. Receiver triangles carry per-vertex UVs and
    may name the receiver object whose UV chart they share.
    """

    positions: np.ndarray
    normals: np.ndarray
    material: Material
    uvs: Optional[np.ndarray] = None
    index: int = -1
    object_name: Optional[str] = None

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float).reshape(3, 3)
        normals = np.array(self.normals, dtype=float).reshape(3, 3)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "normals", normals)
        if np.linalg.norm(np.cross(positions[1] - positions[0], positions[2] - positions[0])) < 1e-14:
            raise ValueError(f"triangle {self.index} is degenerate")
        if self.uvs is not None:
            uvs = np.array(self.uvs, dtype=float).reshape(3, 2)
            if np.any(uvs < 0.0) or np.any(uvs > 1.0):
                raise ValueError(f"triangle {self.index} has UVs outside [0, 1]")
            object.__setattr__(self, "uvs", uvs)
        elif self.material.kind == MaterialKind.RECEIVER:
            raise ValueError(f"receiver triangle {self.index} has no UVs")

    @property
    def p0(self) -> np.ndarray:
        return self.positions[0]

    @property
    def e1(self) -> np.ndarray:
        return self.positions[1] - self.positions[0]

    @property
    def e2(self) -> np.ndarray:
        return self.positions[2] - self.positions[0]

    @property
    def geometric_normal(self) -> np.ndarray:
        return np.cross(self.e1, self.e2)

    @property
    def area_factor(self) -> float:
        """|e1 x e2|, the Jacobian from barycentric to world area."""
        return float(np.linalg.norm(self.geometric_normal))

    @property
    def flat_normals(self) -> bool:
        return bool(np.allclose(self.normals, self.normals[0], rtol=0.0, atol=0.0))

    @property
    def aabb(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def point(self, u: float, v: float) -> np.ndarray:
        return self.p0 + u * self.e1 + v * self.e2

    def normal_at(self, u: float, v: float) -> np.ndarray:
        n = self.normals
        return n[0] + u * (n[1] - n[0]) + v * (n[2] - n[0])

    def uv_at(self, u: float, v: float) -> np.ndarray:
        t = self.uvs
        return t[0] + u * (t[1] - t[0]) + v * (t[2] - t[0])

    def barycentric_from_uv(self, uv: Sequence[float]) -> Optional[Tuple[float, float]]:
        """Invert the UV chart; None when the UV triangle is degenerate."""
        t = self.uvs
        matrix = np.column_stack([t[1] - t[0], t[2] - t[0]])
        if abs(np.linalg.det(matrix)) < 1e-300:
            return None
        u, v = np.linalg.solve(matrix, np.asarray(uv, dtype=float) - t[0])
        return float(u), float(v)

    def barycentric_inside_uv(self, uv: Sequence[float], tol: float = 1e-12) -> Optional[Tuple[float, float]]:
        """Barycentrics of uv when it falls inside the UV triangle, else None."""
        bary = self.barycentric_from_uv(uv)
        if bary is None:
            return None
        u, v = bary
        if u < -tol or v < -tol or u + v > 1.0 + tol:
            return None
        return bary

    @property
    def receiver_object(self) -> str:
        """Name of the receiver grid this triangle rasterizes into."""
        return self.object_name if self.object_name else f"receiver{self.index}"


@dataclass(frozen=True)
class PointLight:
    position: Tuple[float, float, float]
    intensity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.position)


@dataclass(frozen=True)
class ChainSpec:
    scattering: Tuple[Scattering, ...]

    def __post_init__(self):
        if not self.scattering:
            raise ValueError("a chain needs at least one specular vertex")
        object.__setattr__(self, "scattering", tuple(Scattering(s) for s in self.scattering))

    @classmethod
    def parse(cls, text: str) -> "ChainSpec":
        text = text.strip().upper()
        if not text or any(c not in "RT" for c in text):
            raise ValueError(f"invalid chain {text!r}; expected letters R and T")
        return cls(tuple(Scattering(c) for c in text))

    def __str__(self):
        return "".join(s.value for s in self.scattering)

    def __len__(self):
        return len(self.scattering)

    @property
    def ends_in_refraction(self) -> bool:
        return self.scattering[-1] == Scattering.REFRACT

    @property
    def is_pure_reflection(self) -> bool:
        return all(s == Scattering.REFLECT for s in self.scattering)


# ---------------------------------------------------------------------------
# Jets: polynomial values with total first derivatives in the global u1
# ---------------------------------------------------------------------------

def _is_zero(x) -> bool:
    return isinstance(x, numbers.Real) and x == 0.0


def _prod(a, b):
    if _is_zero(a) or _is_zero(b):
        return 0.0
    return a * b


def _plus(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return a + b


class Jet:
    """A value with its derivatives d/du and d/dv; None marks an unbounded derivative."""

    __slots__ = ("value", "du", "dv")
    __array_ufunc__ = None

    def __init__(self, value, du=None, dv=None):
        self.value = value
        self.du = du
        self.dv = dv

    @classmethod
    def lift(cls, x) -> "Jet":
        if isinstance(x, Jet):
            return x
        if isinstance(x, BernsteinPoly):
            return cls(x)
        return cls(float(x), 0.0, 0.0)

    @classmethod
    def coordinate(cls, axis: int, lo: float, hi: float, derivatives: bool = True) -> "Jet":
        """Global barycentric u (axis 0) or v (axis 1) over [lo, hi]."""
        value = BernsteinPoly.variable(2, axis, lo, hi)
        if not derivatives:
            return cls(value)
        return cls(value, 1.0 if axis == 0 else 0.0, 0.0 if axis == 0 else 1.0)

    @property
    def bounded(self) -> bool:
        return self.du is not None and self.dv is not None

    def __repr__(self):
        return f"Jet({self.value!r}, bounded={self.bounded})"

    def _derivs(self, other, combine):
        if self.du is None or other.du is None:
            du = None
        else:
            du = combine(self.du, other.du, "u")
        if self.dv is None or other.dv is None:
            dv = None
        else:
            dv = combine(self.dv, other.dv, "v")
        return du, dv

    def __add__(self, other):
        if isinstance(other, numbers.Real):
            return Jet(self.value + float(other), self.du, self.dv)
        other = Jet.lift(other)
        du, dv = self._derivs(other, lambda a, b, _: _plus(a, b))
        return Jet(self.value + other.value, du, dv)

    __radd__ = __add__

    def __neg__(self):
        return Jet(
            -self.value,
            None if self.du is None else _prod(self.du, -1.0),
            None if self.dv is None else _prod(self.dv, -1.0),
        )

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, numbers.Real):
            c = float(other)
            return Jet(
                self.value * c,
                None if self.du is None else _prod(self.du, c),
                None if self.dv is None else _prod(self.dv, c),
            )
        other = Jet.lift(other)
        a, b = self.value, other.value

        def rule(da, db, _):
            return _plus(_prod(da, b), _prod(a, db))

        du, dv = self._derivs(other, rule)
        return Jet(a * b, du, dv)

    __rmul__ = __mul__


def value_of(x):
    return x.value if isinstance(x, Jet) else x


def value_range(x) -> Interval:
    x = value_of(x)
    if isinstance(x, BernsteinPoly):
        return range_bound(x)
    return Interval(float(x), float(x))


def sign_of(x) -> int:
    """+1 or -1 when the value is single-signed in Bernstein form, else 0."""
    x = value_of(x)
    if isinstance(x, BernsteinPoly):
        coeffs = x.coeffs
    else:
        coeffs = np.array([float(x)])
    if np.all(coeffs > ZERO_TOLERANCE):
        return 1
    if np.all(coeffs < -ZERO_TOLERANCE):
        return -1
    return 0


def ratio_range(numerator, denominator) -> Interval:
    num, den = value_of(numerator), value_of(denominator)
    if not isinstance(num, BernsteinPoly) and not isinstance(den, BernsteinPoly):
        if abs(float(den)) <= ZERO_TOLERANCE:
            return Interval.universal()
        value = float(num) / float(den)
        return Interval(value, value)
    if not isinstance(num, BernsteinPoly):
        num = BernsteinPoly.constant(float(num))
    if not isinstance(den, BernsteinPoly):
        den = BernsteinPoly.constant(float(den))
    return rational_bound(num, den)


def vdot(a, b):
    return _plus(_plus(_prod(a[0], b[0]), _prod(a[1], b[1])), _prod(a[2], b[2]))


def _minus(a, b):
    if _is_zero(b):
        return a
    return _plus(a, _prod(b, -1.0))


def vcross(a, b):
    return [
        _minus(_prod(a[1], b[2]), _prod(a[2], b[1])),
        _minus(_prod(a[2], b[0]), _prod(a[0], b[2])),
        _minus(_prod(a[0], b[1]), _prod(a[1], b[0])),
    ]


def vscale(s, a):
    return [_prod(s, c) for c in a]


def vsub(a, b):
    return [_minus(x, y) for x, y in zip(a, b)]


def _floats(vec) -> List[float]:
    return [float(c) for c in vec]


# ---------------------------------------------------------------------------
# Remainder variables
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _SqrtResidual:
    beta: object
    slope: float
    intercept: float

    def exact(self, point: np.ndarray) -> float:
        beta = _evaluate(self.beta, point)
        return math.sqrt(max(beta, 0.0)) - self.slope * beta - self.intercept


@dataclass(frozen=True, eq=False)
class _ReciprocalSqrt:
    beta: object

    def exact(self, point: np.ndarray) -> float:
        beta = _evaluate(self.beta, point)
        return 0.5 / math.sqrt(beta) if beta > 0.0 else math.inf


@dataclass(frozen=True, eq=False)
class _ReductionResidual:
    original: BernsteinPoly
    reduced: BernsteinPoly
    offset: float

    def exact(self, point: np.ndarray) -> float:
        base = np.array(point, dtype=float)
        base = np.concatenate([base, np.zeros(max(0, self.reduced.num_vars - base.size))])
        approx = self.reduced.evaluate(base[: self.reduced.num_vars]) - self.offset
        return self.original.evaluate(base[: self.original.num_vars]) - approx


def _evaluate(x, point: np.ndarray) -> float:
    x = value_of(x)
    if isinstance(x, BernsteinPoly):
        return float(x.evaluate(point[: x.num_vars]))
    return float(x)


class RemainderAllocator:
    """Hands out fresh remainder axes after the two domain axes."""

    def __init__(self, num_vars: int = 2):
        self.num_vars = num_vars
        self.specs: List[RemainderSpec] = []
        self.realizers: Dict[int, object] = {}

    def allocate(self, lo, hi, provenance, realizer=None, slope=None, intercept=None) -> RemainderSpec:
        spec = RemainderSpec(self.num_vars, lo, hi, provenance, slope, intercept)
        self._register(spec, realizer)
        return spec

    def _register(self, spec: RemainderSpec, realizer):
        if spec.axis != self.num_vars:
            raise ValueError(f"remainder axis {spec.axis} is not the next free axis {self.num_vars}")
        self.specs.append(spec)
        if realizer is not None:
            self.realizers[spec.axis] = realizer
        self.num_vars += 1

    def variable(self, spec: RemainderSpec) -> BernsteinPoly:
        return BernsteinPoly.variable(spec.axis + 1, spec.axis, spec.lo, spec.hi)

    def reduce(self, poly, cap: int, target: int):
        """Degree-reduce `poly` when it exceeds `cap`; other values pass through."""
        if not isinstance(poly, BernsteinPoly) or poly.max_degree <= cap:
            return poly
        padded = poly.pad(self.num_vars)
        degrees = [min(target, d) for d in padded.degrees[:2]] + [0] * (padded.num_vars - 2)
        reduced, spec = reduce_degree(padded, degrees, remainder_axes=range(2, padded.num_vars))
        self._register(spec, _ReductionResidual(padded, reduced, spec.lo))
        return reduced


# ---------------------------------------------------------------------------
# Chain building blocks
# ---------------------------------------------------------------------------

def interpolate_vertex(tri: TriangleData, u, v):
    """Affine position and (unnormalized) normal at barycentrics (u, v)."""
    p0, e1, e2 = _floats(tri.p0), _floats(tri.e1), _floats(tri.e2)
    position = [_plus(_plus(_prod(u, e1[c]), _prod(v, e2[c])), p0[c]) for c in range(3)]
    if tri.flat_normals:
        return position, _floats(tri.normals[0])
    n = tri.normals
    dn1, dn2 = _floats(n[1] - n[0]), _floats(n[2] - n[0])
    normal = [_plus(_plus(_prod(u, dn1[c]), _prod(v, dn2[c])), float(n[0][c])) for c in range(3)]
    return position, normal


def sqrt_secant_approx(beta_range: Interval) -> Tuple[float, float, float, float]:
    """Secant line a*beta + b under sqrt on [l, h] with its error interval.

    sqrt is concave, so the secant never exceeds it and the lower error is 0.
    """
    low, high = beta_range.lo, beta_range.hi
    if low < 0.0:
        logger.debug("Clamping negative beta range [%.3e, %.3e] at 0", low, high)
    low, high = max(low, 0.0), max(high, 0.0)
    if high == low:
        if low == 0.0:
            return 0.0, 0.0, 0.0, 0.0
        root = math.sqrt(low)
        return 0.5 / root, 0.5 * root, 0.0, 0.0
    root_low, root_high = math.sqrt(low), math.sqrt(high)
    slope = (root_high - root_low) / (high - low)
    intercept = root_low - slope * low
    peak = min(max(0.25 / (slope * slope), low), high)
    error = math.sqrt(peak) - slope * peak - intercept
    return slope, intercept, 0.0, max(error, 0.0)


def _sqrt_term(beta, remainders: Optional[RemainderAllocator]):
    """Enclosure of sqrt(beta) as a polynomial in a fresh remainder variable."""
    if not isinstance(value_of(beta), BernsteinPoly):
        return math.sqrt(max(_evaluate(beta, np.zeros(0)), 0.0))
    if remainders is None:
        raise ValueError("a remainder allocator is required for non-constant square roots")
    beta = Jet.lift(beta)
    span = range_bound(beta.value)
    slope, intercept, err_lo, err_hi = sqrt_secant_approx(span)
    value = beta.value * slope + intercept
    if err_hi > err_lo:
        spec = remainders.allocate(
            err_lo, err_hi, RemainderKind.SQRT_APPROX,
            realizer=_SqrtResidual(beta.value, slope, intercept),
            slope=slope, intercept=intercept,
        )
        value = value + remainders.variable(spec)
    elif err_lo:
        value = value + err_lo

    if not beta.bounded:
        return Jet(value)
    low, high = max(span.lo, 0.0), max(span.hi, 0.0)
    if low <= 0.0:
        logger.debug("Square-root argument touches zero; derivative left unbounded")
        return Jet(value)
    # d sqrt(beta) = beta' / (2 sqrt(beta)), enclosed with one more variable.
    inv_lo, inv_hi = 0.5 / math.sqrt(high), 0.5 / math.sqrt(low)
    if inv_hi > inv_lo:
        spec = remainders.allocate(
            inv_lo, inv_hi, RemainderKind.SQRT_DERIVATIVE, realizer=_ReciprocalSqrt(beta.value)
        )
        factor = remainders.variable(spec)
    else:
        factor = inv_lo
    return Jet(value, _prod(beta.du, factor), _prod(beta.dv, factor))


def _lift_vector(vec):
    return [c if isinstance(c, (Jet, numbers.Real)) else Jet.lift(c) for c in vec]


def scattered_direction(d_prev, n, scattering: Scattering, eta_ratio: float = 1.0,
                        remainders: Optional[RemainderAllocator] = None):
    """Unnormalized outgoing direction at a specular vertex.

    For refraction, `n` must face the incident ray (d . n < 0) and
    `eta_ratio` is the incident-over-transmitted index ratio.
    """
    d, n = _lift_vector(d_prev), _lift_vector(n)
    scattering = Scattering(scattering)
    nn = vdot(n, n)
    dn = vdot(d, n)
    if scattering == Scattering.REFLECT:
        return vsub(vscale(nn, d), vscale(_prod(dn, 2.0), n))

    if not eta_ratio > 0.0:
        raise ValueError(f"refraction ratio must be positive, got {eta_ratio}")
    eta2 = eta_ratio * eta_ratio
    dd = vdot(d, d)
    beta = _plus(_prod(_prod(dn, dn), eta2), _prod(_prod(nn, dd), 1.0 - eta2))
    if value_range(beta).hi < 0.0:
        raise TotalInternalReflection("transmission impossible over the whole piece")
    root = _sqrt_term(beta, remainders)
    tangential = vsub(vscale(nn, d), vscale(dn, n))
    return vsub(vscale(eta_ratio, tangential), vscale(root, n))


class RationalPair(NamedTuple):
    """Barycentrics u = u_num / den, v = v_num / den."""

    u_num: object
    v_num: object
    den: object

    def u_range(self) -> Interval:
        return ratio_range(self.u_num, self.den)

    def v_range(self) -> Interval:
        return ratio_range(self.v_num, self.den)

    def oriented(self) -> "RationalPair":
        """Flip signs so the denominator is positive; mixed signs are unbounded."""
        sign = sign_of(self.den)
        if sign == 0:
            raise UnboundedPiece("intersection denominator changes sign over the piece")
        if sign > 0:
            return self
        return RationalPair(_prod(self.u_num, -1.0), _prod(self.v_num, -1.0), _prod(self.den, -1.0))


def next_barycentric(x_num, d_tilde, tri_next: TriangleData, x_den=1.0) -> RationalPair:
    """Moller-Trumbore barycentrics of the ray x + t * d_tilde on `tri_next`.

    x is rational with numerators `x_num` and denominator `x_den`.
    """
    x_num, d_tilde = _lift_vector(x_num), _lift_vector(d_tilde)
    p0, e1, e2 = _floats(tri_next.p0), _floats(tri_next.e1), _floats(tri_next.e2)
    offset = vsub(x_num, vscale(x_den, p0))
    pvec = vcross(d_tilde, e2)
    u_num = vdot(pvec, offset)
    v_num = vdot(vcross(offset, e1), d_tilde)
    den = _prod(x_den, vdot(pvec, e1))
    den_range = value_range(den)
    if max(abs(den_range.lo), abs(den_range.hi)) < ZERO_TOLERANCE:
        raise PieceDropped("ray parallel to the next triangle over the whole piece")
    return RationalPair(u_num, v_num, den)


# ---------------------------------------------------------------------------
# Chain expressions
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class VertexExpressions:
    """Rational expressions of one specular vertex.

    The position is `position / denominator`; `incoming`, `outgoing` and
    `normal` are positive multiples of the true vectors. `normal` faces the
    incident ray for refraction.
    """

    triangle: TriangleData
    scattering: Scattering
    position: list
    denominator: object
    normal: list
    incoming: list
    outgoing: list
    eta_ratio: float
    barycentrics: Optional[RationalPair] = None


@dataclass(eq=False)
class ChainExpressions:
    domain: Box
    chain: ChainSpec
    light: PointLight
    vertices: List[VertexExpressions]
    receiver: Optional[TriangleData]
    receiver_map: Optional[RationalPair]
    remainders: List[RemainderSpec]
    num_vars: int
    derivatives: bool
    realizers: Dict[int, object] = field(default_factory=dict, repr=False)

    @property
    def first(self) -> TriangleData:
        return self.vertices[0].triangle

    def local_point(self, u1: Sequence[float]) -> np.ndarray:
        lo, widths = np.array(self.domain.lo[:2]), np.array(self.domain.widths[:2])
        local = np.divide(np.asarray(u1, dtype=float) - lo, widths,
                          out=np.zeros(2), where=widths > 0.0)
        return local

    def exact_point(self, u1: Sequence[float]) -> np.ndarray:
        """Local coordinates plus each remainder set to its exact residual."""
        point = np.zeros(self.num_vars)
        point[:2] = self.local_point(u1)
        for spec in self.remainders:
            realizer = self.realizers.get(spec.axis)
            if realizer is None:
                point[spec.axis] = 0.5
                continue
            value = realizer.exact(point[: spec.axis])
            point[spec.axis] = min(max(spec.solve(value), 0.0), 1.0)
        return point

    def evaluate_receiver(self, u1: Sequence[float]) -> Tuple[float, float]:
        if self.receiver_map is None:
            raise ValueError("expressions were built without a receiver")
        point = self.exact_point(u1)
        u_num, v_num, den = (_evaluate(x, point) for x in self.receiver_map)
        return u_num / den, v_num / den

    def evaluate_vertex(self, index: int, u1: Sequence[float]) -> np.ndarray:
        vertex = self.vertices[index]
        point = self.exact_point(u1)
        den = _evaluate(vertex.denominator, point)
        return np.array([_evaluate(c, point) for c in vertex.position]) / den

    def evaluate_vector(self, vec, u1: Sequence[float]) -> np.ndarray:
        point = self.exact_point(u1)
        return np.array([_evaluate(c, point) for c in vec])


def _scatter_at(vertex_incoming, normal, scattering, material, remainders):
    if scattering == Scattering.REFLECT:
        return scattered_direction(vertex_incoming, normal, scattering), normal, 1.0
    side = sign_of(vdot(vertex_incoming, normal))
    if side == 0:
        raise UnboundedPiece("incident side of a refractive vertex undecided over the piece")
    if side < 0:
        facing, eta = normal, 1.0 / material.ior
    else:
        facing, eta = vscale(-1.0, normal), material.ior
    return scattered_direction(vertex_incoming, facing, scattering, eta, remainders), facing, eta


def _check_inside(pair: RationalPair, slack: float):
    tolerance = 1e-9
    total = ratio_range(_plus(value_of(pair.u_num), value_of(pair.v_num)), pair.den)
    for span in (pair.u_range(), pair.v_range(), total):
        if not span.is_finite:
            continue
        span = span.widened(slack)
        if span.hi < -tolerance or span.lo > 1.0 + tolerance:
            raise PieceDropped("intermediate vertex misses its triangle over the piece")


def _reduce_all(values, remainders: RemainderAllocator, cap: int, target: int):
    out = []
    for x in values:
        if isinstance(x, Jet):
            out.append(Jet(
                remainders.reduce(x.value, cap, target),
                None if x.du is None else remainders.reduce(x.du, cap, target),
                None if x.dv is None else remainders.reduce(x.dv, cap, target),
            ))
        else:
            out.append(remainders.reduce(x, cap, target))
    return out


def _restrict(x, domain: Box):
    if isinstance(x, Jet):
        return Jet(_restrict(x.value, domain), _restrict(x.du, domain), _restrict(x.dv, domain))
    if isinstance(x, BernsteinPoly):
        return restrict_to_subbox(x, domain)
    return x


def build_chain_maps(
    triangles: Sequence[TriangleData],
    receiver: Optional[TriangleData],
    chain: ChainSpec,
    light: PointLight,
    domain: Box,
    *,
    derivatives: bool = True,
    degree_cap: Optional[int] = None,
    reduced_degree: Optional[int] = None,
    fp_slack: Optional[float] = None,
) -> ChainExpressions:
    """Compose the rational vertex maps of a triangle tuple over `domain`.

    Raises PieceDropped when no path can exist on the piece and
    UnboundedPiece when a sign the formulation relies on is undecided.
    """
    if len(triangles) != len(chain):
        raise ValueError(f"{len(triangles)} triangles for a chain of length {len(chain)}")
    cap = app_settings.DEGREE_CAP if degree_cap is None else degree_cap
    target = app_settings.REDUCED_DEGREE if reduced_degree is None else reduced_degree
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack

    remainders = RemainderAllocator(2)
    u = Jet.coordinate(0, 0.0, 1.0, derivatives)
    v = Jet.coordinate(1, 0.0, 1.0, derivatives)

    # Chart-wide first vertex, re-expressed over the piece before composing.
    position, normal = interpolate_vertex(triangles[0], u, v)
    position = [_restrict(c, domain) for c in position]
    normal = [_restrict(c, domain) for c in normal]
    denominator = 1.0
    incoming = vsub(position, _floats(light.position))
    outgoing = None
    vertices: List[VertexExpressions] = []

    for index, (tri, scattering) in enumerate(zip(triangles, chain.scattering)):
        if not tri.material.supports(scattering):
            raise ValueError(f"triangle {tri.index} cannot host a {scattering.value} vertex")
        pair = None
        if index > 0:
            pair = next_barycentric(position, outgoing, tri, denominator).oriented()
            _check_inside(pair, slack)
            den = pair.den
            p0, e1, e2 = _floats(tri.p0), _floats(tri.e1), _floats(tri.e2)
            position = [
                _plus(_plus(_prod(den, p0[c]), _prod(pair.u_num, e1[c])), _prod(pair.v_num, e2[c]))
                for c in range(3)
            ]
            if tri.flat_normals:
                normal = _floats(tri.normals[0])
            else:
                n = tri.normals
                dn1, dn2 = _floats(n[1] - n[0]), _floats(n[2] - n[0])
                normal = [
                    _plus(_plus(_prod(den, float(n[0][c])), _prod(pair.u_num, dn1[c])), _prod(pair.v_num, dn2[c]))
                    for c in range(3)
                ]
            denominator = den
            incoming = outgoing
        outgoing, facing, eta = _scatter_at(incoming, normal, scattering, tri.material, remainders)
        position = _reduce_all(position, remainders, cap, target)
        denominator = _reduce_all([denominator], remainders, cap, target)[0]
        outgoing = _reduce_all(outgoing, remainders, cap, target)
        vertices.append(VertexExpressions(
            triangle=tri, scattering=scattering, position=position, denominator=denominator,
            normal=facing, incoming=incoming, outgoing=outgoing, eta_ratio=eta, barycentrics=pair,
        ))

    receiver_map = None
    if receiver is not None:
        receiver_map = next_barycentric(position, outgoing, receiver, denominator).oriented()
        receiver_map = RationalPair(*_reduce_all(receiver_map, remainders, cap, target))

    return ChainExpressions(
        domain=domain,
        chain=chain,
        light=light,
        vertices=vertices,
        receiver=receiver,
        receiver_map=receiver_map,
        remainders=list(remainders.specs),
        num_vars=remainders.num_vars,
        derivatives=derivatives,
        realizers=dict(remainders.realizers),
    )


@dataclass(frozen=True, eq=False)
class TupleGeometry:
    """The triangles of one tuple together with the light and chain type."""

    triangles: Tuple[TriangleData, ...]
    receiver: Optional[TriangleData]
    chain: ChainSpec
    light: PointLight

    def expressions(self, domain: Box, derivatives: bool = True, **options) -> ChainExpressions:
        return build_chain_maps(
            self.triangles, self.receiver, self.chain, self.light, domain,
            derivatives=derivatives, **options,
        )

    def trace(self, u1: Sequence[float]) -> "TracedPath":
        return trace_chain(self.triangles, self.receiver, self.chain, self.light, u1)

    def prefix(self, length: int) -> "TupleGeometry":
        return TupleGeometry(
            self.triangles[:length], None,
            ChainSpec(self.chain.scattering[:length]), self.light,
        )


# ---------------------------------------------------------------------------
# Numeric tracing with forward-mode duals
# ---------------------------------------------------------------------------
# A dual scalar is an array [value, d/du, d/dv]; a dual vector is a (3, 3)
# array whose rows are the value and the two derivative vectors.

def _const(vec) -> np.ndarray:
    out = np.zeros((3, 3))
    out[0] = vec
    return out


def _dmul(a, b):
    return np.array([a[0] * b[0], a[1] * b[0] + a[0] * b[1], a[2] * b[0] + a[0] * b[2]])


def _ddiv(a, b):
    b2 = b[0] * b[0]
    return np.array([a[0] / b[0], (a[1] * b[0] - a[0] * b[1]) / b2, (a[2] * b[0] - a[0] * b[2]) / b2])


def _ddot(a, b):
    return np.array([a[0] @ b[0], a[1] @ b[0] + a[0] @ b[1], a[2] @ b[0] + a[0] @ b[2]])


def _dcross(a, b):
    return np.array([
        np.cross(a[0], b[0]),
        np.cross(a[1], b[0]) + np.cross(a[0], b[1]),
        np.cross(a[2], b[0]) + np.cross(a[0], b[2]),
    ])


def _dscale(s, a):
    return np.array([s[0] * a[0], s[1] * a[0] + s[0] * a[1], s[2] * a[0] + s[0] * a[2]])


def _dsqrt(a):
    root = math.sqrt(a[0])
    if root == 0.0:
        return np.array([0.0, math.inf, math.inf])
    return np.array([root, 0.5 * a[1] / root, 0.5 * a[2] / root])


def _dual_point(tri: TriangleData, u, v):
    return _const(tri.p0) + np.outer(u, tri.e1) + np.outer(v, tri.e2)


def _dual_normal(tri: TriangleData, u, v):
    n = tri.normals
    return _const(n[0]) + np.outer(u, n[1] - n[0]) + np.outer(v, n[2] - n[0])


def _dual_scatter(d, n, scattering: Scattering, material: Material):
    nn, dn = _ddot(n, n), _ddot(d, n)
    if scattering == Scattering.REFLECT:
        return _dscale(nn, d) - 2.0 * _dscale(dn, n)
    if dn[0] == 0.0:
        return None
    if dn[0] < 0.0:
        eta = 1.0 / material.ior
    else:
        eta, n, dn = material.ior, -n, -dn
    dd = _ddot(d, d)
    beta = eta * eta * _dmul(dn, dn) + (1.0 - eta * eta) * _dmul(nn, dd)
    if beta[0] < 0.0:
        return None
    return eta * (_dscale(nn, d) - _dscale(dn, n)) - _dscale(_dsqrt(beta), n)


def _dual_intersect(origin, direction, tri: TriangleData):
    """Moller-Trumbore on duals; None unless the hit is forward and inside."""
    pvec = _dcross(direction, _const(tri.e2))
    det = _ddot(pvec, _const(tri.e1))
    if abs(det[0]) < 1e-300:
        return None
    offset = origin - _const(tri.p0)
    u = _ddiv(_ddot(offset, pvec), det)
    qvec = _dcross(offset, _const(tri.e1))
    v = _ddiv(_ddot(direction, qvec), det)
    t = _ddiv(_ddot(_const(tri.e2), qvec), det)
    if t[0] <= 0.0:
        return None
    if u[0] < -INSIDE_TOLERANCE or v[0] < -INSIDE_TOLERANCE or u[0] + v[0] > 1.0 + INSIDE_TOLERANCE:
        return None
    return u, v


@dataclass
class TracedPath:
    """One forward-traced chain. `jacobian` is d(u_k, v_k)/d(u_1, v_1)."""

    valid: bool
    positions: List[np.ndarray]
    barycentrics: List[Tuple[float, float]]
    receiver_uv: Optional[Tuple[float, float]] = None
    jacobian: Optional[np.ndarray] = None
    reason: str = ""

    @property
    def jacobian_determinant(self) -> float:
        return float(np.linalg.det(self.jacobian))


def trace_chain(triangles, receiver, chain: ChainSpec, light: PointLight, u1) -> TracedPath:
    u1 = (float(u1[0]), float(u1[1]))
    positions = [light.vector]
    barycentrics = [u1]
    if u1[0] < -INSIDE_TOLERANCE or u1[1] < -INSIDE_TOLERANCE or sum(u1) > 1.0 + INSIDE_TOLERANCE:
        return TracedPath(False, positions, barycentrics, reason="start outside triangle")

    u = np.array([u1[0], 1.0, 0.0])
    v = np.array([u1[1], 0.0, 1.0])
    x = _dual_point(triangles[0], u, v)
    n = _dual_normal(triangles[0], u, v)
    d = x - _const(light.vector)
    positions.append(x[0].copy())

    outgoing = None
    for index, (tri, scattering) in enumerate(zip(triangles, chain.scattering)):
        if index > 0:
            hit = _dual_intersect(x, outgoing, tri)
            if hit is None:
                return TracedPath(False, positions, barycentrics, reason=f"missed vertex {index + 1}")
            u, v = hit
            x, n, d = _dual_point(tri, u, v), _dual_normal(tri, u, v), outgoing
            positions.append(x[0].copy())
            barycentrics.append((float(u[0]), float(v[0])))
        outgoing = _dual_scatter(d, n, scattering, tri.material)
        if outgoing is None:
            return TracedPath(False, positions, barycentrics, reason=f"no transmission at vertex {index + 1}")

    if receiver is None:
        return TracedPath(True, positions, barycentrics)
    hit = _dual_intersect(x, outgoing, receiver)
    if hit is None:
        return TracedPath(False, positions, barycentrics, reason="missed receiver")
    uk, vk = hit
    positions.append(_dual_point(receiver, uk, vk)[0].copy())
    jacobian = np.array([[uk[1], uk[2]], [vk[1], vk[2]]])
    return TracedPath(True, positions, barycentrics, (float(uk[0]), float(vk[0])), jacobian)


def traced_irradiance(path: TracedPath, first: TriangleData, receiver: TriangleData, light: PointLight) -> float:
    """Irradiance at the receiver end of a valid traced path (inf at focal points)."""
    d0 = path.positions[1] - path.positions[0]
    ng = first.geometric_normal
    distance = float(np.linalg.norm(d0))
    det = abs(path.jacobian_determinant)
    if det == 0.0 or not math.isfinite(det):
        return math.inf
    solid_angle = abs(float(d0 @ ng)) / (first.area_factor * distance**3)
    return light.intensity * solid_angle * first.area_factor / (det * receiver.area_factor)
