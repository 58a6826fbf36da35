"""
Position and irradiance bounds of tuple pieces.

A piece is a sub-box of the first triangle's barycentric domain. Its position
bound is a box over receiver barycentrics; its irradiance bound encloses the
point-light irradiance of every path starting in the piece, through either
the explicit Jacobian of the receiver map or the implicit Jacobian of the
last vertex's specular constraints.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bernstein import (
    BernsteinPoly,
    Box,
    Interval,
    partial_derivative,
)
from .conf import app_settings
from .geometry import (
    ChainExpressions,
    ChainSpec,
    Jet,
    PieceDropped,
    TupleGeometry,
    UnboundedPiece,
    ratio_range,
    sign_of,
    value_of,
    value_range,
    vcross,
    vdot,
    vsub,
)

logger = logging.getLogger(__name__)

UNBOUNDED = Interval(0.0, math.inf)
ZERO = Interval(0.0, 0.0)

# Smallest receiver-box width used for implicit differentiation.
MIN_POSITION_WIDTH = 1e-9

AXES = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True)
class SubdivisionParams:
    sigma: float
    alpha: float
    max_depth: int
    fp_slack: float = 1e-9

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be non-negative, got {self.max_depth}")

    @classmethod
    def for_chain(cls, chain: ChainSpec, sigma=None, alpha=None, max_depth=None) -> "SubdivisionParams":
        """Defaults from settings; alpha depends on the chain length."""
        if alpha is None:
            alpha = app_settings.ALPHA_SINGLE if len(chain) == 1 else app_settings.ALPHA_MULTI
        return cls(
            sigma=app_settings.SIGMA if sigma is None else sigma,
            alpha=alpha,
            max_depth=app_settings.MAX_DEPTH if max_depth is None else max_depth,
            fp_slack=app_settings.FP_SLACK,
        )


@dataclass(frozen=True)
class TuplePiece:
    """A leaf of the u1 quadtree. `position` is None when no path lands."""

    domain: Box
    position: Optional[Box]
    irradiance: Interval
    depth: int

    @property
    def empty(self) -> bool:
        return self.position is None

    def covers(self, uk: Sequence[float]) -> bool:
        return self.position is not None and self.position.contains(uk)


# ---------------------------------------------------------------------------
# Position bounds
# ---------------------------------------------------------------------------

def _receiver_ranges(exprs: ChainExpressions, slack: float) -> Tuple[Interval, Interval, Interval]:
    pair = exprs.receiver_map
    if pair is None:
        raise ValueError("expressions were built without a receiver")
    total = ratio_range(value_of(pair.u_num) + value_of(pair.v_num), pair.den)
    return (
        pair.u_range().widened(slack),
        pair.v_range().widened(slack),
        total.widened(slack),
    )


def position_bound(exprs: ChainExpressions, domain: Optional[Box] = None, fp_slack: Optional[float] = None) -> Optional[Box]:
    """Receiver-barycentric box of the piece, clipped to the unit square.

    None means no path of the piece lands on the receiver triangle.
    """
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack
    u, v, total = _receiver_ranges(exprs, slack)
    if total.is_finite and total.lo > 1.0:
        return None
    cu, cv = u.clip(0.0, 1.0), v.clip(0.0, 1.0)
    if cu is None or cv is None:
        return None
    return Box((cu.lo, cv.lo), (cu.hi, cv.hi))


# ---------------------------------------------------------------------------
# Irradiance bounds
# ---------------------------------------------------------------------------

def _as_poly(x) -> BernsteinPoly:
    x = value_of(x)
    if isinstance(x, BernsteinPoly):
        return x
    return BernsteinPoly.constant(float(x))


def _jacobian_magnitude(numerator, denominator, slack: float) -> Interval:
    return ratio_range(_as_poly(numerator), _as_poly(denominator)).widened(slack).magnitude()


def _solid_angle(exprs: ChainExpressions) -> Interval:
    """dOmega0/dA1 = |d0 . ng| / (|ng| |d0|^3) over the piece."""
    first = exprs.vertices[0]
    d0 = vsub([value_of(c) for c in first.position], list(exprs.light.position))
    ng = [float(c) for c in first.triangle.geometric_normal]
    cosine = value_range(vdot(d0, ng)).magnitude()
    distance2 = value_range(vdot(d0, d0))
    low2, high2 = max(distance2.lo, 0.0), max(distance2.hi, 0.0)
    norm = first.triangle.area_factor
    lo = cosine.lo / (norm * high2**1.5) if high2 > 0.0 else math.inf
    hi = cosine.hi / (norm * low2**1.5) if low2 > 0.0 else math.inf
    if lo > hi:
        lo = hi
    return Interval(lo, hi)


def _irradiance(exprs: ChainExpressions, jacobian: Interval, slack: float) -> Interval:
    scale = exprs.light.intensity * exprs.first.area_factor / exprs.receiver.area_factor
    result = (_solid_angle(exprs) * jacobian * scale).widened(slack)
    return Interval(max(result.lo, 0.0), result.hi)


def irradiance_bound_explicit(exprs: ChainExpressions, domain: Optional[Box] = None,
                              fp_slack: Optional[float] = None) -> Interval:
    """Irradiance through the reciprocal Jacobian of the receiver map.

    With u_k = U/D and v_k = V/D the forward determinant is K / D^3.
    """
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack
    if not exprs.derivatives:
        raise ValueError("explicit irradiance needs expressions built with derivatives")
    U, V, D = (Jet.lift(x) for x in exprs.receiver_map)
    if not (U.bounded and V.bounded and D.bounded):
        return UNBOUNDED
    K = (
        D.value * (U.du * V.dv - U.dv * V.du)
        - U.value * (D.du * V.dv - D.dv * V.du)
        + V.value * (D.du * U.dv - D.dv * U.du)
    )
    d = _as_poly(D.value)
    return _irradiance(exprs, _jacobian_magnitude(d * d * d, K, slack), slack)


def _constraint_pair(d0, d1, n, eta: float, b: Sequence[float]):
    """Snell magnitude constraint F, coplanarity constraint G, and the projection (d0 x n) . b."""
    c0 = vdot(vcross(d0, n), b)
    c1 = vdot(vcross(d1, n), b)
    F = vdot(d1, d1) * c0 * c0 - vdot(d0, d0) * c1 * c1 * (eta * eta)
    G = vdot(vcross(d0, n), d1)
    return Jet.lift(F), Jet.lift(G), c0


def projection_vectors(exprs: ChainExpressions) -> List[Tuple[float, float, float]]:
    """Directions b for the Snell constraint of the last vertex.

    The gradient of F carries the factor (d0 x n) . b, so b is the incident
    tangent d0 x n at the piece centre, followed by the coordinate axes
    within 60 degrees of it.
    """
    vertex = exprs.vertices[-1]
    center = exprs.domain.center[:2]
    tangent = np.cross(
        exprs.evaluate_vector(vertex.incoming, center),
        exprs.evaluate_vector(vertex.normal, center),
    )
    norm = float(np.linalg.norm(tangent))
    if not norm > 1e-12:
        return list(AXES)
    tangent = tangent / norm
    leaning = [axis for axis in AXES if abs(float(np.dot(tangent, axis))) >= 0.5]
    return [tuple(float(c) for c in tangent)] + leaning


def irradiance_bound_implicit(exprs: ChainExpressions, domain: Optional[Box], pos: Box,
                              fp_slack: Optional[float] = None,
                              b_vectors: Optional[Sequence[Sequence[float]]] = None) -> Interval:
    """Irradiance through implicit differentiation of the last vertex's constraints.

    u1 and u_k are independent variables over domain x pos. Each projection
    vector b gives its own Jacobian ratio; vectors whose projection
    (d0 x n) . b changes sign over the piece are skipped, and the bounds of
    the rest are intersected.
    """
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack
    if not exprs.derivatives:
        raise ValueError("implicit irradiance needs expressions built with derivatives")
    vertex = exprs.vertices[-1]
    receiver = exprs.receiver
    su, sv = exprs.num_vars, exprs.num_vars + 1
    widths = []
    corners = []
    for axis in range(2):
        lo, hi = pos.lo[axis], pos.hi[axis]
        if hi - lo < MIN_POSITION_WIDTH:
            mid = 0.5 * (lo + hi)
            lo, hi = mid - 0.5 * MIN_POSITION_WIDTH, mid + 0.5 * MIN_POSITION_WIDTH
        corners.append((lo, hi))
        widths.append(hi - lo)
    s_u = BernsteinPoly.variable(sv + 1, su, *corners[0])
    s_v = BernsteinPoly.variable(sv + 1, sv, *corners[1])
    p0, e1, e2 = receiver.p0, receiver.e1, receiver.e2
    xk = [Jet(s_u * float(e1[c]) + s_v * float(e2[c]) + float(p0[c]), 0.0, 0.0) for c in range(3)]

    d1 = vsub([Jet.lift(x) * vertex.denominator for x in xk], vertex.position)
    d0 = vertex.incoming
    eta = 1.0 / vertex.eta_ratio
    if b_vectors is None:
        b_vectors = projection_vectors(exprs)

    results = []
    for b in b_vectors:
        b = tuple(float(c) for c in b)
        F, G, c0 = _constraint_pair(d0, d1, vertex.normal, eta, b)
        if sign_of(c0) == 0:
            continue
        if not (F.bounded and G.bounded):
            results.append(UNBOUNDED)
            continue
        det_a = F.du * G.dv - F.dv * G.du
        f, g = _as_poly(F.value).pad(sv + 1), _as_poly(G.value).pad(sv + 1)
        det_b = (
            partial_derivative(f, su) * partial_derivative(g, sv)
            - partial_derivative(f, sv) * partial_derivative(g, su)
        ) / (widths[0] * widths[1])
        results.append(_irradiance(exprs, _jacobian_magnitude(det_b, det_a, slack), slack))

    if not results:
        logger.debug("No projection keeps the Snell constraint single-signed on %s", exprs.domain)
        return UNBOUNDED
    bound = results[0]
    for other in results[1:]:
        merged = bound.intersect(other)
        bound = merged if merged is not None else min(bound, other, key=lambda i: i.hi)
    return bound


def irradiance_bound(exprs: ChainExpressions, domain: Box, pos: Box, fp_slack: Optional[float] = None) -> Interval:
    """Explicit bound, intersected with the implicit one for refractive chains."""
    bound = irradiance_bound_explicit(exprs, domain, fp_slack)
    if exprs.chain.is_pure_reflection:
        return bound
    implicit = irradiance_bound_implicit(exprs, domain, pos, fp_slack)
    merged = bound.intersect(implicit)
    if merged is None:
        return min(bound, implicit, key=lambda i: i.hi)
    return merged


# ---------------------------------------------------------------------------
# Domain initialization and subdivision
# ---------------------------------------------------------------------------

def _outside_triangle(box: Box) -> bool:
    return box.lo[0] + box.lo[1] > 1.0


def _depth_of(box: Box) -> int:
    width = max(box.widths[:2])
    return 0 if width <= 0.0 else max(0, int(round(-math.log2(width))))


def _coarse_position(geometry: TupleGeometry, box: Box, slack: float):
    """(position box or None, whether the raw bound lies inside the receiver chart)."""
    try:
        exprs = geometry.expressions(box, derivatives=False, fp_slack=slack)
    except PieceDropped:
        return None, False
    except UnboundedPiece:
        return Box.unit(), False
    pos = position_bound(exprs, box, slack)
    if pos is None:
        return None, False
    u, v, _ = _receiver_ranges(exprs, slack)
    inside = u.is_finite and v.is_finite and u.lo >= 0.0 and v.lo >= 0.0 and u.hi <= 1.0 and v.hi <= 1.0
    return pos, inside


def init_domain(geometry: TupleGeometry, max_pieces: Optional[int] = None,
                max_depth: Optional[int] = None, fp_slack: Optional[float] = None) -> List[Box]:
    """Boxes of the u1 domain whose paths may land on the receiver.

    Refines level by level, keeping boxes whose position bound lies inside
    the receiver chart and splitting boxes that straddle it, until the piece
    budget would be exceeded.
    """
    max_pieces = app_settings.INIT_MAX_PIECES if max_pieces is None else max_pieces
    max_depth = app_settings.INIT_MAX_DEPTH if max_depth is None else max_depth
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack

    accepted: List[Box] = []
    frontier = [Box.unit()]
    for depth in range(max_depth + 1):
        partial = []
        for box in frontier:
            if _outside_triangle(box):
                continue
            pos, inside = _coarse_position(geometry, box, slack)
            if pos is None:
                continue
            (accepted if inside else partial).append(box)
        if not partial:
            break
        if depth == max_depth or len(accepted) + 4 * len(partial) > max_pieces:
            accepted.extend(partial)
            break
        frontier = [quad for box in partial for quad in box.quadrants()]
    return sorted(accepted, key=lambda b: (b.lo[1], b.lo[0], b.hi[1], b.hi[0]))


def evaluate_piece(geometry: TupleGeometry, domain: Box, depth: int, fp_slack: Optional[float] = None,
                   timings: Optional[Dict[str, float]] = None) -> TuplePiece:
    """Bounds of one sub-box. `timings` accumulates "position" and "irradiance" seconds."""
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack
    if _outside_triangle(domain):
        return TuplePiece(domain, None, ZERO, depth)
    started = time.perf_counter()
    try:
        exprs = geometry.expressions(domain, derivatives=True, fp_slack=slack)
    except PieceDropped as exc:
        logger.debug("Dropped piece %s: %s", domain, exc)
        return TuplePiece(domain, None, ZERO, depth)
    except UnboundedPiece as exc:
        logger.debug("Unbounded piece %s: %s", domain, exc)
        return TuplePiece(domain, Box.unit(), UNBOUNDED, depth)
    pos = position_bound(exprs, domain, slack)
    located = time.perf_counter()
    if timings is not None:
        timings["position"] = timings.get("position", 0.0) + located - started
    if pos is None:
        return TuplePiece(domain, None, ZERO, depth)
    bound = irradiance_bound(exprs, domain, pos, slack)
    if timings is not None:
        timings["irradiance"] = timings.get("irradiance", 0.0) + time.perf_counter() - located
    return TuplePiece(domain, pos, bound, depth)


def _is_leaf(piece: TuplePiece, params: SubdivisionParams) -> bool:
    if piece.empty or piece.depth >= params.max_depth:
        return True
    if piece.position.area < params.sigma:
        return True
    bound = piece.irradiance
    if bound.hi == 0.0:
        return True
    return bound.lo > 0.0 and math.isfinite(bound.hi) and bound.hi / bound.lo < params.alpha


def subdivide_domain(geometry: TupleGeometry, domains: Sequence[Box], params: SubdivisionParams,
                     timings: Optional[Dict[str, float]] = None) -> List[TuplePiece]:
    """Quadtree refinement of each initial box; returns the leaves in order."""
    leaves: List[TuplePiece] = []
    stack = [(box, _depth_of(box)) for box in reversed(list(domains))]
    while stack:
        box, depth = stack.pop()
        piece = evaluate_piece(geometry, box, depth, params.fp_slack, timings)
        if _is_leaf(piece, params):
            leaves.append(piece)
            continue
        stack.extend((quad, depth + 1) for quad in reversed(box.quadrants()))
    return leaves


def bound_tuple(geometry: TupleGeometry, params: SubdivisionParams,
                timings: Optional[Dict[str, float]] = None) -> List[TuplePiece]:
    """init_domain followed by subdivide_domain."""
    domains = init_domain(geometry, fp_slack=params.fp_slack)
    if not domains:
        return []
    pieces = subdivide_domain(geometry, domains, params, timings)
    logger.debug(
        "Tuple bounded: %d initial boxes, %d pieces (%d non-empty)",
        len(domains), len(pieces), sum(1 for p in pieces if not p.empty),
    )
    return pieces


def tuple_irradiance_bound(pieces: Sequence[TuplePiece], uk: Sequence[float], m: Optional[int] = None) -> float:
    """m times the largest irradiance bound among pieces covering u_k (0 if none)."""
    m = app_settings.MULTIPLICITY if m is None else m
    if m < 1:
        raise ValueError(f"multiplicity must be at least 1, got {m}")
    covering = [p.irradiance.hi for p in pieces if p.covers(uk)]
    if not covering:
        return 0.0
    return m * max(covering)


def pieces_area(pieces: Sequence[TuplePiece]) -> float:
    return float(np.sum([p.domain.area for p in pieces]))
