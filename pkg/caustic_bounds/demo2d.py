"""
Flatland version of the bounding machinery.

A point light at L reflects off a mirror segment P0 -> P1 whose normal is
interpolated between N0 and N1, and lands on a receiver segment Q0 -> Q1.
The path is parameterized by u in [0, 1] along the mirror and lands at t in
[0, 1] along the receiver, with irradiance

    E(u) = I0 |c(u)| / (|d0(u)|^2 |dt/du| |Q1 - Q0|),   c = d0 x (P1 - P0).

Pieces of the u interval get a t range and an irradiance interval from the
same one-variable Bernstein arithmetic the 3D bounds use; reference curves
come from evaluating the exact polynomials pointwise.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .bernstein import BernsteinPoly, Interval, partial_derivative, rational_bound
from .conf import app_settings

logger = logging.getLogger(__name__)

DEFAULT_CASES = [
    {
        "name": "straight",
        "mirror": {"p": [[-1.0, 0.0], [1.0, 0.0]], "n": [[0.0, 1.0], [0.0, 1.0]]},
        "receiver": [[-3.0, 2.0], [3.0, 2.0]],
    },
    {
        # Concave mirror: reflected rays cross before the receiver, so t(u)
        # folds back and irradiance diverges where dt/du = 0.
        "name": "fold",
        "mirror": {"p": [[-1.0, 0.0], [1.0, 0.0]], "n": [[0.6, 1.0], [-0.6, 1.0]]},
        "receiver": [[-4.0, 3.0], [4.0, 3.0]],
    },
]

DEFAULT_CONFIG = {
    "light": [0.0, 1.0],
    "intensity": 1.0,
    "alpha": 2.0,
    "max_depth": 8,
    "sigma": 1e-4,
    "samples": 2001,
    "receiver_samples": 401,
    "cases": DEFAULT_CASES,
}


@dataclass(frozen=True)
class Case2D:
    name: str
    light: np.ndarray
    intensity: float
    p: np.ndarray
    n: np.ndarray
    q: np.ndarray

    @classmethod
    def from_dict(cls, data: Dict, light: Sequence[float], intensity: float) -> "Case2D":
        return cls(
            name=data["name"],
            light=np.asarray(data.get("light", light), dtype=float),
            intensity=float(data.get("intensity", intensity)),
            p=np.asarray(data["mirror"]["p"], dtype=float),
            n=np.asarray(data["mirror"]["n"], dtype=float),
            q=np.asarray(data["receiver"], dtype=float),
        )

    @property
    def receiver_length(self) -> float:
        return float(np.linalg.norm(self.q[1] - self.q[0]))


@dataclass(frozen=True)
class Piece1D:
    u: Interval
    t: Optional[Interval]
    irradiance: Interval
    depth: int

    @property
    def empty(self) -> bool:
        return self.t is None

    def to_dict(self) -> Dict:
        return {
            "u": [self.u.lo, self.u.hi],
            "t": None if self.t is None else [self.t.lo, self.t.hi],
            "E": [self.irradiance.lo, self.irradiance.hi],
            "depth": self.depth,
        }


@dataclass
class _Maps:
    t_num: BernsteinPoly
    s_num: BernsteinPoly
    den: BernsteinPoly
    c: BernsteinPoly
    d0_sq: BernsteinPoly


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1]


def _maps(case: Case2D, lo: float, hi: float) -> _Maps:
    u = BernsteinPoly.variable(1, 0, lo, hi)
    edge = case.p[1] - case.p[0]
    x1 = [case.p[0][i] + edge[i] * u for i in range(2)]
    n = [case.n[0][i] + (case.n[1][i] - case.n[0][i]) * u for i in range(2)]
    d0 = [x1[i] - case.light[i] for i in range(2)]
    nn, dn = _dot(n, n), _dot(d0, n)
    d1 = [nn * d0[i] - 2.0 * dn * n[i] for i in range(2)]
    e = case.q[1] - case.q[0]
    offset = [x1[i] - case.q[0][i] for i in range(2)]
    return _Maps(
        t_num=_cross(offset, d1),
        s_num=_cross(offset, e),
        den=_cross(e, d1),
        c=_cross(d0, edge),
        d0_sq=_dot(d0, d0),
    )


def bound_piece(case: Case2D, lo: float, hi: float, depth: int = 0,
                fp_slack: Optional[float] = None) -> Piece1D:
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack
    m = _maps(case, lo, hi)
    u = Interval(lo, hi)
    s = rational_bound(m.s_num, m.den)
    if s.is_finite and s.hi <= 0.0:
        return Piece1D(u, None, Interval(0.0, 0.0), depth)
    t = rational_bound(m.t_num, m.den).widened(slack).clip(0.0, 1.0)
    if t is None:
        return Piece1D(u, None, Interval(0.0, 0.0), depth)
    # dt/du on the piece's local parameter, scaled back to u.
    k = partial_derivative(m.t_num, 0) * m.den - m.t_num * partial_derivative(m.den, 0)
    ratio = rational_bound(m.c * m.den * m.den, m.d0_sq * k).magnitude()
    scale = case.intensity * (hi - lo) / case.receiver_length
    energy = Interval(scale * ratio.lo, scale * ratio.hi).widened(slack)
    return Piece1D(u, t, Interval(max(energy.lo, 0.0), energy.hi), depth)


def subdivide(case: Case2D, alpha: float, max_depth: int, sigma: float,
              fp_slack: Optional[float] = None) -> List[Piece1D]:
    """Binary refinement of u in [0, 1] with the 3D stopping rule."""
    leaves: List[Piece1D] = []
    stack = [(0.0, 1.0, 0)]
    while stack:
        lo, hi, depth = stack.pop()
        piece = bound_piece(case, lo, hi, depth, fp_slack)
        bound = piece.irradiance
        leaf = (
            piece.empty
            or depth >= max_depth
            or piece.t.width < sigma
            or bound.hi == 0.0
            or (bound.lo > 0.0 and math.isfinite(bound.hi) and bound.hi / bound.lo < alpha)
        )
        if leaf:
            leaves.append(piece)
            continue
        mid = 0.5 * (lo + hi)
        stack.extend([(mid, hi, depth + 1), (lo, mid, depth + 1)])
    return leaves


def uniform_pieces(case: Case2D, count: int, fp_slack: Optional[float] = None) -> List[Piece1D]:
    edges = np.linspace(0.0, 1.0, count + 1)
    return [bound_piece(case, a, b, 0, fp_slack) for a, b in zip(edges[:-1], edges[1:])]


def bound_area(pieces: Sequence[Piece1D]) -> float:
    """Total area of the (u, E) rectangles of non-empty pieces."""
    return float(sum(p.u.width * p.irradiance.width for p in pieces if not p.empty))


@dataclass
class ReferenceCurve:
    u: np.ndarray
    t: np.ndarray
    irradiance: np.ndarray
    valid: np.ndarray = field(repr=False)


def reference_curve(case: Case2D, samples: int = 2001) -> ReferenceCurve:
    """Exact t(u) and E(u) at evenly spaced u."""
    m = _maps(case, 0.0, 1.0)
    u = np.linspace(0.0, 1.0, samples)
    pts = u[:, None]
    num, den, s_num = m.t_num(pts), m.den(pts), m.s_num(pts)
    dnum = partial_derivative(m.t_num, 0)(pts)
    dden = partial_derivative(m.den, 0)(pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / den
        dt = (dnum * den - num * dden) / (den * den)
        energy = case.intensity * np.abs(m.c(pts)) / (m.d0_sq(pts) * np.abs(dt) * case.receiver_length)
        valid = (s_num / den > 0.0) & (t >= 0.0) & (t <= 1.0)
    return ReferenceCurve(u, t, np.where(valid, energy, 0.0), valid)


def per_tuple_curves(case: Case2D, pieces: Sequence[Piece1D], curve: ReferenceCurve,
                     samples: int = 401) -> Dict[str, List[float]]:
    """Sum of E over all roots of t(u) = t against m * max piece bound, m = 1, 2."""
    m = _maps(case, 0.0, 1.0)

    def t_of(x):
        return m.t_num(x) / m.den(x)

    grid = np.linspace(0.0, 1.0, samples)
    sums, bounds = [], []
    for target in grid:
        total = 0.0
        residual = np.where(curve.valid, curve.t - target, np.nan)
        for i in range(len(curve.u) - 1):
            a, b = residual[i], residual[i + 1]
            if not (np.isfinite(a) and np.isfinite(b)) or a * b > 0.0:
                continue
            if a == 0.0 and i > 0:
                continue
            root = curve.u[i] if a == 0.0 else brentq(lambda x: t_of(x) - target, curve.u[i], curve.u[i + 1])
            total += float(np.interp(root, curve.u, curve.irradiance))
        sums.append(total)
        covering = [p.irradiance.hi for p in pieces if not p.empty and p.t.contains(target)]
        bounds.append(max(covering) if covering else 0.0)
    bounds = np.asarray(bounds)
    return {
        "t": grid.tolist(),
        "sum": sums,
        "bound_m1": bounds.tolist(),
        "bound_m2": (2.0 * bounds).tolist(),
    }


def run_case(case: Case2D, alpha: float, max_depth: int, sigma: float,
             samples: int = 2001, receiver_samples: int = 401) -> Dict:
    pieces = subdivide(case, alpha, max_depth, sigma)
    curve = reference_curve(case, samples)
    logger.info(
        "Case %s: %d pieces, %d with infinite bounds",
        case.name, len(pieces), sum(1 for p in pieces if math.isinf(p.irradiance.hi)),
    )
    return {
        "name": case.name,
        "reference": {
            "u": curve.u.tolist(),
            "t": np.where(curve.valid, curve.t, np.nan).tolist(),
            "E": curve.irradiance.tolist(),
        },
        "pieces": [p.to_dict() for p in pieces],
        "per_tuple": per_tuple_curves(case, pieces, curve, receiver_samples),
    }


def demo2d(config: Optional[Dict] = None, out_dir: Optional[Union[str, Path]] = None) -> Dict[str, Dict]:
    """Run every case of the config; write <name>.json files when out_dir is given."""
    config = {**DEFAULT_CONFIG, **(config or {})}
    results = {}
    for raw in config["cases"]:
        case = Case2D.from_dict(raw, config["light"], config["intensity"])
        results[case.name] = run_case(
            case,
            alpha=float(raw.get("alpha", config["alpha"])),
            max_depth=int(raw.get("max_depth", config["max_depth"])),
            sigma=float(raw.get("sigma", config["sigma"])),
            samples=int(config["samples"]),
            receiver_samples=int(config["receiver_samples"]),
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, data in results.items():
            # NaN marks invalid reference samples and Infinity unbounded pieces.
            (out / f"{name}.json").write_text(json.dumps(data))
        logger.info("Wrote %d demo cases to %s", len(results), out)
    return results
