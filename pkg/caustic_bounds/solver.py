"""
Admissible specular paths inside one triangle tuple.

Unknowns are the barycentrics of every specular vertex; each vertex
contributes the two tangential components of its generalized half vector.
Damped Newton iterations with a finite-difference Jacobian are started from
a deterministic grid (Det) or from random points with an unbiased
re-discovery weight (Stoc).
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .conf import app_settings
from .geometry import (
    ChainSpec,
    Scattering,
    TupleGeometry,
    traced_irradiance,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-9
DEDUP_TOLERANCE = 1e-6
MAX_HALVINGS = 8
FD_STEP = 1e-7


class DegenerateNormal(ValueError):
    pass


@dataclass(frozen=True)
class Det:
    grid: int = 3


@dataclass(frozen=True)
class Stoc:
    rng: np.random.Generator
    max_trials: int = 1000


@dataclass(eq=False)
class AdmissiblePath:
    geometry: TupleGeometry
    u1: np.ndarray
    barycentrics: List[np.ndarray]
    positions: List[np.ndarray]
    provenance: str = "det"
    weight: float = 1.0
    contribution: float = math.nan

    @property
    def chain(self) -> ChainSpec:
        return self.geometry.chain


def _tangent_frame(n: np.ndarray):
    norm = np.linalg.norm(n)
    if norm < 1e-300:
        raise DegenerateNormal("zero shading normal")
    n = n / norm
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    s = np.cross(n, helper)
    s /= np.linalg.norm(s)
    return n, s, np.cross(n, s)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm < 1e-300:
        raise DegenerateNormal("coincident path vertices")
    return v / norm


def constraint_residual(positions: Sequence[np.ndarray], normals: Sequence[np.ndarray],
                        chain: ChainSpec, iors: Sequence[float]) -> np.ndarray:
    """Tangential generalized half vector at every specular vertex.

    positions holds x0 (light) through xk (receiver); normals and iors hold
    one entry per specular vertex. The residual vanishes exactly when the
    reflection or refraction law holds everywhere.
    """
    out = np.empty(2 * len(chain))
    for i, scattering in enumerate(chain.scattering):
        x = positions[i + 1]
        wi = _unit(positions[i] - x)
        wo = _unit(positions[i + 2] - x)
        n, s, t = _tangent_frame(np.asarray(normals[i], dtype=float))
        if scattering == Scattering.REFLECT:
            h = wi + wo
        else:
            eta_i, eta_o = (1.0, iors[i]) if wi @ n > 0.0 else (iors[i], 1.0)
            h = eta_i * wi + eta_o * wo
        out[2 * i] = h @ s
        out[2 * i + 1] = h @ t
    return out


def _vertices(geometry: TupleGeometry, params: np.ndarray):
    bary = params.reshape(-1, 2)
    positions = [geometry.light.vector]
    normals = []
    for tri, (u, v) in zip(geometry.triangles, bary):
        positions.append(tri.point(u, v))
        normals.append(tri.normal_at(u, v))
    return positions, normals


def _residual(geometry: TupleGeometry, params: np.ndarray, target: np.ndarray) -> np.ndarray:
    positions, normals = _vertices(geometry, params)
    positions.append(target)
    iors = [t.material.ior for t in geometry.triangles]
    return constraint_residual(positions, normals, geometry.chain, iors)


def _clamp(params: np.ndarray) -> np.ndarray:
    bary = np.clip(params.reshape(-1, 2), 0.0, 1.0)
    total = bary.sum(axis=1)
    over = total > 1.0
    bary[over] /= total[over, None]
    return bary.ravel()


def _jacobian(geometry, params, target, r0):
    jac = np.empty((len(r0), len(params)))
    for j in range(len(params)):
        step = np.zeros_like(params)
        step[j] = FD_STEP
        jac[:, j] = (_residual(geometry, params + step, target) - r0) / FD_STEP
    return jac


def _newton(geometry: TupleGeometry, start: np.ndarray, target: np.ndarray,
            max_iterations: int) -> Optional[np.ndarray]:
    params = _clamp(np.array(start, dtype=float))
    perturbed = False
    for _ in range(max_iterations):
        try:
            r = _residual(geometry, params, target)
        except DegenerateNormal:
            return None
        norm = np.linalg.norm(r)
        if norm <= RESIDUAL_TOLERANCE:
            return params
        jac = _jacobian(geometry, params, target, r)
        try:
            if np.linalg.cond(jac) > 1e14:
                raise np.linalg.LinAlgError("singular")
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            if perturbed:
                logger.debug("Singular Jacobian twice; giving up on this start")
                return None
            perturbed = True
            params = _clamp(params + 1e-3 * np.resize([1.0, -0.5], params.shape))
            continue
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = _clamp(params + scale * step)
            try:
                if np.linalg.norm(_residual(geometry, candidate, target)) < norm:
                    break
            except DegenerateNormal:
                pass
            scale *= 0.5
        else:
            return None
        params = candidate
    try:
        if np.linalg.norm(_residual(geometry, params, target)) <= RESIDUAL_TOLERANCE:
            return params
    except DegenerateNormal:
        pass
    return None


def _admissible(geometry: TupleGeometry, params: np.ndarray, target: np.ndarray) -> bool:
    """Forward trace from the root must land on the target point."""
    trace = geometry.trace(params[:2])
    if not trace.valid:
        return False
    landed = trace.positions[-1]
    scale = max(1.0, float(np.linalg.norm(target)))
    return float(np.linalg.norm(landed - target)) <= 1e-6 * scale


def _start_points(geometry: TupleGeometry, u1: np.ndarray) -> np.ndarray:
    """Seed the later vertices by tracing from u1 (centroid when the trace misses)."""
    params = [np.asarray(u1, dtype=float)]
    traced = geometry.prefix(len(geometry.triangles)).trace(u1).barycentrics
    for k in range(1, len(geometry.triangles)):
        seed = traced[k] if k < len(traced) else (1.0 / 3.0, 1.0 / 3.0)
        params.append(np.array(seed, dtype=float))
    return np.concatenate(params)


def _grid_starts(n: int) -> List[np.ndarray]:
    starts = []
    for j in range(n):
        for i in range(n):
            u, v = (i + 0.5) / n, (j + 0.5) / n
            if u + v > 1.0:
                u, v = 1.0 - u, 1.0 - v
            starts.append(np.array([u, v]))
    return starts


def _uniform_start(rng: np.random.Generator) -> np.ndarray:
    u, v = rng.random(2)
    if u + v > 1.0:
        u, v = 1.0 - u, 1.0 - v
    return np.array([u, v])


def _make_path(geometry, params, provenance, weight) -> AdmissiblePath:
    positions, _ = _vertices(geometry, params)
    path = AdmissiblePath(
        geometry=geometry,
        u1=params[:2].copy(),
        barycentrics=list(params.reshape(-1, 2)),
        positions=positions,
        provenance=provenance,
        weight=weight,
    )
    path.contribution = path_contribution(path)
    return path


def _solve_from(geometry, u1, target, max_iterations):
    root = _newton(geometry, _start_points(geometry, u1), target, max_iterations)
    if root is None or not _admissible(geometry, root, target):
        return None
    return root


def newton_solve(geometry: TupleGeometry, target: Sequence[float], init: Union[Det, Stoc, None] = None,
                 max_iterations: Optional[int] = None) -> List[AdmissiblePath]:
    """Admissible paths of the tuple ending at the receiver point `target`."""
    target = np.asarray(target, dtype=float)
    init = init or Det(app_settings.DET_GRID)
    max_iterations = app_settings.NEWTON_MAX_ITERATIONS if max_iterations is None else max_iterations

    if isinstance(init, Det):
        roots: List[np.ndarray] = []
        for start in _grid_starts(init.grid):
            root = _solve_from(geometry, start, target, max_iterations)
            if root is None:
                continue
            if any(np.linalg.norm(root - r) < DEDUP_TOLERANCE for r in roots):
                continue
            roots.append(root)
        return [_make_path(geometry, r, "det", 1.0) for r in roots]

    first = _solve_from(geometry, _uniform_start(init.rng), target, max_iterations)
    if first is None:
        return []
    trials = 0
    while True:
        trials += 1
        again = _solve_from(geometry, _uniform_start(init.rng), target, max_iterations)
        if again is not None and np.linalg.norm(again - first) < DEDUP_TOLERANCE:
            break
        if trials >= init.max_trials:
            logger.warning("Stochastic root re-discovery hit the %d-trial cap", init.max_trials)
            break
    return [_make_path(geometry, first, "stoc", float(trials))]


def path_contribution(path: AdmissiblePath) -> float:
    """Irradiance E_k of the path at its receiver point (inf at focal points)."""
    geometry = path.geometry
    trace = geometry.trace(path.u1)
    if not trace.valid:
        return 0.0
    return traced_irradiance(trace, geometry.triangles[0], geometry.receiver, geometry.light)
