"""
End-to-end passes over a scene: precompute the bound cache, render the
UV grid of one receiver object with bound-driven tuple sampling, compute
the enumerated reference, check bounds against traced paths, and compare
estimators.

Pixels are receiver UV shading points: pixel (ix, iy) sits at
uv = ((ix + 0.5) / res, (iy + 0.5) / res) and row 0 is v = 0.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import sampler, storage
from .bounds import SubdivisionParams, TuplePiece, bound_tuple
from .conf import app_settings
from .geometry import ChainSpec, TupleGeometry, traced_irradiance
from .scene import Scene
from .solver import Det, Stoc, newton_solve
from .tuples import TupleId, enumerate_tuples

logger = logging.getLogger(__name__)

RELMSE_EPSILON = 1e-2
RATIO_TOLERANCE = 1e-9


@dataclass
class PrecomputeResult:
    cache: storage.BoundCache
    pieces: Dict[TupleId, List[TuplePiece]]
    timings: Dict[str, float]

    @property
    def piece_count(self) -> int:
        return sum(len(p) for p in self.pieces.values())

    def timing_breakdown(self) -> Dict[str, float]:
        """Share of bounding time spent on positions, irradiance and recording."""
        parts = {k: self.timings.get(k, 0.0) for k in ("position", "irradiance", "recording")}
        total = sum(parts.values())
        if total <= 0.0:
            return {k: 0.0 for k in parts}
        return {k: 100.0 * v / total for k, v in parts.items()}


@dataclass
class RenderStats:
    spp: int
    gamma: Optional[float] = None
    candidates: Optional[float] = None
    mean_selected: float = 0.0
    mean_bins: float = 0.0
    mean_covering: float = 0.0
    precompute_seconds: Optional[float] = None
    render_seconds: float = 0.0
    sampling_seconds: float = 0.0
    relmse: Optional[float] = None

    def to_dict(self) -> Dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, float) and not math.isfinite(value):
                out[key] = None
        return out


# ---------------------------------------------------------------------------
# Precompute
# ---------------------------------------------------------------------------

def _bound_one(scene: Scene, tid: TupleId, chain: ChainSpec, params: SubdivisionParams):
    timings: Dict[str, float] = {}
    pieces = bound_tuple(scene.geometry(tid.specular, tid.receiver, chain), params, timings)
    return pieces, timings


def _bound_task(args):
    return _bound_one(*args)


def precompute(scene: Scene, chain: ChainSpec, params: Optional[SubdivisionParams] = None,
               resolution: Optional[int] = None, multiplicity: Optional[int] = None,
               workers: Optional[int] = None) -> PrecomputeResult:
    """Enumerate tuples, bound each one, and rasterize the pieces into a cache."""
    params = params or SubdivisionParams.for_chain(chain)
    resolution = app_settings.GRID_RESOLUTION if resolution is None else resolution
    multiplicity = app_settings.MULTIPLICITY if multiplicity is None else multiplicity
    workers = app_settings.WORKERS if workers is None else workers

    started = time.perf_counter()
    tuples = enumerate_tuples(scene, chain)
    timings = {"enumerate": time.perf_counter() - started, "position": 0.0, "irradiance": 0.0}

    jobs = [(scene, tid, chain, params) for tid in tuples]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bound_task, jobs))
    else:
        results = [_bound_task(job) for job in jobs]

    pieces: Dict[TupleId, List[TuplePiece]] = {}
    for tid, (tuple_pieces, tuple_timings) in zip(tuples, results):
        pieces[tid] = tuple_pieces
        for key, value in tuple_timings.items():
            timings[key] += value

    recording = time.perf_counter()
    receivers = {t.index: t for t in scene.receivers}
    cache = storage.rasterize(
        [(tid, pieces[tid]) for tid in tuples], receivers, resolution,
        chain=str(chain), fingerprint=scene.fingerprint(), multiplicity=multiplicity,
        params={
            "sigma": params.sigma,
            "alpha": params.alpha,
            "max_depth": params.max_depth,
            "fp_slack": params.fp_slack,
            "multiplicity": multiplicity,
        },
    )
    timings["recording"] = time.perf_counter() - recording
    timings["total"] = time.perf_counter() - started
    logger.info(
        "Precomputed %d tuples, %d pieces in %.2fs",
        len(tuples), sum(len(p) for p in pieces.values()), timings["total"],
    )
    return PrecomputeResult(cache, pieces, timings)


# ---------------------------------------------------------------------------
# Per-pixel evaluation
# ---------------------------------------------------------------------------

@dataclass
class _Context:
    scene: Scene
    cache: storage.BoundCache
    resolution: int
    det_grid: int
    root_finder: str = "det"
    seed: int = 0
    spp: int = 1
    gamma: Optional[float] = None
    candidates: Optional[float] = None
    strategy: str = "binned"
    receiver: Optional[str] = None
    geometries: Dict[int, TupleGeometry] = field(default_factory=dict)

    def geometry(self, index: int) -> TupleGeometry:
        if index not in self.geometries:
            tid = self.cache.tuples[index]
            self.geometries[index] = self.scene.geometry(
                tid.specular, tid.receiver, ChainSpec.parse(self.cache.chain)
            )
        return self.geometries[index]


def pixel_uv(ix: int, iy: int, resolution: int) -> Tuple[float, float]:
    return (ix + 0.5) / resolution, (iy + 0.5) / resolution


def _covering(ctx: _Context, uv) -> List[Tuple[int, float, np.ndarray]]:
    """(tuple index, bound, receiver point) for the covering set U at uv.

    Only the grid of ctx.receiver is consulted, and a tuple is kept only when
    uv lies inside its receiver triangle's UV triangle.
    """
    out = []
    for index, bound in storage.query_indices(ctx.cache, uv, ctx.receiver):
        receiver = ctx.scene.triangle(ctx.cache.tuples[index].receiver)
        bary = receiver.barycentric_inside_uv(uv)
        if bary is None:
            continue
        out.append((index, bound, receiver.point(*bary)))
    return out


def _det_contribution(ctx: _Context, index: int, target: np.ndarray) -> float:
    paths = newton_solve(ctx.geometry(index), target, Det(ctx.det_grid))
    return float(sum(p.contribution for p in paths))


def _contribution_fn(ctx: _Context, covering, rng) -> Callable[[int], float]:
    """Contribution of covering[k]; Det results are reused across samples."""
    memo: Dict[int, float] = {}

    def contribution(k: int) -> float:
        index, _, target = covering[k]
        if ctx.root_finder == "stoc":
            paths = newton_solve(ctx.geometry(index), target, Stoc(rng, app_settings.STOC_MAX_TRIALS))
            return float(sum(p.weight * p.contribution for p in paths))
        if k not in memo:
            memo[k] = _det_contribution(ctx, index, target)
        return memo[k]

    return contribution


def _sample_pixel(ctx: _Context, pixel: int, uv) -> Dict[str, float]:
    covering = _covering(ctx, uv)
    out = {"value": 0.0, "selected": 0.0, "bins": 0.0, "covering": float(len(covering)),
           "sampling": 0.0, "gamma": math.nan}
    if not covering:
        return out
    bounds = np.array([b for _, b, _ in covering])
    rng = sampler.pixel_rng(ctx.seed, pixel)
    contribution = _contribution_fn(ctx, covering, rng)

    if ctx.strategy == "enumerate":
        out["value"] = float(sum(contribution(k) for k in range(len(covering))))
        out["selected"] = out["bins"] = float(len(covering))
        return out
    if not np.any(bounds > 0.0):
        return out

    started = time.perf_counter()
    if ctx.strategy == "uniform":
        probs = sampler.uniform_probabilities(bounds, ctx.candidates or 1.0)
    elif ctx.gamma is not None:
        probs = sampler.optimize_probabilities(bounds, gamma=ctx.gamma)
    else:
        probs = sampler.optimize_probabilities(bounds, candidates=min(ctx.candidates, len(bounds)))
    layout = sampler.pack_bins(probs)
    out["sampling"] += time.perf_counter() - started
    out["gamma"] = probs.gamma
    out["bins"] = float(len(layout))

    total, selected = 0.0, 0
    for _ in range(ctx.spp):
        started = time.perf_counter()
        if ctx.strategy == "one_sample":
            sample, _ = sampler.sample_one(bounds, np.zeros(len(bounds)), rng)
        elif ctx.strategy == "independent" or ctx.strategy == "uniform":
            sample, _ = sampler.sample_multi(probs, np.zeros(len(bounds)), rng)
        else:
            sample = sampler.sample_binned(layout, probs, rng)
        out["sampling"] += time.perf_counter() - started
        selected += len(sample)
        total += sampler.estimate(sample, contribution)
    out["value"] = total / ctx.spp
    out["selected"] = selected / ctx.spp
    return out


def _render_row(ctx: _Context, iy: int) -> List[Dict[str, float]]:
    res = ctx.resolution
    return [_sample_pixel(ctx, iy * res + ix, pixel_uv(ix, iy, res)) for ix in range(res)]


_WORKER_CONTEXT: Optional[_Context] = None


def _init_worker(ctx: _Context):
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = ctx


def _row_task(iy: int):
    return _render_row(_WORKER_CONTEXT, iy)


def _run(ctx: _Context, workers: int) -> List[List[Dict[str, float]]]:
    rows = range(ctx.resolution)
    if workers > 1 and ctx.resolution > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            return list(pool.map(_row_task, rows))
    return [_render_row(ctx, iy) for iy in rows]


def _image(rows, key: str = "value") -> np.ndarray:
    return np.array([[pixel[key] for pixel in row] for row in rows], dtype=float)


def relmse(image: np.ndarray, reference: np.ndarray) -> float:
    """Mean of (x - ref)^2 / (ref^2 + eps) over pixels where both are finite."""
    image, reference = np.asarray(image, dtype=float), np.asarray(reference, dtype=float)
    mask = np.isfinite(image) & np.isfinite(reference)
    if not mask.any():
        return math.nan
    err = (image[mask] - reference[mask]) ** 2 / (reference[mask] ** 2 + RELMSE_EPSILON)
    return float(err.mean())


def display_image(image: np.ndarray, factor: Optional[float] = None) -> np.ndarray:
    """Clamp fireflies above factor x median of the positive finite pixels."""
    factor = app_settings.FIREFLY_FACTOR if factor is None else factor
    image = np.array(image, dtype=float)
    positive = image[np.isfinite(image) & (image > 0.0)]
    ceiling = factor * float(np.median(positive)) if positive.size else 0.0
    return np.minimum(np.nan_to_num(image, nan=0.0, posinf=ceiling), ceiling)


# ---------------------------------------------------------------------------
# Passes
# ---------------------------------------------------------------------------

def render_receiver(scene: Scene, cache: storage.BoundCache, *, gamma: Optional[float] = None,
                    candidates: Optional[float] = None, spp: int = 1, resolution: Optional[int] = None,
                    seed: Optional[int] = None, root_finder: str = "det", det_grid: Optional[int] = None,
                    workers: Optional[int] = None, reference: Optional[np.ndarray] = None,
                    precompute_seconds: Optional[float] = None,
                    receiver: Optional[str] = None) -> Tuple[np.ndarray, RenderStats]:
    """Irradiance on one receiver object's UV grid, averaged over spp tuple samples per pixel.

    ``receiver`` names the object; it may be omitted when the cache holds one grid.
    """
    if (gamma is None) == (candidates is None):
        raise ValueError("give exactly one of gamma and candidates")
    if spp < 1:
        raise ValueError(f"spp must be at least 1, got {spp}")
    if root_finder not in ("det", "stoc"):
        raise ValueError(f"unknown root finder {root_finder!r}")
    cache.check(scene.fingerprint())
    receiver = cache.receiver_name(receiver)

    ctx = _Context(
        scene=scene, cache=cache, receiver=receiver,
        resolution=cache.width if resolution is None else resolution,
        det_grid=app_settings.DET_GRID if det_grid is None else det_grid,
        root_finder=root_finder,
        seed=app_settings.SEED if seed is None else seed,
        spp=spp, gamma=gamma, candidates=candidates,
    )
    started = time.perf_counter()
    rows = _run(ctx, app_settings.WORKERS if workers is None else workers)
    image = _image(rows)
    elapsed = time.perf_counter() - started

    gammas = _image(rows, "gamma")
    finite_gamma = gammas[np.isfinite(gammas)]
    stats = RenderStats(
        spp=spp,
        gamma=gamma if gamma is not None else (float(finite_gamma.mean()) if finite_gamma.size else None),
        candidates=candidates,
        mean_selected=float(_image(rows, "selected").mean()),
        mean_bins=float(_image(rows, "bins").mean()),
        mean_covering=float(_image(rows, "covering").mean()),
        precompute_seconds=precompute_seconds,
        render_seconds=elapsed,
        sampling_seconds=float(_image(rows, "sampling").sum()),
        relmse=relmse(image, reference) if reference is not None else None,
    )
    logger.info(
        "Rendered %s %dx%d at %d spp in %.2fs (|S| %.2f, |B| %.2f, |U| %.2f)",
        receiver, ctx.resolution, ctx.resolution, spp, elapsed,
        stats.mean_selected, stats.mean_bins, stats.mean_covering,
    )
    return image, stats


def reference_enumerate(scene: Scene, chain: Optional[ChainSpec] = None, resolution: Optional[int] = None,
                        cache: Optional[storage.BoundCache] = None, grid: Optional[int] = None,
                        workers: Optional[int] = None, receiver: Optional[str] = None) -> np.ndarray:
    """Zero-variance image of one receiver object: Det roots of every tuple covering each pixel."""
    if cache is None:
        if chain is None:
            raise ValueError("a chain is required when no bound cache is given")
        cache = precompute(scene, chain, resolution=resolution, workers=workers).cache
    else:
        cache.check(scene.fingerprint())
        if chain is not None and str(chain) != cache.chain:
            raise ValueError(f"cache was computed for chain {cache.chain}, not {chain}")
    ctx = _Context(
        scene=scene, cache=cache, receiver=cache.receiver_name(receiver),
        resolution=cache.width if resolution is None else resolution,
        det_grid=app_settings.REFERENCE_GRID if grid is None else grid,
        strategy="enumerate",
    )
    rows = _run(ctx, app_settings.WORKERS if workers is None else workers)
    return _image(rows)


def _histogram(values: Sequence[float], edges: np.ndarray) -> Dict:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=edges)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def validate_bounds(scene: Scene, cache: storage.BoundCache, n_samples: int = 10000,
                    seed: Optional[int] = None, root_checks: int = 200,
                    max_attempts: Optional[int] = None) -> Dict:
    """Compare cached bounds with the irradiance of forward-traced paths."""
    cache.check(scene.fingerprint())
    rng = np.random.default_rng(app_settings.SEED if seed is None else seed)
    chain = ChainSpec.parse(cache.chain)
    max_attempts = 100 * n_samples if max_attempts is None else max_attempts
    geometries = [scene.geometry(t.specular, t.receiver, chain) for t in cache.tuples]

    ratios: List[float] = []
    checks: List[Tuple[int, np.ndarray]] = []
    violations = infinite = outside = attempts = 0
    while geometries and len(ratios) < n_samples and attempts < max_attempts:
        attempts += 1
        index = int(rng.integers(len(geometries)))
        geometry = geometries[index]
        u, v = rng.random(2)
        if u + v > 1.0:
            u, v = 1.0 - u, 1.0 - v
        path = geometry.trace((u, v))
        if not path.valid:
            continue
        uv = geometry.receiver.uv_at(*path.receiver_uv)
        cell = cache.cell_index(uv)
        if cell is None:
            outside += 1
            continue
        energy = traced_irradiance(path, geometry.triangles[0], geometry.receiver, scene.light)
        bound = cache.grids[geometry.receiver.receiver_object][cell].get(index, 0.0)
        if math.isinf(bound):
            infinite += 1
        if energy > bound * (1.0 + RATIO_TOLERANCE):
            violations += 1
            logger.warning("Bound violation for tuple %s at uv %s: E=%.6g > %.6g",
                           cache.tuples[index], uv, energy, bound)
        if energy > 0.0 and math.isfinite(energy) and math.isfinite(bound):
            ratios.append(bound / energy)
        if len(checks) < root_checks:
            checks.append((index, path.positions[-1]))

    root_counts: Dict[str, int] = {}
    for index, target in checks:
        count = len(newton_solve(geometries[index], target, Det(app_settings.REFERENCE_GRID)))
        root_counts[str(count)] = root_counts.get(str(count), 0) + 1
    at_most_one = root_counts.get("0", 0) + root_counts.get("1", 0)

    log_ratios = np.log10(ratios) if ratios else np.zeros(0)
    report = {
        "samples": len(ratios),
        "attempts": attempts,
        "violations": violations,
        "infinite_bounds": infinite,
        "outside_grid": outside,
        "min_ratio": float(np.min(ratios)) if ratios else None,
        "median_ratio": float(np.median(ratios)) if ratios else None,
        "log10_ratio_histogram": _histogram(log_ratios, np.linspace(-1.0, 6.0, 29)),
        "root_counts": dict(sorted(root_counts.items(), key=lambda kv: int(kv[0]))),
        "fraction_at_most_one_root": at_most_one / len(checks) if checks else None,
    }
    logger.info(
        "Validated %d paths: %d violations, min ratio %s",
        report["samples"], violations, report["min_ratio"],
    )
    return report


ESTIMATORS = ("binned", "independent", "one_sample", "uniform")


def study_estimators(scene: Scene, cache: storage.BoundCache, *, candidates: float = 2.0, spp: int = 4,
                     resolution: Optional[int] = None, seed: Optional[int] = None,
                     reference: Optional[np.ndarray] = None, workers: Optional[int] = None,
                     estimators: Sequence[str] = ESTIMATORS, receiver: Optional[str] = None) -> Dict[str, Dict]:
    """Images and RelMSE of the bound-driven estimators and their baselines."""
    cache.check(scene.fingerprint())
    receiver = cache.receiver_name(receiver)
    workers = app_settings.WORKERS if workers is None else workers
    resolution = cache.width if resolution is None else resolution
    if reference is None:
        reference = reference_enumerate(scene, cache=cache, resolution=resolution, workers=workers,
                                        receiver=receiver)
    results: Dict[str, Dict] = {"reference": {"image": reference}}
    for name in estimators:
        if name not in ESTIMATORS:
            raise ValueError(f"unknown estimator {name!r}")
        ctx = _Context(
            scene=scene, cache=cache, resolution=resolution, receiver=receiver,
            det_grid=app_settings.DET_GRID,
            seed=app_settings.SEED if seed is None else seed,
            spp=spp, candidates=candidates, strategy=name,
        )
        rows = _run(ctx, workers)
        image = _image(rows)
        results[name] = {
            "image": image,
            "relmse": relmse(image, reference),
            "mean_selected": float(_image(rows, "selected").mean()),
        }
        logger.info("Estimator %s: RelMSE %.4g", name, results[name]["relmse"])
    return results
