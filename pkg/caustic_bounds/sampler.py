"""
Bound-driven stochastic selection of triangle tuples.

Every tuple T of the covering set U gets an inclusion probability
P_T = min(gamma * E~(T), 1) and is examined independently with that
probability; the estimate sum E(T) / P_T over the selected set is unbiased.
Packing tuples into bins whose probabilities sum to at most one lets each bin
be sampled with a single uniform draw.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import bisect

from .conf import app_settings

logger = logging.getLogger(__name__)

CALIBRATION_TOLERANCE = 1e-9
BIN_SLACK = 1e-9


@dataclass(frozen=True)
class TupleProbabilities:
    bounds: np.ndarray
    probabilities: np.ndarray
    gamma: float

    @property
    def expected_count(self) -> float:
        return float(self.probabilities.sum())

    def __len__(self):
        return len(self.bounds)


@dataclass(frozen=True)
class SampleSet:
    indices: np.ndarray
    probabilities: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.probabilities


@dataclass(frozen=True)
class BinLayout:
    bins: List[np.ndarray]
    cumulative: List[np.ndarray]

    def __len__(self):
        return len(self.bins)


def pixel_rng(seed: int, pixel: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, shading point)."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(pixel)]))


def _probabilities(bounds: np.ndarray, gamma: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        scaled = np.where(np.isinf(bounds), 1.0, gamma * bounds)
    return np.minimum(scaled, 1.0)


def optimize_probabilities(bounds: Sequence[float], gamma: Optional[float] = None,
                           candidates: Optional[float] = None) -> TupleProbabilities:
    """P_T = min(gamma * E~, 1), with gamma given or calibrated to sum(P) = W."""
    bounds = np.asarray(bounds, dtype=float)
    if np.any(bounds < 0.0) or np.any(np.isnan(bounds)):
        raise ValueError("irradiance bounds must be non-negative")
    if (gamma is None) == (candidates is None):
        raise ValueError("give exactly one of gamma and candidates")
    if gamma is not None:
        if not gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        return TupleProbabilities(bounds, _probabilities(bounds, gamma), float(gamma))

    if not 0.0 < candidates <= len(bounds):
        raise ValueError(f"expected candidate count must lie in (0, {len(bounds)}], got {candidates}")
    infinite = np.isinf(bounds)
    finite = bounds[~infinite & (bounds > 0.0)]
    pinned = int(infinite.sum())
    if finite.size == 0:
        if pinned == 0:
            raise ValueError("all irradiance bounds are zero; nothing to sample")
        return TupleProbabilities(bounds, _probabilities(bounds, 1.0), math.inf)

    target = candidates - pinned
    if target <= 0.0:
        adjusted = min(pinned + 1.0, pinned + finite.size)
        logger.warning(
            "Requested %.3g candidates but %d tuples are always searched; using %.3g",
            candidates, pinned, adjusted,
        )
        target = adjusted - pinned
    ceiling = 1.0 / finite.min()
    if target >= finite.size:
        gamma = ceiling
    else:
        def excess(g):
            return float(np.minimum(g * finite, 1.0).sum()) - target

        gamma = bisect(excess, 0.0, ceiling, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        # g is piecewise linear, so solve exactly on the saturated set found.
        saturated = gamma * finite >= 1.0
        free = finite[~saturated].sum()
        if free > 0.0:
            exact = (target - saturated.sum()) / free
            if np.array_equal(exact * finite >= 1.0, saturated) or abs(excess(exact)) <= abs(excess(gamma)):
                gamma = exact
        if abs(excess(gamma)) > CALIBRATION_TOLERANCE * max(1.0, target):
            logger.warning("Probability calibration residual %.3e", excess(gamma))
    return TupleProbabilities(bounds, _probabilities(bounds, gamma), float(gamma))


def uniform_probabilities(bounds: Sequence[float], candidates: float) -> TupleProbabilities:
    """Baseline: every covering tuple gets P = W / |U|."""
    bounds = np.asarray(bounds, dtype=float)
    p = min(candidates / max(len(bounds), 1), 1.0)
    return TupleProbabilities(bounds, np.full(len(bounds), p), math.nan)


def _contributions(true_contribution, indices) -> np.ndarray:
    if callable(true_contribution):
        return np.array([true_contribution(int(i)) for i in indices], dtype=float)
    return np.asarray(true_contribution, dtype=float)[indices]


def sample_multi(probs: TupleProbabilities,
                 true_contribution: Union[Sequence[float], Callable[[int], float]],
                 rng: np.random.Generator):
    """Include each tuple independently with probability P_T; return (set, estimate)."""
    p = probs.probabilities
    draws = rng.random(len(p))
    indices = np.flatnonzero(draws < p)
    selected = SampleSet(indices, p[indices])
    estimate = float(np.sum(_contributions(true_contribution, indices) / p[indices])) if len(indices) else 0.0
    return selected, estimate


def pack_bins(probs: TupleProbabilities, order: Optional[Sequence[int]] = None) -> BinLayout:
    """First-fit packing into bins with probability sums at most one.

    Tuples are visited in descending bound order unless `order` is given.
    """
    p = probs.probabilities
    if order is None:
        order = np.argsort(-probs.bounds, kind="stable")
    members: List[List[int]] = []
    loads: List[float] = []
    for index in order:
        pi = float(p[index])
        if pi <= 0.0:
            continue
        for b, load in enumerate(loads):
            if load + pi <= 1.0 + BIN_SLACK:
                members[b].append(int(index))
                loads[b] = load + pi
                break
        else:
            members.append([int(index)])
            loads.append(pi)
    bins = [np.array(m, dtype=np.int64) for m in members]
    return BinLayout(bins, [np.cumsum(p[m]) for m in bins])


def sample_binned(layout: BinLayout, probs: TupleProbabilities, rng: np.random.Generator) -> SampleSet:
    """One uniform per bin; a tuple is chosen when the draw falls in its slot."""
    draws = rng.random(len(layout))
    chosen = []
    for members, cumulative, u in zip(layout.bins, layout.cumulative, draws):
        slot = int(np.searchsorted(cumulative, u, side="right"))
        if slot < len(members):
            chosen.append(members[slot])
    indices = np.array(sorted(chosen), dtype=np.int64)
    return SampleSet(indices, probs.probabilities[indices])


def estimate(sample: SampleSet, true_contribution) -> float:
    if not len(sample):
        return 0.0
    return float(np.sum(_contributions(true_contribution, sample.indices) / sample.probabilities))


def sample_one(bounds: Sequence[float], true_contribution, rng: np.random.Generator):
    """Baseline: pick a single tuple with probability proportional to its bound."""
    bounds = np.asarray(bounds, dtype=float)
    if not len(bounds):
        return SampleSet(np.zeros(0, dtype=np.int64), np.zeros(0)), 0.0
    weights = bounds.copy()
    infinite = np.isinf(weights)
    if infinite.any():
        finite_max = weights[~infinite].max() if (~infinite).any() else 1.0
        weights[infinite] = max(finite_max, 1.0)
    total = weights.sum()
    if total <= 0.0:
        return SampleSet(np.zeros(0, dtype=np.int64), np.zeros(0)), 0.0
    pmf = weights / total
    index = int(np.searchsorted(np.cumsum(pmf), rng.random(), side="right"))
    index = min(index, len(pmf) - 1)
    chosen = SampleSet(np.array([index]), pmf[[index]])
    return chosen, estimate(chosen, true_contribution)


def variance_upper_bound(probs: TupleProbabilities) -> float:
    """sum of E~^2 / P over tuples with 0 < P < 1 (P = 1 tuples add no variance)."""
    b, p = probs.bounds, probs.probabilities
    mask = (b > 0.0) & (p < 1.0)
    if np.any(p[mask] <= 0.0):
        return math.inf
    return float(np.sum(b[mask] ** 2 / p[mask]))
