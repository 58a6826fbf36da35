"""
Candidate triangle tuples.

Tuples are grown one specular vertex at a time. A candidate triangle for the
next vertex survives when, over some part of the prefix's u1 domain, every
component of (x_next - x_i) x d_i can vanish, x_next ranging over the
candidate's bounding box. Each surviving prefix is then paired with every
receiver triangle whose initialized domain is non-empty.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .bernstein import Box, Interval
from .bounds import init_domain
from .conf import app_settings
from .geometry import (
    ChainExpressions,
    ChainSpec,
    PieceDropped,
    TriangleData,
    TupleGeometry,
    UnboundedPiece,
    ratio_range,
    value_range,
)
from .scene import Scene

logger = logging.getLogger(__name__)

# Sub-boxes per axis used to bound a prefix's last vertex and direction.
PREFIX_GRID = 4


@dataclass(frozen=True, order=True)
class TupleId:
    specular: Tuple[int, ...]
    receiver: int

    def __str__(self):
        return f"{','.join(str(i) for i in self.specular)}->{self.receiver}"


@dataclass
class BvhNode:
    lo: np.ndarray
    hi: np.ndarray
    triangles: List[int] = field(default_factory=list)
    left: Optional["BvhNode"] = None
    right: Optional["BvhNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


class Bvh:
    """Median-split bounding volume hierarchy over triangle centroids."""

    def __init__(self, triangles: Sequence[TriangleData], leaf_size: int = 2):
        self.triangles = {t.index: t for t in triangles}
        self.leaf_size = leaf_size
        self.root = self._build(list(self.triangles)) if self.triangles else None

    def __len__(self):
        return len(self.triangles)

    def _build(self, indices: List[int]) -> BvhNode:
        boxes = [self.triangles[i].aabb for i in indices]
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        node = BvhNode(lo, hi)
        if len(indices) <= self.leaf_size:
            node.triangles = sorted(indices)
            return node
        centroids = np.array([self.triangles[i].centroid for i in indices])
        axis = int(np.argmax(centroids.max(axis=0) - centroids.min(axis=0)))
        order = np.argsort(centroids[:, axis], kind="stable")
        half = len(indices) // 2
        node.left = self._build([indices[k] for k in order[:half]])
        node.right = self._build([indices[k] for k in order[half:]])
        return node

    def traverse(self, accept: Callable[[np.ndarray, np.ndarray], bool]) -> List[int]:
        """Indices of triangles whose boxes (and all ancestors') pass `accept`."""
        found: List[int] = []
        stack = [self.root] if self.root is not None else []
        while stack:
            node = stack.pop()
            if not accept(node.lo, node.hi):
                continue
            if node.is_leaf:
                found.extend(i for i in node.triangles if accept(*self.triangles[i].aabb))
            else:
                stack.extend((node.right, node.left))
        return sorted(found)


@dataclass(frozen=True)
class _PrefixBound:
    position: Tuple[Interval, Interval, Interval]
    direction: Tuple[Interval, Interval, Interval]


def _prefix_bounds(exprs: ChainExpressions) -> Optional[_PrefixBound]:
    vertex = exprs.vertices[-1]
    position = tuple(ratio_range(c, vertex.denominator).hull() for c in vertex.position)
    if any(not np.isfinite([p.lo, p.hi]).all() for p in position):
        return None
    direction = tuple(value_range(c) for c in vertex.outgoing)
    return _PrefixBound(position, direction)


def _may_hit(bound: _PrefixBound, lo: np.ndarray, hi: np.ndarray, slack: float) -> bool:
    a = [Interval(lo[c] - bound.position[c].hi, hi[c] - bound.position[c].lo) for c in range(3)]
    b = bound.direction
    forward = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    if forward.widened(slack).hi <= 0.0:
        return False
    cross = (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )
    return all(c.widened(slack).contains(0.0) for c in cross)


def prefix_expressions(geometry: TupleGeometry, grid: int = PREFIX_GRID) -> Optional[List[ChainExpressions]]:
    """Value-only expressions of a prefix over a grid of sub-boxes.

    None means some sub-box could not be bounded, so nothing may be pruned.
    """
    step = 1.0 / grid
    out = []
    for j in range(grid):
        for i in range(grid):
            box = Box((i * step, j * step), ((i + 1) * step, (j + 1) * step))
            if box.lo[0] + box.lo[1] > 1.0:
                continue
            try:
                out.append(geometry.expressions(box, derivatives=False))
            except PieceDropped:
                continue
            except UnboundedPiece:
                return None
    return out


def extend_tuple(prefix: Sequence[int], exprs: Optional[Sequence[ChainExpressions]], bvh: Bvh,
                 fp_slack: Optional[float] = None) -> List[int]:
    """Triangles that a ray leaving the prefix's last vertex may reach."""
    slack = app_settings.FP_SLACK if fp_slack is None else fp_slack
    last = prefix[-1] if prefix else None
    if exprs is None:
        return sorted(i for i in bvh.triangles if i != last)
    bounds = []
    for e in exprs:
        bound = _prefix_bounds(e)
        if bound is None:
            return sorted(i for i in bvh.triangles if i != last)
        bounds.append(bound)

    def accept(lo, hi):
        return any(_may_hit(b, lo, hi, slack) for b in bounds)

    return [i for i in bvh.traverse(accept) if i != last]


def enumerate_tuples(scene: Scene, chain: ChainSpec) -> List[TupleId]:
    """All (specular tuple, receiver) combinations that survive pruning, sorted."""
    scene.check_chain(chain)
    specular = scene.specular
    prefixes = [
        (t.index,) for t in specular if t.material.supports(chain.scattering[0])
    ]
    for level in range(1, len(chain)):
        scattering = chain.scattering[level]
        bvh = Bvh([t for t in specular if t.material.supports(scattering)])
        prefix_chain = ChainSpec(chain.scattering[:level])
        extended = []
        for prefix in prefixes:
            geometry = TupleGeometry(
                tuple(scene.triangle(i) for i in prefix), None, prefix_chain, scene.light
            )
            candidates = extend_tuple(prefix, prefix_expressions(geometry), bvh)
            extended.extend(prefix + (i,) for i in candidates)
        logger.debug("Level %d: %d prefixes -> %d", level + 1, len(prefixes), len(extended))
        prefixes = extended

    found = []
    for prefix in prefixes:
        for receiver in scene.receivers:
            geometry = scene.geometry(prefix, receiver.index, chain)
            if init_domain(geometry):
                found.append(TupleId(prefix, receiver.index))
    found.sort()
    logger.info("Enumerated %d tuples for chain %s", len(found), chain)
    return found
