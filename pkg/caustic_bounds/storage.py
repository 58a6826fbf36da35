"""
Bound cache: per-tuple irradiance bounds splatted into one UV grid per
receiver object.

File layout (little-endian):

    magic "BBCC" | version u32 | scene fingerprint (32 bytes) | W u32 | H u32
    chain: u32 length + UTF-8
    tuple table: u32 count, then per tuple u32 n, n x u32 specular, u32 receiver
    params: u32 length + UTF-8 JSON
    grids: u32 count, then per receiver object
        name: u32 length + UTF-8
        cells (row-major, v rows then u columns): u32 count,
            then count x (u64 tuple index, f64 bound)

The tuple table, the params blob and the named grids extend the bare
header + cells layout. Cell entries store an index into the tuple table
rather than the tuple itself. +inf is stored as the bit pattern
0x7FF0000000000000.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .bernstein import Box
from .bounds import TuplePiece
from .conf import app_settings
from .geometry import TriangleData
from .tuples import TupleId

logger = logging.getLogger(__name__)

MAGIC = b"BBCC"
VERSION = 2
INF_SENTINEL = 0x7FF0000000000000

ENTRY = np.dtype([("tuple", "<u8"), ("bound", "<u8")])

Grid = List[Dict[int, float]]


class CacheFormatError(ValueError):
    pass


class FingerprintMismatch(ValueError):
    pass


@dataclass
class BoundCache:
    width: int
    height: int
    chain: str
    fingerprint: bytes
    tuples: List[TupleId]
    params: Dict = field(default_factory=dict)
    # grids[object][iy * width + ix] maps tuple index -> bound
    grids: Dict[str, Grid] = field(default_factory=dict)

    def __post_init__(self):
        for name, cells in self.grids.items():
            if len(cells) != self.width * self.height:
                raise CacheFormatError(f"grid {name!r}: cell count does not match the grid resolution")
        if len(self.fingerprint) != 32:
            raise CacheFormatError("fingerprint must be 32 bytes")

    @property
    def receivers(self) -> List[str]:
        return sorted(self.grids)

    def add_grid(self, name: str) -> Grid:
        if name not in self.grids:
            self.grids[name] = [dict() for _ in range(self.width * self.height)]
        return self.grids[name]

    def receiver_name(self, receiver: Optional[str] = None) -> str:
        """Resolve a receiver object name; None picks the only grid."""
        if receiver is None:
            if len(self.grids) != 1:
                raise ValueError(
                    f"cache holds {len(self.grids)} receiver grids ({', '.join(self.receivers)}); name one"
                )
            (receiver,) = self.grids
        elif receiver not in self.grids:
            raise ValueError(f"no receiver grid named {receiver!r} (have {', '.join(self.receivers)})")
        return receiver

    def grid(self, receiver: Optional[str] = None) -> Grid:
        return self.grids[self.receiver_name(receiver)]

    def cell_index(self, uv: Sequence[float]) -> Optional[int]:
        u, v = float(uv[0]), float(uv[1])
        if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
            return None
        ix = min(int(u * self.width), self.width - 1)
        iy = min(int(v * self.height), self.height - 1)
        return iy * self.width + ix

    def check(self, fingerprint: bytes) -> None:
        if fingerprint != self.fingerprint:
            raise FingerprintMismatch("bound cache was computed for a different scene")

    @property
    def entry_count(self) -> int:
        return sum(len(c) for cells in self.grids.values() for c in cells)


def _cell_range(lo: float, hi: float, size: int) -> range:
    first = min(max(int(math.floor(lo * size)), 0), size - 1)
    last = min(max(int(math.floor(hi * size)), 0), size - 1)
    return range(first, last + 1)


def uv_box(position: Box, receiver: TriangleData) -> Box:
    """Hull of a receiver-barycentric box mapped through the UV chart."""
    corners = np.array([
        receiver.uv_at(u, v)
        for u in (position.lo[0], position.hi[0])
        for v in (position.lo[1], position.hi[1])
    ])
    return Box(tuple(corners.min(axis=0)), tuple(corners.max(axis=0)))


def rasterize(
    tuple_pieces: Sequence[Tuple[TupleId, Sequence[TuplePiece]]],
    receivers: Mapping[int, TriangleData],
    resolution: Optional[int] = None,
    *,
    chain: str = "",
    fingerprint: bytes = b"\0" * 32,
    params: Optional[Dict] = None,
    multiplicity: Optional[int] = None,
) -> BoundCache:
    """Splat every non-empty piece's bound into the cells of its receiver's grid.

    Every receiver object in ``receivers`` gets a grid, lit or not.
    """
    resolution = app_settings.GRID_RESOLUTION if resolution is None else resolution
    m = app_settings.MULTIPLICITY if multiplicity is None else multiplicity
    cache = BoundCache(
        width=resolution, height=resolution, chain=chain, fingerprint=fingerprint,
        tuples=[tid for tid, _ in tuple_pieces], params=dict(params or {}),
    )
    for name in sorted({r.receiver_object for r in receivers.values()}):
        cache.add_grid(name)
    for index, (tid, pieces) in enumerate(tuple_pieces):
        receiver = receivers[tid.receiver]
        cells = cache.grids[receiver.receiver_object]
        for piece in pieces:
            if piece.empty:
                continue
            box = uv_box(piece.position, receiver)
            if box.hi[0] < 0.0 or box.lo[0] > 1.0 or box.hi[1] < 0.0 or box.lo[1] > 1.0:
                continue
            bound = m * piece.irradiance.hi
            for iy in _cell_range(box.lo[1], box.hi[1], cache.height):
                row = iy * cache.width
                for ix in _cell_range(box.lo[0], box.hi[0], cache.width):
                    cell = cells[row + ix]
                    if bound > cell.get(index, -1.0):
                        cell[index] = bound
    logger.info(
        "Rasterized %d tuples into %d %dx%d grids (%d entries)",
        len(tuple_pieces), len(cache.grids), resolution, resolution, cache.entry_count,
    )
    return cache


def query(cache: BoundCache, uv: Sequence[float], receiver: Optional[str] = None) -> List[Tuple[TupleId, float]]:
    """(tuple, bound) pairs stored in the receiver's cell containing uv, in tuple order."""
    return [(cache.tuples[k], bound) for k, bound in query_indices(cache, uv, receiver)]


def query_indices(cache: BoundCache, uv: Sequence[float], receiver: Optional[str] = None) -> List[Tuple[int, float]]:
    cells = cache.grid(receiver)
    index = cache.cell_index(uv)
    if index is None:
        return []
    return sorted(cells[index].items())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _encode_bound(value: float) -> int:
    if math.isinf(value) and value > 0:
        return INF_SENTINEL
    return struct.unpack("<Q", struct.pack("<d", value))[0]


def _decode_bound(bits: int) -> float:
    if bits == INF_SENTINEL:
        return math.inf
    return struct.unpack("<d", struct.pack("<Q", bits))[0]


def _text(value: str) -> bytes:
    data = value.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def dumps(cache: BoundCache) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        cache.fingerprint,
        struct.pack("<II", cache.width, cache.height),
        _text(cache.chain),
        struct.pack("<I", len(cache.tuples)),
    ]
    for tid in cache.tuples:
        parts.append(struct.pack(f"<I{len(tid.specular)}II", len(tid.specular), *tid.specular, tid.receiver))
    parts.append(_text(json.dumps(cache.params, sort_keys=True)))
    parts.append(struct.pack("<I", len(cache.grids)))
    for name in cache.receivers:
        parts.append(_text(name))
        for cell in cache.grids[name]:
            parts.append(struct.pack("<I", len(cell)))
            if cell:
                entries = np.array(
                    [(k, _encode_bound(v)) for k, v in sorted(cell.items())], dtype=ENTRY
                )
                parts.append(entries.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CacheFormatError("truncated bound cache")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def loads(data: bytes) -> BoundCache:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CacheFormatError("not a bound cache (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise CacheFormatError(f"unsupported bound cache version {version}")
    fingerprint = reader.take(32)
    width, height = reader.u32(), reader.u32()
    chain = reader.text()
    tuples = []
    for _ in range(reader.u32()):
        n = reader.u32()
        specular = tuple(struct.unpack(f"<{n}I", reader.take(4 * n)))
        tuples.append(TupleId(specular, reader.u32()))
    params = json.loads(reader.text())
    grids = {}
    for _ in range(reader.u32()):
        name = reader.text()
        cells = []
        for _ in range(width * height):
            count = reader.u32()
            entries = np.frombuffer(reader.take(ENTRY.itemsize * count), dtype=ENTRY)
            if np.any(entries["tuple"] >= len(tuples)):
                raise CacheFormatError(f"grid {name!r} refers to a tuple outside the table")
            cells.append({int(k): _decode_bound(int(b)) for k, b in entries})
        grids[name] = cells
    if reader.offset != len(data):
        raise CacheFormatError("trailing bytes after bound cache")
    return BoundCache(width, height, chain, fingerprint, tuples, params, grids)


def save(cache: BoundCache, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps(cache))
    logger.info("Wrote bound cache %s (%d tuples)", path, len(cache.tuples))


def load(path: Union[str, Path], fingerprint: Optional[bytes] = None) -> BoundCache:
    cache = loads(Path(path).read_bytes())
    if fingerprint is not None:
        cache.check(fingerprint)
    return cache
