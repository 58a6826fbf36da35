"""
Portable float map images.

Row 0 of an image array is the bottom scanline (v = 0), which is also the
first row PFM stores, so arrays are written in order without flipping.
"""

import re
from pathlib import Path
from typing import Union

import numpy as np

HEADER = re.compile(rb"^(PF|Pf)\n(\d+) (\d+)\n(-?[0-9.eE+-]+)\n")


class PfmError(ValueError):
    pass


def encode_pfm(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PfmError(f"expected an (H, W) or (H, W, 3) array, got shape {image.shape}")
    height, width = image.shape[:2]
    header = f"PF\n{width} {height}\n-1.0\n".encode("ascii")
    return header + image.astype("<f4").tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    match = HEADER.match(data)
    if match is None:
        raise PfmError("not a PFM image")
    channels = 3 if match.group(1) == b"PF" else 1
    width, height = int(match.group(2)), int(match.group(3))
    scale = float(match.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    body = data[match.end():]
    expected = width * height * channels * 4
    if len(body) != expected:
        raise PfmError(f"PFM body holds {len(body)} bytes, expected {expected}")
    image = np.frombuffer(body, dtype=dtype).astype(np.float32)
    if channels == 3:
        return image.reshape(height, width, 3)
    return image.reshape(height, width)


def write_pfm(path: Union[str, Path], image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pfm(image))


def read_pfm(path: Union[str, Path]) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())
