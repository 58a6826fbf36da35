"""
Scene files.

A scene is JSON of the form::

    {
      "vertices": [[x, y, z], ...],
      "normals": [[x, y, z], ...],
      "triangles": [
        {"v": [i, j, k], "n": [i, j, k], "material": "mirror"},
        {"v": [...], "material": {"dielectric": 1.5}},
        {"v": [...], "material": {"receiver": {"uv": [[u, v], [u, v], [u, v]], "object": "floor"}}}
      ],
      "light": {"position": [x, y, z], "intensity": 1.0}
    }

Triangles without "n" use their face normal at all three corners. Receiver
triangles sharing an "object" name share one UV chart and one bound grid; a
receiver without a name is an object of its own.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .geometry import (
    ChainSpec,
    Material,
    MaterialKind,
    PointLight,
    TriangleData,
    TupleGeometry,
)

logger = logging.getLogger(__name__)


class SceneError(ValueError):
    pass


def _parse_material(raw) -> Material:
    if raw == "mirror":
        return Material(MaterialKind.MIRROR)
    if isinstance(raw, dict) and len(raw) == 1:
        (kind, value), = raw.items()
        if kind == "dielectric":
            return Material(MaterialKind.DIELECTRIC, float(value))
        if kind == "receiver":
            return Material(MaterialKind.RECEIVER)
    raise SceneError(f"unknown material {raw!r}")


def _material_to_dict(tri: TriangleData):
    kind = tri.material.kind
    if kind == MaterialKind.MIRROR:
        return "mirror"
    if kind == MaterialKind.DIELECTRIC:
        return {"dielectric": tri.material.ior}
    receiver = {"uv": tri.uvs.tolist()}
    if tri.object_name:
        receiver["object"] = tri.object_name
    return {"receiver": receiver}


@dataclass(frozen=True, eq=False)
class Scene:
    triangles: Tuple[TriangleData, ...]
    light: PointLight

    def __post_init__(self):
        if not self.receivers:
            raise SceneError("scene has no receiver triangle")

    @property
    def specular(self) -> List[TriangleData]:
        return [t for t in self.triangles if t.material.is_specular]

    @property
    def receivers(self) -> List[TriangleData]:
        return [t for t in self.triangles if t.material.kind == MaterialKind.RECEIVER]

    @property
    def receiver_objects(self) -> List[str]:
        return sorted({t.receiver_object for t in self.receivers})

    def triangle(self, index: int) -> TriangleData:
        return self.triangles[index]

    def geometry(self, specular: Sequence[int], receiver: int, chain: ChainSpec) -> TupleGeometry:
        return TupleGeometry(
            tuple(self.triangles[i] for i in specular),
            self.triangles[receiver],
            chain,
            self.light,
        )

    def check_chain(self, chain: ChainSpec) -> None:
        """Refuse chains the scene cannot host at all."""
        if not self.specular:
            raise SceneError("scene has no specular triangles")
        for position, scattering in enumerate(chain.scattering):
            if not any(t.material.supports(scattering) for t in self.specular):
                raise SceneError(
                    f"chain {chain} needs a {scattering.value} vertex at position {position + 1}, "
                    "but no triangle supports it"
                )

    # Serialization ----------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Dict) -> "Scene":
        try:
            vertices = np.asarray(data["vertices"], dtype=float)
            normals = np.asarray(data.get("normals", []), dtype=float)
            light_data = data["light"]
            light = PointLight(tuple(light_data["position"]), float(light_data.get("intensity", 1.0)))
            triangles = []
            for index, raw in enumerate(data["triangles"]):
                positions = vertices[list(raw["v"])]
                if "n" in raw:
                    tri_normals = normals[list(raw["n"])]
                else:
                    face = np.cross(positions[1] - positions[0], positions[2] - positions[0])
                    tri_normals = np.tile(face, (3, 1))
                material = _parse_material(raw["material"])
                uvs = name = None
                if material.kind == MaterialKind.RECEIVER:
                    uvs = raw["material"]["receiver"]["uv"]
                    name = raw["material"]["receiver"].get("object")
                    if name is not None and not isinstance(name, str):
                        raise SceneError(f"triangle {index}: receiver object name must be a string")
                triangles.append(TriangleData(positions, tri_normals, material, uvs, index, name))
        except (KeyError, IndexError, TypeError) as exc:
            raise SceneError(f"malformed scene: {exc}") from exc
        return cls(tuple(triangles), light)

    def to_dict(self) -> Dict:
        vertices, normals, triangles = [], [], []
        for tri in self.triangles:
            base = len(vertices)
            vertices.extend(tri.positions.tolist())
            normals.extend(tri.normals.tolist())
            indices = [base, base + 1, base + 2]
            triangles.append({"v": indices, "n": indices, "material": _material_to_dict(tri)})
        return {
            "vertices": vertices,
            "normals": normals,
            "triangles": triangles,
            "light": {"position": list(self.light.position), "intensity": self.light.intensity},
        }

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scene":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SceneError(f"{path}: {exc}") from exc
        scene = cls.from_dict(data)
        logger.info(
            "Loaded scene %s: %d specular, %d receiver triangles",
            path, len(scene.specular), len(scene.receivers),
        )
        return scene

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def fingerprint(self) -> bytes:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).digest()
