import numpy as np
import pytest

from caustic_bounds.scene import Scene

RECEIVER_UV = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]


def flat_mirror_data():
    """Light 1 above a flat mirror, receiver plane 2 above it.

    The virtual source sits at (0, 0, -1), so the caustic irradiance at a
    receiver point (X, Y, 2) is 3 / r^3 with r^2 = X^2 + Y^2 + 9.
    """
    return {
        "vertices": [
            [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, 1.0, 0.0],
            [-4.0, -4.0, 2.0], [6.0, -4.0, 2.0], [-4.0, 6.0, 2.0],
        ],
        "triangles": [
            {"v": [0, 1, 2], "material": "mirror"},
            {"v": [3, 4, 5], "material": {"receiver": {"uv": RECEIVER_UV}}},
        ],
        "light": {"position": [0.0, 0.0, 1.0], "intensity": 1.0},
    }


def flat_mirror_irradiance(point):
    """Virtual-source irradiance at a point on a horizontal receiver at height z."""
    x, y, z = point
    r2 = x * x + y * y + (z + 1.0) ** 2
    return (z + 1.0) / r2**1.5


def two_receiver_data():
    """Flat mirror lighting two receiver objects, at z = 2 and at z = 5.

    The far receiver spans [-10, 15] in x and y on the identity chart.
    """
    data = flat_mirror_data()
    data["vertices"] += [[-10.0, -10.0, 5.0], [15.0, -10.0, 5.0], [-10.0, 15.0, 5.0]]
    data["triangles"].append({"v": [6, 7, 8], "material": {"receiver": {"uv": RECEIVER_UV}}})
    return data


def split_floor_data():
    """Flat mirror over a square floor of two triangles sharing the object "floor"."""
    data = flat_mirror_data()
    data["vertices"].append([6.0, 6.0, 2.0])
    data["triangles"] = [
        {"v": [0, 1, 2], "material": "mirror"},
        {"v": [3, 4, 5], "material": {"receiver": {"uv": RECEIVER_UV, "object": "floor"}}},
        {"v": [4, 6, 5], "material": {"receiver": {"uv": [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], "object": "floor"}}},
    ]
    return data


def curved_mirror_data():
    """Mirror whose interpolated normals lean toward its centroid (focusing)."""
    return {
        "vertices": [
            [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, 1.0, 0.0],
            [-10.0, -10.0, 3.0], [20.0, -10.0, 3.0], [-10.0, 20.0, 3.0],
        ],
        "normals": [[0.4, 0.4, 1.0], [-0.8, 0.4, 1.0], [0.4, -0.8, 1.0]],
        "triangles": [
            {"v": [0, 1, 2], "n": [0, 1, 2], "material": "mirror"},
            {"v": [3, 4, 5], "material": {"receiver": {"uv": RECEIVER_UV}}},
        ],
        "light": {"position": [0.0, 0.0, 1.0], "intensity": 1.0},
    }


def fold_mirror_data():
    """Far light over a mirror with normals (-x, 0, 1), receiver 0.25 above it.

    Landing x rises to about 0.168 at x = 0.468 and falls back to 0.131 at the
    mirror edge x = 0.6, so receiver points with x in (0.131, 0.168) have two
    roots.
    """
    return {
        "vertices": [
            [-0.6, -0.6, 0.0], [0.6, -0.6, 0.0], [-0.6, 0.6, 0.0],
            [-4.0, -4.0, 0.25], [6.0, -4.0, 0.25], [-4.0, 6.0, 0.25],
        ],
        "normals": [[0.6, 0.0, 1.0], [-0.6, 0.0, 1.0], [0.6, 0.0, 1.0]],
        "triangles": [
            {"v": [0, 1, 2], "n": [0, 1, 2], "material": "mirror"},
            {"v": [3, 4, 5], "material": {"receiver": {"uv": RECEIVER_UV}}},
        ],
        "light": {"position": [0.0, 0.0, 1000.0], "intensity": 1.0e6},
    }


def pool_data():
    """Water surface at z = 0 refracting onto a floor at z = -1."""
    return {
        "vertices": [
            [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, 1.0, 0.0],
            [-4.0, -4.0, -1.0], [6.0, -4.0, -1.0], [-4.0, 6.0, -1.0],
        ],
        "triangles": [
            {"v": [0, 1, 2], "material": {"dielectric": 1.33}},
            {"v": [3, 4, 5], "material": {"receiver": {"uv": RECEIVER_UV}}},
        ],
        "light": {"position": [0.0, 0.0, 1.0], "intensity": 1.0},
    }


def slab_data():
    """Glass slab: entry face at z = 0, exit face (outward normal -z) at z = -0.5."""
    return {
        "vertices": [
            [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, 1.0, 0.0],
            [-2.0, -2.0, -0.5], [-2.0, 3.0, -0.5], [3.0, -2.0, -0.5],
            [-6.0, -6.0, -1.5], [10.0, -6.0, -1.5], [-6.0, 10.0, -1.5],
        ],
        "triangles": [
            {"v": [0, 1, 2], "material": {"dielectric": 1.5}},
            {"v": [3, 4, 5], "material": {"dielectric": 1.5}},
            {"v": [6, 7, 8], "material": {"receiver": {"uv": RECEIVER_UV}}},
        ],
        "light": {"position": [0.0, 0.0, 1.0], "intensity": 1.0},
    }



def tiled_slab_data():
    """Glass slab whose faces are fans of four triangles: entry at z = 0, exit at z = -0.5."""
    entry = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
    exit_ = [[-2.0, -2.0], [2.0, -2.0], [2.0, 2.0], [-2.0, 2.0]]
    vertices = [[0.0, 0.0, 0.0]] + [[x, y, 0.0] for x, y in entry]
    vertices += [[0.0, 0.0, -0.5]] + [[x, y, -0.5] for x, y in exit_]
    vertices += [[-8.0, -8.0, -1.5], [14.0, -8.0, -1.5], [-8.0, 14.0, -1.5]]
    glass = {"dielectric": 1.5}
    triangles = [{"v": [0, 1 + k, 1 + (k + 1) % 4], "material": glass} for k in range(4)]
    # Reversed winding turns the exit normals to -z.
    triangles += [{"v": [5, 6 + (k + 1) % 4, 6 + k], "material": glass} for k in range(4)]
    triangles.append({"v": [10, 11, 12], "material": {"receiver": {"uv": RECEIVER_UV}}})
    return {
        "vertices": vertices,
        "triangles": triangles,
        "light": {"position": [0.0, 0.0, 1.0], "intensity": 1.0},
    }


def sphere_cap_data(refine=0):
    """Glass cap of a radius-2 sphere centred at (0, 0, -1.5) over a floor at z = -2.

    The cap is the part above z = 0, a fan of six triangles around the apex
    with the exact sphere normals at the vertices. Each refinement splits
    every triangle in four, pushing edge midpoints back onto the sphere.
    """
    center, radius = np.array([0.0, 0.0, -1.5]), 2.0
    rim = np.sqrt(radius**2 - 1.5**2)
    points = [np.array([0.0, 0.0, 0.5])] + [
        np.array([rim * np.cos(a), rim * np.sin(a), 0.0]) for a in np.arange(6) * np.pi / 3
    ]
    faces = [(0, 1 + k, 1 + (k + 1) % 6) for k in range(6)]
    for _ in range(refine):
        midpoints = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                m = 0.5 * (points[a] + points[b]) - center
                points.append(center + radius * m / np.linalg.norm(m))
                midpoints[key] = len(points) - 1
            return midpoints[key]

        split = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            split += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        faces = split

    floor = len(points)
    return {
        "vertices": [p.tolist() for p in points] + [
            [-12.0, -12.0, -2.0], [18.0, -12.0, -2.0], [-12.0, 18.0, -2.0],
        ],
        "normals": [((p - center) / radius).tolist() for p in points],
        "triangles": [
            {"v": list(f), "n": list(f), "material": {"dielectric": 1.5}} for f in faces
        ] + [
            {"v": [floor, floor + 1, floor + 2], "material": {"receiver": {"uv": RECEIVER_UV}}},
        ],
        "light": {"position": [0.0, 0.0, 3.0], "intensity": 1.0},
    }

@pytest.fixture
def flat_mirror():
    return Scene.from_dict(flat_mirror_data())


@pytest.fixture
def curved_mirror():
    return Scene.from_dict(curved_mirror_data())


@pytest.fixture
def pool():
    return Scene.from_dict(pool_data())


@pytest.fixture
def slab():
    return Scene.from_dict(slab_data())


@pytest.fixture
def scene_file(tmp_path):
    def write(data, name="scene.json"):
        path = tmp_path / name
        Scene.from_dict(data).save(path)
        return path
    return write


@pytest.fixture
def two_receivers():
    return Scene.from_dict(two_receiver_data())


@pytest.fixture
def split_floor():
    return Scene.from_dict(split_floor_data())


@pytest.fixture
def sphere_cap():
    return Scene.from_dict(sphere_cap_data())


@pytest.fixture
def tiled_slab():
    return Scene.from_dict(tiled_slab_data())


@pytest.fixture
def fold_mirror():
    return Scene.from_dict(fold_mirror_data())
