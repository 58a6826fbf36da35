import json
import math

import numpy as np
import pytest

from caustic_bounds.demo2d import (
    DEFAULT_CASES,
    Case2D,
    bound_area,
    bound_piece,
    demo2d,
    per_tuple_curves,
    reference_curve,
    subdivide,
    uniform_pieces,
)


def _case(name):
    raw = next(c for c in DEFAULT_CASES if c["name"] == name)
    return Case2D.from_dict(raw, [0.0, 1.0], 1.0)


@pytest.mark.parametrize("name", [c["name"] for c in DEFAULT_CASES])
def test_pieces_contain_reference(name):
    case = _case(name)
    pieces = [p for p in subdivide(case, alpha=2.0, max_depth=8, sigma=1e-4) if not p.empty]
    lo = np.array([p.u.lo for p in pieces])
    hi = np.array([p.u.hi for p in pieces])
    curve = reference_curve(case, 10_001)

    for u, t, energy, valid in zip(curve.u, curve.t, curve.irradiance, curve.valid):
        if not valid:
            continue
        owners = np.flatnonzero((lo <= u) & (u <= hi))
        assert owners.size, f"u = {u} not covered"
        assert any(
            pieces[i].t.lo - 1e-9 <= t <= pieces[i].t.hi + 1e-9
            and energy <= pieces[i].irradiance.hi * (1 + 1e-9)
            for i in owners
        )


def test_straight_mirror_images_through_virtual_source():
    curve = reference_curve(_case("straight"), 5)

    # Receiver x = 3 * mirror x, so t = (3 (2u - 1) + 3) / 6 = u.
    assert curve.t == pytest.approx(curve.u)
    assert curve.valid.all()


def test_fold_has_unbounded_pieces():
    case = _case("fold")
    pieces = subdivide(case, alpha=2.0, max_depth=6, sigma=1e-4)

    assert any(math.isinf(p.irradiance.hi) for p in pieces)
    assert all(p.irradiance.lo >= 0.0 for p in pieces)


def test_bound_area_shrinks_with_refinement():
    case = _case("straight")
    areas = [bound_area(uniform_pieces(case, n)) for n in (4, 8, 16)]

    assert areas[0] > areas[1] > areas[2]


def test_piece_behind_receiver_is_empty():
    case = Case2D.from_dict(
        {"name": "away", "mirror": {"p": [[-1.0, 0.0], [1.0, 0.0]], "n": [[0.0, 1.0], [0.0, 1.0]]},
         "receiver": [[-3.0, -2.0], [3.0, -2.0]]},
        [0.0, 1.0], 1.0,
    )

    assert bound_piece(case, 0.0, 1.0).empty


def test_per_tuple_sum_stays_below_bound():
    case = _case("straight")
    pieces = subdivide(case, alpha=2.0, max_depth=8, sigma=1e-4)
    curves = per_tuple_curves(case, pieces, reference_curve(case, 2001), samples=51)

    for total, bound in zip(curves["sum"], curves["bound_m1"]):
        assert total <= bound * 1.01 + 1e-9
    assert curves["bound_m2"] == pytest.approx([2.0 * b for b in curves["bound_m1"]])


def test_demo2d_writes_one_file_per_case(tmp_path):
    results = demo2d({"samples": 101, "receiver_samples": 11, "max_depth": 4}, tmp_path)

    assert set(results) == {"straight", "fold"}
    data = json.loads((tmp_path / "fold.json").read_text())
    assert data["name"] == "fold"
    assert len(data["reference"]["u"]) == 101
    assert len(data["per_tuple"]["t"]) == 11
    assert np.all(np.array([p["depth"] for p in data["pieces"]]) <= 4)
