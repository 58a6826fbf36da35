import math

import numpy as np
import pytest

from caustic_bounds import storage
from caustic_bounds.bernstein import Box, Interval
from caustic_bounds.bounds import SubdivisionParams, TuplePiece
from caustic_bounds.geometry import ChainSpec
from caustic_bounds.pipeline import (
    ESTIMATORS,
    PrecomputeResult,
    RenderStats,
    display_image,
    pixel_uv,
    precompute,
    reference_enumerate,
    relmse,
    render_receiver,
    study_estimators,
    validate_bounds,
)
from caustic_bounds.storage import FingerprintMismatch
from caustic_bounds.tuples import TupleId

from .conftest import flat_mirror_irradiance

FAST = SubdivisionParams(sigma=1e-3, alpha=4.0, max_depth=4)
RES = 8


@pytest.fixture
def flat_result(flat_mirror):
    return precompute(flat_mirror, ChainSpec.parse("R"), FAST, resolution=RES)


def _receiver_xy(ix, iy):
    # RECEIVER_UV is the identity chart and the receiver spans [-4, 6] in x and y.
    u, v = pixel_uv(ix, iy, RES)
    return -4.0 + 10.0 * u, -4.0 + 10.0 * v


def test_precompute_is_deterministic(flat_mirror, flat_result):
    again = precompute(flat_mirror, ChainSpec.parse("R"), FAST, resolution=RES)

    assert storage.dumps(again.cache) == storage.dumps(flat_result.cache)
    assert flat_result.cache.chain == "R"
    assert flat_result.cache.params["alpha"] == 4.0
    assert flat_result.piece_count == len(flat_result.pieces[flat_result.cache.tuples[0]])


def test_timing_breakdown_sums_to_hundred(flat_result):
    shares = flat_result.timing_breakdown()

    assert set(shares) == {"position", "irradiance", "recording"}
    assert sum(shares.values()) == pytest.approx(100.0)


def test_empty_timings_give_zero_shares(flat_result):
    empty = PrecomputeResult(flat_result.cache, {}, {})

    assert empty.timing_breakdown() == {"position": 0.0, "irradiance": 0.0, "recording": 0.0}


def test_reference_matches_analytic_caustic(flat_mirror, flat_result):
    image = reference_enumerate(flat_mirror, cache=flat_result.cache, grid=2)

    for iy in range(RES):
        for ix in range(RES):
            x, y = _receiver_xy(ix, iy)
            if x >= -2.8 and y >= -2.8 and x + y <= -0.2:
                assert image[iy, ix] == pytest.approx(flat_mirror_irradiance((x, y, 2.0)), rel=1e-6)
            elif x < -3.2 or y < -3.2 or x + y > 0.2:
                assert image[iy, ix] == 0.0


def test_each_receiver_object_gets_its_own_caustic(two_receivers):
    result = precompute(two_receivers, ChainSpec.parse("R"), FAST, resolution=RES)
    near = reference_enumerate(two_receivers, cache=result.cache, grid=2, receiver="receiver1")
    far = reference_enumerate(two_receivers, cache=result.cache, grid=2, receiver="receiver2")

    assert result.cache.receivers == ["receiver1", "receiver2"]
    lit = 0
    for iy in range(RES):
        for ix in range(RES):
            x, y = _receiver_xy(ix, iy)
            if x >= -2.8 and y >= -2.8 and x + y <= -0.2:
                assert near[iy, ix] == pytest.approx(flat_mirror_irradiance((x, y, 2.0)), rel=1e-6)
            u, v = pixel_uv(ix, iy, RES)
            fx, fy = -10.0 + 25.0 * u, -10.0 + 25.0 * v
            if fx >= -5.6 and fy >= -5.6 and fx + fy <= -0.4:
                assert far[iy, ix] == pytest.approx(flat_mirror_irradiance((fx, fy, 5.0)), rel=1e-6)
                lit += 1
            elif fx < -6.4 or fy < -6.4 or fx + fy > 0.4:
                assert far[iy, ix] == 0.0
    assert lit > 0


def test_multi_receiver_cache_needs_a_receiver_name(two_receivers):
    cache = precompute(two_receivers, ChainSpec.parse("R"), FAST, resolution=4).cache

    with pytest.raises(ValueError, match="name one"):
        render_receiver(two_receivers, cache, gamma=1.0)
    with pytest.raises(ValueError, match="no receiver grid"):
        reference_enumerate(two_receivers, cache=cache, receiver="ceiling")


def test_shared_grid_counts_each_tuple_only_inside_its_uv_triangle(split_floor):
    # Both tuples are splatted over the whole chart, so only the UV
    # containment test keeps the two halves from double counting.
    everywhere = TuplePiece(Box.unit(), Box.unit(), Interval(0.0, 10.0), 0)
    receivers = {t.index: t for t in split_floor.receivers}
    cache = storage.rasterize(
        [(TupleId((0,), 1), [everywhere]), (TupleId((0,), 2), [everywhere])], receivers, RES,
        chain="R", fingerprint=split_floor.fingerprint(),
    )
    image = reference_enumerate(split_floor, cache=cache, grid=2)

    assert cache.receivers == ["floor"]
    for iy in range(RES):
        for ix in range(RES):
            x, y = _receiver_xy(ix, iy)
            if x >= -2.8 and y >= -2.8 and x + y <= -0.2:
                assert image[iy, ix] == pytest.approx(flat_mirror_irradiance((x, y, 2.0)), rel=1e-6)


def test_saturated_render_equals_reference(flat_mirror, flat_result):
    reference = reference_enumerate(flat_mirror, cache=flat_result.cache, grid=2)
    image, stats = render_receiver(
        flat_mirror, flat_result.cache, gamma=1e12, spp=2, det_grid=2, reference=reference,
    )

    assert np.allclose(image, reference, rtol=1e-9, atol=0.0)
    assert stats.relmse == pytest.approx(0.0, abs=1e-18)
    assert stats.gamma == 1e12 and stats.spp == 2


def test_single_candidate_render_is_exact_for_one_tuple(flat_mirror, flat_result):
    reference = reference_enumerate(flat_mirror, cache=flat_result.cache, grid=2)
    image, stats = render_receiver(flat_mirror, flat_result.cache, candidates=1.0, det_grid=2)

    assert np.allclose(image, reference, rtol=1e-9, atol=0.0)
    assert stats.mean_selected <= stats.mean_covering
    assert stats.gamma > 0.0


def test_stochastic_root_finder_render(flat_mirror, flat_result):
    reference = reference_enumerate(flat_mirror, cache=flat_result.cache, grid=2)
    image, _ = render_receiver(flat_mirror, flat_result.cache, candidates=1.0, root_finder="stoc", seed=3)

    assert np.allclose(image, reference, rtol=1e-6, atol=0.0)


def test_parallel_rows_match_serial(flat_mirror, flat_result):
    serial, _ = render_receiver(flat_mirror, flat_result.cache, candidates=1.0, det_grid=2, workers=1)
    parallel, _ = render_receiver(flat_mirror, flat_result.cache, candidates=1.0, det_grid=2, workers=2)

    assert np.array_equal(serial, parallel)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"gamma": 1.0, "candidates": 1.0},
        {},
        {"gamma": 1.0, "spp": 0},
        {"gamma": 1.0, "root_finder": "grid"},
    ],
)
def test_render_rejects_bad_arguments(flat_mirror, flat_result, kwargs):
    with pytest.raises(ValueError):
        render_receiver(flat_mirror, flat_result.cache, **kwargs)


def test_render_rejects_foreign_cache(pool, flat_result):
    with pytest.raises(FingerprintMismatch):
        render_receiver(pool, flat_result.cache, gamma=1.0)


def test_reference_rejects_mismatched_chain(flat_mirror, flat_result):
    with pytest.raises(ValueError, match="chain"):
        reference_enumerate(flat_mirror, ChainSpec.parse("RR"), cache=flat_result.cache)
    with pytest.raises(ValueError):
        reference_enumerate(flat_mirror)


def test_validate_finds_no_violations(flat_mirror, flat_result):
    report = validate_bounds(flat_mirror, flat_result.cache, n_samples=200, seed=1, root_checks=10)

    assert report["samples"] > 0
    assert report["violations"] == 0
    assert report["min_ratio"] >= 1.0
    assert report["root_counts"] == {"1": 10}
    assert report["fraction_at_most_one_root"] == 1.0
    assert sum(report["log10_ratio_histogram"]["counts"]) <= report["samples"]


def test_validate_refracting_slab(slab):
    result = precompute(slab, ChainSpec.parse("TT"), SubdivisionParams(sigma=1e-3, alpha=10.0, max_depth=3),
                        resolution=RES)
    report = validate_bounds(slab, result.cache, n_samples=100, seed=2, root_checks=5)

    assert report["samples"] > 0
    assert report["violations"] == 0


def test_study_estimators_reports_every_estimator(flat_mirror, flat_result):
    results = study_estimators(flat_mirror, flat_result.cache, candidates=1.0, spp=2, resolution=4)

    assert set(results) == {"reference", *ESTIMATORS}
    for name in ESTIMATORS:
        assert results[name]["image"].shape == (4, 4)
        # One tuple per pixel makes every estimator exact.
        assert results[name]["relmse"] == pytest.approx(0.0, abs=1e-12)


def test_study_estimators_rejects_unknown_name(flat_mirror, flat_result):
    with pytest.raises(ValueError):
        study_estimators(flat_mirror, flat_result.cache, resolution=2, estimators=["russian_roulette"])


def test_relmse():
    assert relmse(np.array([1.0, 0.1]), np.array([1.0, 0.0])) == pytest.approx(0.5)
    assert math.isnan(relmse(np.array([np.inf]), np.array([1.0])))


def test_display_image_clamps_fireflies():
    image = np.array([[1.0, 2.0], [np.inf, 100.0]])

    assert display_image(image, factor=10.0).tolist() == [[1.0, 2.0], [20.0, 20.0]]


def test_render_stats_serialize_non_finite_as_null():
    stats = RenderStats(spp=1, gamma=math.inf, relmse=math.nan)

    assert stats.to_dict()["gamma"] is None
    assert stats.to_dict()["relmse"] is None
    assert stats.to_dict()["spp"] == 1
