import numpy as np
import pytest

from caustic_bounds.geometry import ChainSpec, TupleGeometry, trace_chain
from caustic_bounds.scene import Scene, SceneError
from caustic_bounds.tuples import Bvh, TupleId, enumerate_tuples, extend_tuple, prefix_expressions

from .conftest import sphere_cap_data

TT = ChainSpec.parse("TT")


def test_flat_mirror_has_one_tuple(flat_mirror):
    assert enumerate_tuples(flat_mirror, ChainSpec.parse("R")) == [TupleId((0,), 1)]


def test_pool_has_one_tuple(pool):
    assert enumerate_tuples(pool, ChainSpec.parse("T")) == [TupleId((0,), 1)]


def test_single_mirror_cannot_host_two_bounces(flat_mirror):
    assert enumerate_tuples(flat_mirror, ChainSpec.parse("RR")) == []


def test_slab_enumerates_entry_then_exit(slab):
    found = enumerate_tuples(slab, ChainSpec.parse("TT"))

    assert TupleId((0, 1), 2) in found
    assert all(len(set(t.specular)) == 2 for t in found)
    assert found == sorted(found)


def test_enumeration_refuses_unsupported_chain(flat_mirror):
    with pytest.raises(SceneError):
        enumerate_tuples(flat_mirror, ChainSpec.parse("T"))


def test_tuple_id_string():
    assert str(TupleId((0, 1), 2)) == "0,1->2"


def test_bvh_traverse_filters_by_box(slab):
    bvh = Bvh(slab.triangles, leaf_size=1)

    assert len(bvh) == 3
    assert bvh.traverse(lambda lo, hi: True) == [0, 1, 2]
    # Only the receiver reaches below z = -1.
    assert bvh.traverse(lambda lo, hi: lo[2] <= -1.0) == [2]


def _samples(count, seed):
    u1 = np.random.default_rng(seed).random((count, 2))
    flip = u1.sum(axis=1) > 1.0
    u1[flip] = 1.0 - u1[flip]
    return u1


def _forward_hits(scene, first, second, u1):
    """Whether the ray refracted at `first` reaches `second`, occlusion ignored."""
    path = trace_chain((scene.triangle(first), scene.triangle(second)), None, TT, scene.light, u1)
    return path.valid or path.reason == "no transmission at vertex 2"


def test_extend_tuple_keeps_every_forward_hit(tiled_slab):
    specular = [t.index for t in tiled_slab.specular]
    bvh = Bvh(tiled_slab.specular)
    samples = _samples(2500, seed=5)
    hits = 0
    for first in specular[:4]:
        prefix = TupleGeometry((tiled_slab.triangle(first),), None, ChainSpec.parse("T"), tiled_slab.light)
        candidates = extend_tuple((first,), prefix_expressions(prefix), bvh)
        for second in specular:
            if second == first:
                continue
            reached = [u1 for u1 in samples if _forward_hits(tiled_slab, first, second, u1)]
            assert not reached or second in candidates, f"{first} reaches {second} but it was pruned"
            hits += len(reached)
    assert hits >= len(samples) * 4


def test_enumeration_covers_brute_force_reachable_set(tiled_slab):
    receiver = tiled_slab.receivers[0]
    specular = [t.index for t in tiled_slab.specular]
    samples = _samples(400, seed=6)
    reachable = set()
    for first in specular:
        for second in specular:
            if first == second:
                continue
            triangles = (tiled_slab.triangle(first), tiled_slab.triangle(second))
            if any(trace_chain(triangles, receiver, TT, tiled_slab.light, u1).valid for u1 in samples):
                reachable.add(TupleId((first, second), receiver.index))

    found = set(enumerate_tuples(tiled_slab, TT))

    # Each entry face lights each exit face it overlaps from the light's view.
    assert reachable and all(t.specular[0] < 4 <= t.specular[1] for t in reachable)
    assert reachable <= found


def test_tuple_count_grows_linearly_with_refinement():
    counts = [
        len(enumerate_tuples(Scene.from_dict(sphere_cap_data(refine)), ChainSpec.parse("T")))
        for refine in range(3)
    ]

    assert counts[0] == 6
    for coarse, fine in zip(counts, counts[1:]):
        assert 3.0 <= fine / coarse <= 6.0
