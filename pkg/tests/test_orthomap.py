import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duonav.errors import DegenerateAltitudeError
from duonav.grid import GridFrame
from duonav.orthomap import (HISTORY_LIMIT, OrthoTile, empty_orthomap, global_depth,
                             integrate_observation, observe, reconstruct_elevation, reproject, stitch)
from duonav.world import Obstacle, SensorConfig, Target, UAVState, flat_world, surface_heights

LATTICE = GridFrame(0.0, 0.0, 1.0, 0, 0)


def test_reconstruct_flat_points():
    frame = GridFrame(0, 0, 1, 4, 4)
    pts = np.array([[0.5, 0.5, 0.0], [2.2, 3.1, 0.0]])
    e = reconstruct_elevation([pts], frame)
    assert e.valid[0, 0] and e.valid[2, 3]
    assert e.heights[0, 0] == 0.0 and e.heights[2, 3] == 0.0
    assert e.valid.sum() == 2


def test_reconstruct_max_binning():
    frame = GridFrame(0, 0, 1, 2, 2)
    e = reconstruct_elevation([np.array([[0.2, 0.2, 0.0]]), np.array([[0.7, 0.9, 30.0]])], frame)
    assert e.heights[0, 0] == 30.0


def test_reconstruct_empty():
    e = reconstruct_elevation([], GridFrame(0, 0, 1, 3, 3))
    assert not e.valid.any()
    assert np.isnan(e.heights).all()


def test_reconstruct_binning_bounds():
    """Cell elevation lies between the min and max true surface over the cell."""
    world = flat_world(60.0, [Obstacle(10.3, 10.3, 20.7, 25.2, 17.0), Obstacle(30, 5, 33, 8, 4.0)])
    r = np.random.default_rng(1)
    xy = r.uniform(0, 60, size=(3000, 2))
    pts = np.column_stack([xy, surface_heights(world, xy[:, 0], xy[:, 1])])
    frame = GridFrame(0, 0, 2.0, 30, 30)
    e = reconstruct_elevation([pts], frame)
    for i, j in zip(*np.nonzero(e.valid)):
        xs = np.linspace(i * 2.0, (i + 1) * 2.0, 21)
        ys = np.linspace(j * 2.0, (j + 1) * 2.0, 21)
        gx, gy = np.meshgrid(xs, ys)
        true = surface_heights(world, gx, gy)
        assert true.min() - 1e-9 <= e.heights[i, j] <= true.max() + 1e-9


def _obs(world, pose, res=100):
    return observe(world, UAVState(pose), SensorConfig(bev_resolution=res))


def test_reproject_identity_flat():
    world = flat_world(200.0, targets=[Target(0, "car", (60.0, 60.0, 1.0), ("red", "open_plaza"))])
    obs, _ = _obs(world, (50.0, 50.0, 50.0))
    frame = GridFrame(0.0, 0.0, 1.0, 200, 200)
    tile = reproject(obs, None, frame)
    assert (tile.frame.x0, tile.frame.x1) == pytest.approx((obs.footprint[0], obs.footprint[2]), abs=1e-9)
    assert np.array_equal(tile.semantic, obs.semantic)


def test_reproject_same_cell_same_label():
    world = flat_world(200.0, [Obstacle(40, 40, 60, 60, 20.0)])
    frame = GridFrame(0.0, 0.0, 1.0, 200, 200)
    a = reproject(_obs(world, (50.0, 50.0, 60.0))[0], None, frame)
    b = reproject(_obs(world, (70.0, 60.0, 60.0))[0], None, frame)
    ia = int(round(a.frame.x0)), int(round(a.frame.y0))
    ib = int(round(b.frame.x0)), int(round(b.frame.y0))
    for x, y in [(50, 50), (45, 58), (62, 62), (90, 90)]:
        la = a.semantic[x - ia[0], y - ia[1]]
        lb = b.semantic[x - ib[0], y - ib[1]]
        assert la == lb


def test_reproject_clipped_to_frame():
    world = flat_world(200.0, origin=(-100.0, -100.0))
    obs, _ = _obs(world, (0.0, 0.0, 50.0))
    frame = GridFrame(0.0, -100.0, 1.0, 100, 200)
    tile = reproject(obs, None, frame)
    assert tile.frame.x0 >= 0.0
    assert tile.frame.x1 <= frame.x1 and tile.frame.nx == 50


def _tile(x0, y0, n, label, elev=0.0):
    f = GridFrame(x0, y0, 1.0, n, n)
    return OrthoTile(f, np.full((n, n), label, dtype=np.int32), np.full((n, n), elev),
                     np.ones((n, n), dtype=bool), (x0, y0, x0 + n, y0 + n))


def _cells(ortho):
    c = ortho.canvas
    out = {}
    for i, j in zip(*np.nonzero(c.valid)):
        key = (int(round(c.frame.x0)) + int(i), int(round(c.frame.y0)) + int(j))
        out[key] = (int(c.semantic[i, j]), float(c.elevation[i, j]))
    return out


def test_stitch_idempotent():
    t = _tile(0, 0, 10, 5)
    pose = UAVState((5.0, 5.0, 60.0))
    once = stitch(empty_orthomap(), t, pose)
    twice = stitch(once, t, pose)
    assert np.array_equal(once.semantic, twice.semantic)
    assert np.array_equal(once.valid, twice.valid)
    assert once.frame == twice.frame
    assert len(twice.history) == 1


def test_stitch_union_of_disjoint():
    a, b = _tile(0, 0, 8, 1), _tile(20, 0, 8, 2)
    m = stitch(stitch(empty_orthomap(), a, UAVState((4, 4, 50))), b, UAVState((24, 4, 50)))
    cells = _cells(m)
    assert set(cells) == set(_cells(stitch(empty_orthomap(), a, UAVState((4, 4, 50))))) | \
        set(_cells(stitch(empty_orthomap(), b, UAVState((24, 4, 50)))))


def test_stitch_newest_wins():
    a, b = _tile(0, 0, 10, 1), _tile(5, 5, 10, 2)
    m = stitch(stitch(empty_orthomap(), a, UAVState((5, 5, 50))), b, UAVState((10, 10, 50)))
    cells = _cells(m)
    assert cells[(7, 7)][0] == 2
    assert cells[(2, 2)][0] == 1


@settings(max_examples=30, deadline=None)
@given(offsets=st.lists(st.integers(0, 9), min_size=2, max_size=5, unique=True))
def test_stitch_order_insensitive_disjoint(offsets):
    tiles = [(_tile(12 * k, 0, 10, k + 1, float(k)), UAVState((12 * k + 5, 5, 50))) for k in offsets]
    fwd = empty_orthomap()
    for t, p in tiles:
        fwd = stitch(fwd, t, p)
    rev = empty_orthomap()
    for t, p in reversed(tiles):
        rev = stitch(rev, t, p)
    assert _cells(fwd) == _cells(rev)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 15))
def test_history_capped(n):
    m = empty_orthomap(size=32)
    for k in range(n):
        m = stitch(m, _tile(k, 0, 4, 1), UAVState((k + 2.0, 2.0, 50.0)))
    assert len(m.history) == min(n, HISTORY_LIMIT)


def test_evicted_cells_persist():
    m = empty_orthomap(size=64)
    for k in range(7):
        m = stitch(m, _tile(10 * k, 0, 5, k + 1), UAVState((10 * k + 2.5, 2.5, 50.0)))
    assert _cells(m)[(0, 0)][0] == 1


def test_global_depth_examples():
    m = stitch(empty_orthomap(size=16), _tile(0, 0, 16, 0), UAVState((8, 8, 50)))
    d = global_depth(m, 100.0)
    assert np.all(d.depth[d.valid] == 100.0)
    t = _tile(0, 0, 16, 0)
    t.elevation[3, 4] = 30.0
    m = stitch(empty_orthomap(size=16), t, UAVState((8, 8, 50)))
    d = global_depth(m, 100.0)
    assert d.depth[3, 4] == 70.0


def test_global_depth_invalid_cells():
    t = _tile(0, 0, 16, 0)
    t.valid[2, 2] = False
    m = stitch(empty_orthomap(size=16), t, UAVState((8, 8, 50)))
    d = global_depth(m, 100.0)
    assert not d.valid[2, 2] and np.isnan(d.depth[2, 2])


def test_global_depth_degenerate_altitude():
    m = stitch(empty_orthomap(size=16), _tile(0, 0, 16, 0, elev=40.0), UAVState((8, 8, 50)))
    with pytest.raises(DegenerateAltitudeError):
        global_depth(m, 40.0)


def test_pipeline_depth_identity_and_truth():
    world = flat_world(300.0, [Obstacle(100, 100, 130, 120, 45.0), Obstacle(160, 90, 170, 95, 3.0)])
    m = empty_orthomap()
    for pose in [(120.0, 100.0, 80.0), (170.0, 110.0, 90.0)]:
        obs, cloud = _obs(world, pose, res=200)
        m = integrate_observation(m, obs, cloud)
    d = global_depth(m, 95.0)
    assert np.allclose(d.depth[d.valid], 95.0 - m.elevation[m.valid], atol=1e-6)
    gx, gy = m.frame.centers()
    truth = surface_heights(world, gx, gy)
    # nearest-neighbour view of 1 m lattice: cells near box edges may pick a neighbour
    agree = np.isclose(m.elevation[m.valid], truth[m.valid])
    assert agree.mean() > 0.97
    assert m.frame.shape == (256, 256)
    assert len(m.history) == 2


def test_stitch_rejects_foreign_lattice():
    t = OrthoTile(GridFrame(0, 0, 2.0, 2, 2), np.zeros((2, 2), dtype=np.int32), np.zeros((2, 2)),
                  np.ones((2, 2), dtype=bool), (0, 0, 4, 4))
    with pytest.raises(ValueError):
        stitch(empty_orthomap(), t, UAVState((1, 1, 50)))


def test_footprint_geometry():
    pose = UAVState((0.0, 0.0, 100.0))
    from duonav.world import bev_footprint
    fp = bev_footprint(pose, math.pi / 2)
    assert fp == pytest.approx((-100.0, -100.0, 100.0, 100.0))
