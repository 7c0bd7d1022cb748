import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duonav.errors import BoundsError, GenerationError, StateError
from duonav.world import (ElevationGrid, Obstacle, SensorConfig, UAVState, WorldGenParams, WorldModel,
                          capture_bev, capture_lidar, cast_rays, check_collision, dumps_world,
                          flat_world, generate_world, loads_world, surface_height, surface_heights)


def test_surface_height_examples(box_world):
    assert surface_height(flat_world(100.0), 5, 5) == 0.0
    assert surface_height(box_world, 5, 5) == 30.0
    assert surface_height(box_world, 15, 5) == 0.0


def test_surface_height_out_of_bounds(box_world):
    with pytest.raises(BoundsError):
        surface_height(box_world, -1.0, 5.0)


def test_bev_flat_world():
    world = flat_world(400.0, origin=(-200.0, -200.0))
    obs = capture_bev(world, UAVState((0.0, 0.0, 100.0)), SensorConfig(bev_fov=math.pi / 2))
    x0, y0, x1, y1 = obs.footprint
    assert x1 - x0 == pytest.approx(200.0) and y1 - y0 == pytest.approx(200.0)
    assert obs.depth.shape == (200, 200) and obs.semantic.shape == (200, 200)
    assert obs.valid.all()
    assert np.all(obs.depth == 100.0)


def test_bev_box_depth_matches_surface(box_world):
    world = flat_world(400.0, [Obstacle(-10, -10, 10, 10, 30.0)], origin=(-200.0, -200.0))
    cfg = SensorConfig(bev_resolution=100)
    obs = capture_bev(world, UAVState((30.0, 0.0, 100.0)), cfg)
    gx, gy = obs.frame.centers()
    inside = (np.abs(gx) <= 10) & (np.abs(gy) <= 10)
    assert inside.any()
    assert np.all(obs.depth[inside] == 70.0)
    assert np.all(obs.depth[~inside] == 100.0)
    # independent per-pixel surface queries
    for a, b in [(0, 0), (17, 42), (99, 99), (60, 50)]:
        assert obs.depth[a, b] == 100.0 - surface_height(world, gx[a, b], gy[a, b])


def test_bev_partially_out_of_bounds():
    world = flat_world(100.0)
    obs = capture_bev(world, UAVState((10.0, 50.0, 40.0)), SensorConfig(bev_resolution=80))
    gx, _ = obs.frame.centers()
    assert not obs.valid[gx < 0].any()
    assert obs.valid[gx > 0].all()
    assert np.all(obs.semantic[~obs.valid] == -1)


def test_bev_below_surface_raises(box_world):
    with pytest.raises(StateError):
        capture_bev(box_world, UAVState((5.0, 5.0, 20.0)), SensorConfig())


def test_lidar_empty_space():
    world = flat_world(1000.0, origin=(-500.0, -500.0))
    cloud = capture_lidar(world, UAVState((0.0, 0.0, 200.0)), SensorConfig())
    assert cloud.shape == (0, 3)


def test_lidar_downward_ray_hits_below():
    world = flat_world(100.0, origin=(-50.0, -50.0))
    cloud = capture_lidar(world, UAVState((0.0, 0.0, 10.0)), SensorConfig())
    assert np.any(np.all(np.abs(cloud - [0.0, 0.0, 0.0]) < 1e-9, axis=1))


def test_lidar_wall_distance_analytic():
    # wall face at x = 5, UAV at origin: +x horizontal ray length is 5 exactly
    world = flat_world(200.0, [Obstacle(5.0, -50.0, 10.0, 50.0, 40.0)], origin=(-100.0, -100.0))
    cfg = SensorConfig(lidar_elevation_band=(-math.pi / 4, math.pi / 4), lidar_elevation_bins=3)
    cloud = capture_lidar(world, UAVState((0.0, 0.0, 10.0)), cfg)
    d = np.linalg.norm(cloud - [0.0, 0.0, 10.0], axis=1)
    forward = cloud[:, 0] > 4.0
    assert d[forward].min() == pytest.approx(5.0, abs=1e-9)
    # oracle for every ray: distance to the plane x=5 along the ray, if within the wall
    for p in cloud[forward]:
        assert p[0] == pytest.approx(5.0, abs=1e-6)


def _residual(world, p):
    """Distance from a point to the nearest solid surface (ground plane or box boundary)."""
    best = abs(p[2] - world.ground_level)
    for o in world.obstacles:
        lo = np.array([o.x1, o.y1, 0.0])
        hi = np.array([o.x2, o.y2, o.height])
        outside = np.maximum(np.maximum(lo - p, 0), p - hi)
        if np.any(outside > 0):
            best = min(best, float(np.linalg.norm(outside)))
        else:
            best = min(best, float(np.min(np.concatenate([p - lo, hi - p]))))
    return best


def test_lidar_points_lie_on_surfaces():
    world = generate_world(3, WorldGenParams(size=200.0, n_buildings=8, n_targets=2))
    cfg = SensorConfig()
    r = np.random.default_rng(0)
    for _ in range(10):
        pos = (r.uniform(20, 180), r.uniform(20, 180), r.uniform(5, 80))
        st_ = UAVState(pos, yaw=r.uniform(0, 6))
        if check_collision(world, st_) or surface_height(world, pos[0], pos[1]) >= pos[2]:
            continue
        for p in capture_lidar(world, st_, cfg):
            assert _residual(world, p) < 1e-6


def test_collision_examples(box_world):
    world = flat_world(100.0)
    assert not check_collision(world, UAVState((50.0, 50.0, 50.0), collision_radius=1.0))
    assert check_collision(box_world, UAVState((5.0, 5.0, 15.0)))
    assert not check_collision(world, UAVState((50.0, 50.0, 1.0), collision_radius=1.0))
    assert check_collision(world, UAVState((150.0, 50.0, 20.0)))


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-5, 105), y=st.floats(-5, 105), z=st.floats(0, 60),
       r=st.floats(0.1, 10), dr=st.floats(0, 10))
def test_collision_monotone_in_radius(x, y, z, r, dr):
    world = flat_world(100.0, [Obstacle(20, 20, 40, 40, 30.0), Obstacle(60, 10, 70, 90, 12.0)])
    if check_collision(world, UAVState((x, y, z), collision_radius=r)):
        assert check_collision(world, UAVState((x, y, z), collision_radius=r + dr))


def test_cast_rays_horizontal_miss_is_inf():
    world = flat_world(100.0)
    t = cast_rays(world, [50.0, 50.0, 10.0], [[1.0, 0.0, 0.0]], 30.0)
    assert np.isinf(t[0])


def test_generate_world_deterministic():
    a = generate_world(1)
    b = generate_world(1)
    assert dumps_world(a) == dumps_world(b)
    assert dumps_world(generate_world(2)) != dumps_world(a)


def test_generate_world_no_buildings():
    world = generate_world(5, WorldGenParams(n_buildings=0, n_kiosks=0, n_targets=3))
    assert world.obstacles == ()
    assert np.all(world.terrain.heights == 0)


def _overlap(a, b):
    return a.x1 < b.x2 and b.x1 < a.x2 and a.y1 < b.y2 and b.y1 < a.y2


def test_generate_world_disjoint_footprints():
    world = generate_world(11, WorldGenParams(size=400.0, n_buildings=40, building_size=(10.0, 30.0)))
    obs = world.obstacles
    assert len(obs) >= 40
    for a in range(len(obs)):
        for b in range(a + 1, len(obs)):
            assert not _overlap(obs[a], obs[b])


def test_generate_world_infeasible():
    with pytest.raises(GenerationError):
        generate_world(0, WorldGenParams(size=100.0, n_buildings=60, max_attempts=50))


def test_targets_tagged_and_free():
    world = generate_world(4)
    for t in world.targets:
        assert len(t.attributes) == 1 and len(t.context) == 1
        assert surface_height(world, t.position[0], t.position[1]) == 0.0


def test_world_roundtrip_lossless():
    world = generate_world(7, WorldGenParams(n_mounds=3))
    back = loads_world(dumps_world(world))
    assert np.array_equal(back.terrain.heights, world.terrain.heights)
    assert back.obstacles == world.obstacles
    assert back.targets == world.targets
    assert dumps_world(back) == dumps_world(world)


def test_elevation_grid_rejects_negative():
    with pytest.raises(ValueError):
        ElevationGrid(np.array([[-1.0]]), 1.0)
    with pytest.raises(ValueError):
        ElevationGrid(np.zeros((2, 2)), 0.0)


def test_surface_heights_vectorised_matches_scalar(box_world):
    xs = np.linspace(0, 100, 17)
    ys = np.linspace(0, 100, 17)
    vec = surface_heights(box_world, xs, ys)
    assert [surface_height(box_world, x, y) for x, y in zip(xs, ys)] == list(vec)


def test_world_model_rejects_target_inside_obstacle():
    from duonav.world import Target
    with pytest.raises(ValueError):
        WorldModel(flat_world(100.0).terrain, (Obstacle(0, 0, 10, 10, 5),), (Target(0, "car", (5, 5, 1)),))
