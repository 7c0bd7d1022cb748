import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duonav.errors import ContractError, DegenerateMapError
from duonav.grid import GridFrame
from duonav.orthomap import OrthoMap, empty_orthomap
from duonav.pathfinder import OccupancyGrid
from duonav.pilot import (HeuristicPilot, Instruction, OraclePilot, ProbabilityMap, centroid,
                          global_to_map, map_to_global, oracle_gaussian_map, oracle_pilot_decide,
                          sector_of, uniform_over_free)


def free_occ(nx, ny=None, cell=1.0, x0=0.0, y0=0.0):
    ny = nx if ny is None else ny
    return OccupancyGrid(np.ones((nx, ny), dtype=np.uint8), GridFrame(x0, y0, cell, nx, ny))


def pm(prob, cell=1.0):
    prob = np.asarray(prob, dtype=float)
    return ProbabilityMap(prob, GridFrame(0, 0, cell, *prob.shape))


# ---------------------------------------------------------------- transforms

def test_map_to_global_examples():
    assert map_to_global(0, 0, GridFrame(0, 0, 1.0, 4, 4), 7.0) == (0.5, 0.5, 7.0)
    assert map_to_global(10, 5, GridFrame(100.0, -50.0, 2.0, 64, 64), 9.0) == (121.0, -39.0, 9.0)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-500, 500), y=st.floats(-500, 500), cell=st.floats(0.25, 8.0))
def test_map_roundtrip_quantization(x, y, cell):
    frame = GridFrame(-600.0, -600.0, cell, 4000, 4000)
    u, v = global_to_map(x, y, frame)
    i, j = math.floor(u + 0.5), math.floor(v + 0.5)
    gx, gy, _ = map_to_global(i, j, frame, 0.0)
    assert abs(gx - x) <= cell / 2 + 1e-9 and abs(gy - y) <= cell / 2 + 1e-9


# ---------------------------------------------------------------- Gaussian maps

def test_gaussian_small_sigma_delta():
    occ = free_occ(9)
    m = oracle_gaussian_map((3.5, 6.5), occ.frame, occ, 1e-3)
    assert m.prob[3, 6] == pytest.approx(1.0)
    assert m.prob.sum() == pytest.approx(1.0, abs=1e-12)


def test_gaussian_rotational_symmetry():
    occ = free_occ(21)
    m = oracle_gaussian_map((10.5, 10.5), occ.frame, occ, 4.0)
    assert np.allclose(m.prob, np.rot90(m.prob), atol=1e-9, rtol=0)


def test_gaussian_center_outside_east():
    occ = free_occ(12, 8)
    m = oracle_gaussian_map((500.0, 3.2), occ.frame, occ, 3.0)
    i, j = np.unravel_index(np.argmax(m.prob), m.prob.shape)
    assert i == 11
    # brute-force nearest in-frame cell center
    cx, cy = occ.frame.centers()
    d = (cx - 500.0) ** 2 + (cy - 3.2) ** 2
    assert (i, j) == np.unravel_index(np.argmin(d), d.shape)


def test_gaussian_suppression_and_degenerate():
    cells = np.ones((10, 10), dtype=np.uint8)
    cells[:5] = 0
    occ = OccupancyGrid(cells, GridFrame(0, 0, 1, 10, 10))
    m = oracle_gaussian_map((2.0, 5.0), occ.frame, occ, 2.0)
    m.check(suppressed=~cells.astype(bool))
    with pytest.raises(DegenerateMapError):
        oracle_gaussian_map((2.0, 5.0), occ.frame, OccupancyGrid(np.zeros((10, 10)), occ.frame), 2.0)


def test_gaussian_deep_block_does_not_underflow():
    cells = np.zeros((200, 200), dtype=np.uint8)
    cells[199, 199] = 1
    occ = OccupancyGrid(cells, GridFrame(0, 0, 1, 200, 200))
    m = oracle_gaussian_map((0.5, 0.5), occ.frame, occ, 1.0)
    assert m.prob[199, 199] == 1.0


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 100_000), sigma=st.floats(0.5, 30.0))
def test_gaussian_invariants_and_argmax(seed, sigma):
    r = np.random.default_rng(seed)
    nx, ny = int(r.integers(3, 40)), int(r.integers(3, 40))
    cells = (r.random((nx, ny)) < 0.7).astype(np.uint8)
    if not cells.any():
        cells[0, 0] = 1
    frame = GridFrame(0, 0, 2.0, nx, ny)
    occ = OccupancyGrid(cells, frame)
    c = (float(r.uniform(-20, 2 * nx + 20)), float(r.uniform(-20, 2 * ny + 20)))
    m = oracle_gaussian_map(c, frame, occ, sigma)
    m.check(suppressed=cells == 0)
    # argmax: free cell nearest the clamped center, ties lowest i then j
    u, v = frame.to_fractional(*c)
    if not (0 <= u < nx and 0 <= v < ny):
        u = min(max(math.floor(u), 0), nx - 1) + 0.5
        v = min(max(math.floor(v), 0), ny - 1) + 0.5
    best = min(((i + 0.5 - u) ** 2 + (j + 0.5 - v) ** 2, i, j) for i, j in np.argwhere(cells))
    flat = np.flatnonzero(m.prob == m.prob.max())
    assert np.unravel_index(flat[0], m.prob.shape) == best[1:]


# ---------------------------------------------------------------- centroid

def test_centroid_examples():
    p = np.zeros((30, 30))
    p[10, 20] = 1.0
    assert centroid(pm(p)) == (10.0, 20.0)
    p = np.zeros((3, 3))
    p[0, 0] = p[0, 2] = 0.5
    assert centroid(pm(p)) == (0.0, 1.0)
    p = np.zeros((8, 8))
    p[2:6, 2:6] = 1 / 16
    assert centroid(pm(p)) == pytest.approx((3.5, 3.5))


def test_centroid_requires_normalised():
    with pytest.raises(ContractError):
        centroid(pm(np.full((2, 2), 0.5)))


def brute_centroid(p):
    return (sum(p[i, j] * i for i in range(p.shape[0]) for j in range(p.shape[1])),
            sum(p[i, j] * j for i in range(p.shape[0]) for j in range(p.shape[1])))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), alpha=st.floats(0, 1))
def test_centroid_linear(seed, alpha):
    r = np.random.default_rng(seed)
    shape = (int(r.integers(1, 20)), int(r.integers(1, 20)))
    a = r.random(shape)
    b = r.random(shape)
    a, b = a / a.sum(), b / b.sum()
    mix = centroid(pm(alpha * a + (1 - alpha) * b))
    ca, cb = centroid(pm(a)), centroid(pm(b))
    assert mix[0] == pytest.approx(alpha * ca[0] + (1 - alpha) * cb[0], abs=1e-9)
    assert mix[1] == pytest.approx(alpha * ca[1] + (1 - alpha) * cb[1], abs=1e-9)
    assert ca == pytest.approx(brute_centroid(a), abs=1e-9)


# ---------------------------------------------------------------- oracle decision

def test_oracle_decide_north_step_clamped():
    ortho = empty_orthomap(size=64, base_cell=8.0)
    frame = GridFrame(-256.0, -256.0, 8.0, 64, 64)
    ortho = OrthoMap(ortho.semantic, ortho.elevation, ortho.valid, frame)
    occ = free_occ(64, cell=8.0, x0=-256.0, y0=-256.0)
    d = oracle_pilot_decide((4.0, 204.0), ortho, occ, (4.0, 4.0, 80.0), sigma=1e-3, step_length=50.0)
    assert d.high_heading == pytest.approx(math.pi / 2)
    assert d.high_step == pytest.approx(50.0)
    d = oracle_pilot_decide((4.0, 24.0), ortho, occ, (4.0, 4.0, 80.0), sigma=1e-3, step_length=50.0)
    assert d.high_step == pytest.approx(20.0)


def test_oracle_centroid_equals_center_on_free_map():
    occ = free_occ(101)
    ortho = OrthoMap(np.zeros((101, 101), dtype=np.int32), np.zeros((101, 101)),
                     np.ones((101, 101), dtype=bool), occ.frame)
    d = oracle_pilot_decide((50.5, 50.5), ortho, occ, (0.0, 0.0, 80.0), sigma=6.0)
    assert d.centroid == pytest.approx((50.0, 50.0), abs=1e-9)


def test_oracle_pilot_lookahead():
    path = np.array([[0.0, 0.0, 10.0], [200.0, 0.0, 10.0]])
    pilot = OraclePilot(path, lookahead=50.0)
    assert np.allclose(pilot.future_point((30.0, 3.0, 10.0)), [80.0, 0.0, 10.0])
    assert np.allclose(pilot.future_point((190.0, 0.0, 10.0)), [200.0, 0.0, 10.0])


# ---------------------------------------------------------------- heuristic

def ortho_of(sem, legend, cell=1.0):
    sem = np.asarray(sem, dtype=np.int32)
    frame = GridFrame(0, 0, cell, *sem.shape)
    return OrthoMap(sem, np.zeros(sem.shape), sem >= 0, frame, legend=legend)


def test_heuristic_unique_match_argmax():
    sem = np.zeros((20, 20), dtype=np.int32)
    sem[13, 4] = 10000
    ortho = ortho_of(sem, {0: ("ground",), 10000: ("car", "red")})
    occ = free_occ(20)
    pilot = HeuristicPilot(w_category=100.0, w_frontier=0.0)
    d = pilot.decide(ortho, None, [(0, 0, 80)], Instruction("car", None, ("red",)), occ=occ, low_position=(0, 0, 10))
    assert np.unravel_index(np.argmax(d.prob_map.prob), sem.shape) == (13, 4)
    d.prob_map.check()


def test_heuristic_no_match_uniform():
    ortho = ortho_of(np.zeros((10, 10)), {0: ("ground",)})
    cells = np.ones((10, 10), dtype=np.uint8)
    cells[3:5] = 0
    occ = OccupancyGrid(cells, ortho.frame)
    d = HeuristicPilot(w_frontier=0.0).decide(ortho, None, [(5, 5, 80)], Instruction("car"), occ=occ,
                                              low_position=(5, 5, 10))
    expect = uniform_over_free(occ).prob
    assert np.allclose(d.prob_map.prob, expect, atol=1e-12)


def test_heuristic_direction_selects_eastern_match():
    sem = np.zeros((41, 41), dtype=np.int32)
    sem[35, 20] = 10000   # east of start
    sem[5, 20] = 10001    # west of start
    legend = {0: ("ground",), 10000: ("car",), 10001: ("car",)}
    ortho = ortho_of(sem, legend)
    occ = free_occ(41)
    pilot = HeuristicPilot(w_frontier=0.0)
    history = [(20.5, 20.5, 80.0)]
    instr = Instruction("car", "east")
    score = pilot.scores(ortho, history, instr)
    # direct score computation at the two matches
    assert score[35, 20] == pilot.w_category + pilot.w_direction
    assert score[5, 20] == pilot.w_category
    d = pilot.decide(ortho, None, history, instr, occ=occ, low_position=(0, 0, 0))
    assert np.unravel_index(np.argmax(d.prob_map.prob), sem.shape) == (35, 20)


def test_heuristic_attribute_mismatch_ignored():
    sem = np.zeros((10, 10), dtype=np.int32)
    sem[2, 2] = 10000
    ortho = ortho_of(sem, {0: ("ground",), 10000: ("car", "blue")})
    score = HeuristicPilot(w_frontier=0.0).scores(ortho, [(0, 0, 0)], Instruction("car", None, ("red",)))
    assert score.max() == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.1, 10.0))
def test_heuristic_scaling_invariance(seed, c):
    """Scaling all weights and the temperature together leaves the map unchanged."""
    r = np.random.default_rng(seed)
    sem = r.choice([0, 1, 10000], size=(16, 16), p=[0.8, 0.15, 0.05]).astype(np.int32)
    legend = {0: ("ground",), 1: ("kiosk",), 10000: ("car", "red")}
    ortho = ortho_of(sem, legend)
    occ = OccupancyGrid((sem != 1).astype(np.uint8), ortho.frame)
    instr = Instruction("car", "north", ("red",), ("kiosk",))
    base = HeuristicPilot(context_radius=3.0, frontier_radius=2.0)
    scaled = HeuristicPilot(w_category=c * 12, w_direction=c * 2, w_context=c * 1, w_frontier=c * 2,
                            temperature=c * 0.25, context_radius=3.0, frontier_radius=2.0)
    hist = [(8.0, 3.0, 60.0)]
    a = base.decide(ortho, None, hist, instr, occ=occ, low_position=(0, 0, 0)).prob_map.prob
    b = scaled.decide(ortho, None, hist, instr, occ=occ, low_position=(0, 0, 0)).prob_map.prob
    assert np.allclose(a, b, atol=1e-12)
    top_a = set(np.flatnonzero(a >= a.max() * (1 - 1e-9)))
    top_b = set(np.flatnonzero(b >= b.max() * (1 - 1e-9)))
    assert min(top_a) == min(top_b)


def test_sector_of():
    assert sector_of(1, 0) == "east"
    assert sector_of(0, 1) == "north"
    assert sector_of(-1, -1) == "southwest"


def test_instruction_validation():
    with pytest.raises(ValueError):
        Instruction("")
    with pytest.raises(ValueError):
        Instruction("car", "up")
