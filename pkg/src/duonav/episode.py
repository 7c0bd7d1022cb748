"""Dual-UAV episode loop.

The high UAV maps and decides; only the probability map, the depth map and
plain coordinates cross to the low UAV, which plans key waypoints, flies them
with the reactive controller at a fixed tick and runs the detector.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateMapError
from .orthomap import empty_orthomap, global_depth, integrate_observation, observe
from .pathfinder import (Detection, NavCommand, NavigatorConfig, OccupancyGrid, WaypointPlan,
                         astar, default_erosion_radius, detect_target, encode_rays, erode,
                         navigate_step, occupancy_from_depth, segment)
from .pilot import (Instruction, PilotDecision, PilotPolicy, ProbabilityMap, _decision, map_to_global,
                    uniform_over_free)
from .world import SensorConfig, UAVState, WorldModel, capture_lidar, check_collision, dumps_world


class Outcome(str, Enum):
    SUCCESS = "Success"
    TIMEOUT = "Timeout"
    COLLISION = "Collision"
    DEGENERATE_PILOT = "DegeneratePilot"


@dataclass(frozen=True)
class EpisodeConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    nav: NavigatorConfig = field(default_factory=NavigatorConfig)
    map_size: int = 256
    base_cell: float = 1.0
    map_mode: str = "stitched"          # or "latest": pilot sees only the newest frame
    waypoint_spacing: float = 20.0
    waypoint_eps: float = 2.0
    waypoint_eps_z: float = 2.0
    erosion_radius: int | None = None   # cells; None -> ceil((r + clearance) / cell) + 1
    clearance: float = 2.0              # extra planning margin covering braking distance
    accel_limit: float = 4.0
    high_speed: float = 10.0
    z_h_min: float = 60.0
    detector_threshold: float = 0.5
    detector_latency: int = 2           # ticks between request and result
    yaw_rate: float = math.pi / 2
    stuck_window: float = 6.0
    stuck_distance: float = 1.0
    approach_timeout: float = 30.0
    retry_cooldown: float = 10.0        # seconds a failed stop suppresses that detection
    lost_patience: float = 0.5          # seconds without a detection before the target counts as lost
    arrive_radius: float = 4.0          # a decision this close to the UAV triggers a look-around

    def __post_init__(self):
        if self.map_mode not in ("stitched", "latest"):
            raise ValueError(f"unknown map_mode {self.map_mode!r}")


@dataclass(frozen=True, eq=False)
class EpisodeSpec:
    world: WorldModel
    instruction: Instruction
    start_low: UAVState
    start_high: UAVState
    target: tuple[float, float, float]
    success_radius: float = 20.0
    time_limit: float = 300.0
    tick: float = 0.1
    expert_time: float | None = None
    expert_length: float | None = None
    episode_id: str = "0"
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.start_low.position, self.start_high.position
        if lo[0] != hi[0] or lo[1] != hi[1]:
            raise ValueError("both UAVs must start at the same horizontal position")
        if not hi[2] > lo[2]:
            raise ValueError("the high UAV must start above the low UAV")
        if not self.success_radius > 0:
            raise ValueError("success_radius must be positive")
        if not self.tick > 0:
            raise ValueError("tick must be positive")

    def digest(self, cfg: EpisodeConfig | None = None) -> str:
        h = hashlib.sha256()
        h.update(dumps_world(self.world).encode())
        payload = {
            "instruction": asdict(self.instruction),
            "start_low": asdict(self.start_low), "start_high": asdict(self.start_high),
            "target": list(self.target), "d": self.success_radius, "T_max": self.time_limit,
            "tick": self.tick, "seed": self.seed,
            "cfg": repr(cfg) if cfg is not None else None,
        }
        h.update(json.dumps(payload, sort_keys=True).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    outcome: Outcome
    low_times: np.ndarray
    low_traj: np.ndarray
    high_traj: np.ndarray
    search_time: float
    path_length: float
    oracle_hit: bool
    stop_point: tuple[float, float, float]
    navigation_error: float
    decision_count: int
    decisions: tuple[str, ...] = ()
    plans: tuple[WaypointPlan, ...] = ()
    collided: str | None = None
    last_decision: PilotDecision | None = None
    last_occupancy: OccupancyGrid | None = None
    last_ortho: object = None

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS


def waypoint_reached(pos: Sequence[float], waypoint: Sequence[float], eps: float, eps_z: float | None = None) -> bool:
    """Inclusive horizontal test plus an altitude band (``eps_z`` defaults to ``eps``)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    eps_z = eps if eps_z is None else eps_z
    dh = math.hypot(pos[0] - waypoint[0], pos[1] - waypoint[1])
    return dh <= eps and abs(pos[2] - waypoint[2]) <= eps_z


class ReactiveNavigator:
    """Adapter exposing :func:`navigate_step` as a navigator callable."""

    def __init__(self, cfg: NavigatorConfig | None = None):
        self.cfg = cfg or NavigatorConfig()

    def __call__(self, scan, subgoal, pos, vel, prev_command=None) -> NavCommand:
        return navigate_step(scan, subgoal, pos, vel, self.cfg, prev_command)


class OracleDetector:
    def __init__(self, sensor: SensorConfig, target_id: int | None = None):
        self.sensor = sensor
        self.target_id = target_id

    def __call__(self, world, state, instruction, ignore=()) -> Detection | None:
        det = detect_target(world, state, instruction, self.sensor, self.target_id)
        if det is not None and det.target_id in ignore:
            # fall back to the nearest non-ignored instance
            for t in sorted(world.targets, key=lambda t: np.linalg.norm(np.asarray(t.position) - state.pos)):
                if t.id in ignore or t.category != instruction.target_category:
                    continue
                d2 = detect_target(world, state, instruction, self.sensor, t.id)
                if d2 is not None:
                    return d2
            return None
        return det


def _nearest_free(cells: np.ndarray, cell: tuple[int, int]) -> tuple[int, int] | None:
    free = cells.astype(bool)
    if not free.any():
        return None
    if free[cell]:
        return cell
    _, (ii, jj) = ndimage.distance_transform_edt(~free, return_indices=True)
    return int(ii[cell]), int(jj[cell])


def plan_key_waypoints(decision: PilotDecision, occ: OccupancyGrid, low_pos: Sequence[float], z_l: float,
                       cfg: EpisodeConfig, collision_radius: float, tau: int = 0) -> WaypointPlan:
    """Centroid -> world goal -> eroded A* -> equal arc-length waypoints."""
    frame = occ.frame
    ci, cj = decision.centroid
    gx, gy, _ = map_to_global(ci, cj, frame, z_l)
    r = cfg.erosion_radius if cfg.erosion_radius is not None else \
        default_erosion_radius(collision_radius + cfg.clearance, frame.cell_size)
    grid = erode(occ, r)
    if not grid.cells.any():
        grid = occ
    start = frame.clamp_cell(*frame.cell_of(low_pos[0], low_pos[1]))
    goal = frame.clamp_cell(*frame.cell_of(gx, gy))
    s = _nearest_free(grid.cells, start)
    if s is None:
        return WaypointPlan(np.array([[gx, gy, z_l]]), tau)
    path = astar(grid, s, goal)
    plan = segment(path, frame, cfg.waypoint_spacing, z_l, occ=grid, source_tau=tau)
    if s != start or not frame.contains_cell(*frame.cell_of(low_pos[0], low_pos[1])):
        sx, sy = frame.cell_center(*s)
        lead = np.array([[float(sx), float(sy), z_l]])
        plan = WaypointPlan(np.vstack([lead, plan.waypoints]), tau)
    return plan


class _Sim:
    """Mutable per-episode state; one instance per :func:`run_episode` call."""

    def __init__(self, spec: EpisodeSpec, cfg: EpisodeConfig, navigator, detector):
        self.spec = spec
        self.cfg = cfg
        self.navigator = navigator
        self.detector = detector
        self.low = spec.start_low
        self.high = spec.start_high
        self.prev_cmd = np.zeros(3)
        self.ticks = 0
        self.times = [0.0]
        self.low_pts = [spec.start_low.pos]
        self.high_pts = [spec.start_high.pos]
        self.target = np.asarray(spec.target, dtype=float)
        self.oracle_hit = self._within(self.low.pos)
        self.high_goal = np.asarray(spec.start_high.position[:2])
        self.pending: tuple[int, Detection | None] | None = None
        self.ignore_until: dict[int, int] = {}
        self.outcome: Outcome | None = None
        self.collided: str | None = None

    def _within(self, p) -> bool:
        return float(np.linalg.norm(np.asarray(p) - self.target)) <= self.spec.success_radius

    @property
    def time(self) -> float:
        return self.ticks * self.spec.tick

    def timed_out(self) -> bool:
        return self.time >= self.spec.time_limit - 1e-12

    def detection_poll(self) -> tuple[bool, Detection | None]:
        """Advance the asynchronous detector; returns (result_ready, detection)."""
        ready = False
        det = None
        if self.pending is not None and self.pending[0] <= self.ticks:
            ready, det = True, self.pending[1]
            self.pending = None
        if self.pending is None:
            ignore = {k for k, until in self.ignore_until.items() if until > self.ticks}
            snap = self.detector(self.spec.world, self.low, self.spec.instruction, ignore)
            self.pending = (self.ticks + self.cfg.detector_latency, snap)
            if self.cfg.detector_latency == 0 and not ready:
                ready, det = True, snap
                self.pending = None
        return ready, det

    def step(self, subgoal, yaw_override: float | None = None) -> None:
        """One control tick of both vehicles; sets ``outcome`` on collision/timeout."""
        cfg, spec = self.cfg, self.spec
        dt = spec.tick
        if subgoal is None:
            cmd = np.zeros(3)
        else:
            cloud = capture_lidar(spec.world, self.low, cfg.sensor)
            scan = encode_rays(cloud, self.low, cfg.sensor)
            cmd = self.navigator(scan, subgoal, self.low.pos, self.low.vel, self.prev_cmd).vec
        vel = self.low.vel
        dv = cmd - vel
        n = float(np.linalg.norm(dv))
        lim = cfg.accel_limit * dt
        if n > lim:
            dv *= lim / n
        vel = vel + dv
        pos = self.low.pos + vel * dt
        if yaw_override is not None:
            yaw = yaw_override
        elif math.hypot(vel[0], vel[1]) > 0.5:
            yaw = math.atan2(vel[1], vel[0])
        else:
            yaw = self.low.yaw
        self.low = UAVState(tuple(pos), tuple(vel), yaw, self.low.collision_radius)
        self.prev_cmd = cmd

        hp = self.high.pos
        d = self.high_goal - hp[:2]
        dist = float(np.hypot(*d))
        hv = np.zeros(3)
        if dist > 0:
            hv[:2] = d / dist * min(cfg.high_speed, dist / dt)
        hz = max(hp[2], cfg.z_h_min)
        self.high = UAVState((hp[0] + hv[0] * dt, hp[1] + hv[1] * dt, hz), tuple(hv),
                             math.atan2(d[1], d[0]) if dist > 0 else self.high.yaw,
                             self.high.collision_radius)

        self.ticks += 1
        self.times.append(self.time)
        self.low_pts.append(self.low.pos)
        self.high_pts.append(self.high.pos)
        if self._within(self.low.pos):
            self.oracle_hit = True
        if check_collision(spec.world, self.low):
            self.outcome, self.collided = Outcome.COLLISION, "low"
        elif check_collision(spec.world, self.high):
            self.outcome, self.collided = Outcome.COLLISION, "high"
        elif self.timed_out():
            self.outcome = Outcome.TIMEOUT

    def _turn_toward(self, bearing: float) -> float:
        err = math.atan2(math.sin(bearing - self.low.yaw), math.cos(bearing - self.low.yaw))
        lim = self.cfg.yaw_rate * self.spec.tick
        return self.low.yaw + max(-lim, min(lim, err))

    def approach(self, det: Detection) -> bool:
        """Track the detection bearing until close or the target is lost; True on success."""
        cfg, spec = self.cfg, self.spec
        half = spec.success_radius / 2
        latest = det
        misses = 0
        patience = max(1, int(round(cfg.lost_patience / spec.tick)))
        self.pending = None
        start_tick = self.ticks
        z = spec.start_low.position[2]
        while latest.range > half:
            sub = self.low.pos + latest.range * np.array([math.cos(latest.bearing), math.sin(latest.bearing), 0.0])
            sub[2] = z
            self.step(sub, yaw_override=self._turn_toward(latest.bearing))
            if self.outcome is not None:
                return False
            ready, d = self.detection_poll()
            if ready:
                if d is None:
                    misses += 1
                    if misses >= patience:
                        break
                else:
                    latest, misses = d, 0
            if (self.ticks - start_tick) * spec.tick > cfg.approach_timeout:
                break
        # halt
        if self._within(self.low.pos):
            self.outcome = Outcome.SUCCESS
            return True
        self.ignore_until[det.target_id] = self.ticks + int(round(cfg.retry_cooldown / spec.tick))
        return False

    def fly(self, plan: WaypointPlan) -> None:
        """Follow the plan until exhausted, stuck, or terminal; may trigger an approach."""
        cfg = self.cfg
        k = 0
        window = max(1, int(round(cfg.stuck_window / self.spec.tick)))
        hist: list[np.ndarray] = []
        while k < plan.K:
            wp = plan.waypoints[k]
            if waypoint_reached(self.low.position, wp, cfg.waypoint_eps, cfg.waypoint_eps_z):
                k += 1
                continue
            self.step(wp)
            if self.outcome is not None:
                return
            if self._check_detection():
                return
            hist.append(self.low.pos)
            if len(hist) > window:
                hist.pop(0)
                if np.linalg.norm(hist[-1] - hist[0]) < cfg.stuck_distance:
                    return

    def look_around(self) -> None:
        n = int(math.ceil(2 * math.pi / (self.cfg.yaw_rate * self.spec.tick)))
        yaw = self.low.yaw
        for _ in range(n):
            yaw = yaw + self.cfg.yaw_rate * self.spec.tick
            self.step(None, yaw_override=math.atan2(math.sin(yaw), math.cos(yaw)))
            if self.outcome is not None or self._check_detection():
                return

    def _check_detection(self) -> bool:
        ready, det = self.detection_poll()
        if ready and det is not None and det.confidence >= self.cfg.detector_threshold:
            self.approach(det)
            return True
        return False


def run_episode(spec: EpisodeSpec, pilot: PilotPolicy, navigator: Callable | None = None,
                detector: Callable | None = None, cfg: EpisodeConfig | None = None,
                max_decisions: int = 10_000) -> EpisodeResult:
    """Simulate one episode to a terminal outcome."""
    cfg = cfg or EpisodeConfig()
    navigator = navigator or ReactiveNavigator(cfg.nav)
    detector = detector or OracleDetector(cfg.sensor)
    sim = _Sim(spec, cfg, navigator, detector)
    world = spec.world
    decisions: list[str] = []
    plans: list[WaypointPlan] = []
    history: list[tuple[float, float, float]] = []
    ortho = empty_orthomap(cfg.map_size, cfg.base_cell)
    last = None
    occ = None
    tau = 0

    if check_collision(world, sim.low):
        sim.outcome, sim.collided = Outcome.COLLISION, "low"
    elif check_collision(world, sim.high):
        sim.outcome, sim.collided = Outcome.COLLISION, "high"
    elif spec.time_limit <= 0:
        sim.outcome = Outcome.TIMEOUT

    while sim.outcome is None and tau < max_decisions:
        tau += 1
        obs, cloud = observe(world, sim.high, cfg.sensor)
        base = ortho if cfg.map_mode == "stitched" else empty_orthomap(cfg.map_size, cfg.base_cell)
        ortho = integrate_observation(base, obs, cloud)
        z_h, z_l = sim.high.position[2], sim.low.position[2]
        depth = global_depth(ortho, z_h)
        occ = occupancy_from_depth(depth, z_h - z_l)
        history.append(sim.high.position)
        try:
            decision = pilot.decide(ortho, depth, history, spec.instruction, occ=occ,
                                    low_position=sim.low.position)
        except DegenerateMapError:
            try:
                decision = _decision(uniform_over_free(occ), history,
                                     getattr(pilot, "step_length", 50.0), fallback=True)
            except DegenerateMapError:
                sim.outcome = Outcome.DEGENERATE_PILOT
                break
        last = decision
        decisions.append(decision.log_line(tau))
        hx, hy, _ = sim.high.position
        sim.high_goal = np.array([hx + decision.high_step * math.cos(decision.high_heading),
                                  hy + decision.high_step * math.sin(decision.high_heading)])
        z_nominal = spec.start_low.position[2]
        gx, gy, _ = map_to_global(*decision.centroid, occ.frame, z_nominal)
        if math.hypot(gx - sim.low.position[0], gy - sim.low.position[1]) <= cfg.arrive_radius:
            sim.look_around()
            continue
        plan = plan_key_waypoints(decision, occ, sim.low.position, z_nominal, cfg,
                                  sim.low.collision_radius, tau)
        plans.append(plan)
        sim.fly(plan)
        if sim.outcome is None and plan.K and waypoint_reached(sim.low.position, plan.waypoints[-1],
                                                               cfg.waypoint_eps, cfg.waypoint_eps_z):
            sim.look_around()

    if sim.outcome is None:
        sim.outcome = Outcome.TIMEOUT
    low = np.array(sim.low_pts)
    high = np.array(sim.high_pts)
    seg = np.linalg.norm(np.diff(low, axis=0), axis=1) if len(low) > 1 else np.zeros(0)
    stop = tuple(float(v) for v in low[-1])
    ne = float(np.linalg.norm(low[-1] - sim.target))
    return EpisodeResult(
        outcome=sim.outcome, low_times=np.array(sim.times), low_traj=low, high_traj=high,
        search_time=sim.ticks * spec.tick, path_length=float(seg.sum()), oracle_hit=bool(sim.oracle_hit),
        stop_point=stop, navigation_error=ne, decision_count=tau, decisions=tuple(decisions),
        plans=tuple(plans), collided=sim.collided, last_decision=last, last_occupancy=occ,
        last_ortho=ortho)


def episode_record(spec: EpisodeSpec, result: EpisodeResult, cfg: EpisodeConfig | None = None,
                   files: dict | None = None, split: str = "all", pilot: str = "") -> dict:
    """One line-delimited record per episode."""
    return {
        "episode_id": spec.episode_id, "spec_hash": spec.digest(cfg), "seed": spec.seed,
        "split": split, "pilot": pilot, "outcome": result.outcome.value,
        "T": result.search_time, "T_star": spec.expert_time, "L": result.path_length,
        "L_star": spec.expert_length, "NE": result.navigation_error, "oracle_hit": result.oracle_hit,
        "stop": list(result.stop_point), "collided": result.collided,
        "decision_count": result.decision_count, "decisions": list(result.decisions),
        "files": dict(files or {}),
    }


# ---------------------------------------------------------------- point-to-point

@dataclass(frozen=True)
class FlightOutcome:
    reached: bool
    collided: bool
    time: float
    path_length: float
    trajectory: np.ndarray


def point_to_point(world: WorldModel, start: Sequence[float], goal: Sequence[float],
                   cfg: EpisodeConfig | None = None, time_limit: float = 300.0, tick: float = 0.1,
                   collision_radius: float = 1.0, survey_altitude: float | None = None,
                   goal_eps: float = 3.0) -> FlightOutcome:
    """Map the whole area from above, plan key waypoints to ``goal`` and fly them.

    Replans from the current position whenever a plan ends short of the goal.
    """
    cfg = cfg or EpisodeConfig()
    xmin, xmax, ymin, ymax, _ = world.bounds
    cx, cy = (xmin + xmax) / 2, (ymin + ymax) / 2
    half = max(xmax - xmin, ymax - ymin) / 2
    z_s = survey_altitude or (half / math.tan(cfg.sensor.bev_fov / 2) + 1.0)
    pose = UAVState((cx, cy, z_s))
    obs, cloud = observe(world, pose, cfg.sensor)
    ortho = integrate_observation(empty_orthomap(cfg.map_size, cfg.base_cell), obs, cloud)
    z_l = float(start[2])
    depth = global_depth(ortho, z_s)
    occ = occupancy_from_depth(depth, z_s - z_l)

    inst = Instruction("__none__")
    spec = EpisodeSpec(world, inst, UAVState(tuple(start), collision_radius=collision_radius),
                       UAVState((start[0], start[1], z_s)), tuple(goal), time_limit=time_limit, tick=tick)
    sim = _Sim(spec, replace(cfg, z_h_min=0.0), ReactiveNavigator(cfg.nav), lambda *a, **k: None)
    sim.high_goal = np.asarray(start[:2], dtype=float)
    goal = np.asarray(goal, dtype=float)
    fi, fj = occ.frame.to_fractional(goal[0], goal[1])
    dec = PilotDecision(ProbabilityMap(np.zeros(occ.frame.shape), occ.frame), 0.0, 0.0,
                        (float(fi) - 0.5, float(fj) - 0.5))
    if check_collision(world, sim.low):
        sim.outcome = Outcome.COLLISION
    reached = False
    for _ in range(50):
        if sim.outcome is not None:
            break
        plan = plan_key_waypoints(dec, occ, sim.low.position, z_l, cfg, collision_radius)
        plan = WaypointPlan(np.vstack([plan.waypoints, goal[None, :]]))
        sim.fly(plan)
        if waypoint_reached(sim.low.position, goal, goal_eps):
            reached = True
            break
    low = np.array(sim.low_pts)
    seg = np.linalg.norm(np.diff(low, axis=0), axis=1) if len(low) > 1 else np.zeros(0)
    return FlightOutcome(reached and sim.outcome is None, sim.outcome is Outcome.COLLISION,
                         sim.time, float(seg.sum()), low)
