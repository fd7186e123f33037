"""Synthetic long-tail driving corpora with planted, labelled events.

Every scenario is built around an analytic road (straight line, circular arc,
or a straight road with an on-ramp). The SDC is driven through the forward
bicycle model by a scripted expert, so extracting actions from its logged
track with the inverse model is exact. Each event kind excites one heuristic
signal: hard brakes the volatility, cut-ins the interaction, near-boundary
drifts the off-road proximity, lane changes the lane deviation and the action
rarity, dense traffic the social density.
"""
import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ACCEL_MIN, DT, YAW_RATE_MAX, Action, KinState, forward_step
from .errors import CuratorIOError, SpecError
from .geometry import box_corners, min_distance_to_polylines, obb_overlap, wrap_angle
from .scenario import (AgentTrack, MapPolyline, Scenario, TrafficLightState, atomic_write_text,
                       dumps_scenario, scenario_filename, validate_scenario)

EVENT_KINDS = ("hard_brake", "cut_in", "near_boundary", "lane_change", "dense_traffic")
ROAD_KINDS = ("straight", "curve", "merge")
LANE_WIDTH = 3.5
EDGE_MARGIN = 2.0
RIGHT_EDGE = -(LANE_WIDTH / 2 + EDGE_MARGIN)
LEFT_EDGE = LANE_WIDTH + LANE_WIDTH / 2 + EDGE_MARGIN
LANE_SEGMENT = 25.0
POINT_SPACING = 0.9
ROUTE_SPACING = 5.0
# reactive braking: keep BRAKE_MARGIN metres of bumper gap to an in-lane leader
# (STOP_MARGIN from the SDC centre to a red stop line), braking BRAKE_GAIN times
# harder than the bare kinematic requirement once that exceeds BRAKE_ON
LEAD_GATE = 2.0
BRAKE_MARGIN = 2.0
STOP_MARGIN = 3.0
BRAKE_GAIN = 2.0
BRAKE_ON = 0.5


@dataclass(frozen=True)
class CorpusSpec:
    num_scenarios: int
    T: int = 91
    seed: int = 0
    event_mix: dict = field(default_factory=dict)
    road_kinds: tuple = ROAD_KINDS
    id_prefix: str = "sc"

    def __post_init__(self):
        if self.num_scenarios < 1:
            raise SpecError("num_scenarios must be at least 1")
        if self.T < 10:
            raise SpecError("T must be at least 10")
        for k, p in self.event_mix.items():
            if k not in EVENT_KINDS:
                raise SpecError(f"unknown event kind {k!r}")
            if not 0.0 <= p <= 1.0:
                raise SpecError(f"probability for {k} must lie in [0, 1]")
        if sum(self.event_mix.values()) > 1.0 + 1e-12:
            raise SpecError("event probabilities sum to more than 1")
        if not self.road_kinds or any(r not in ROAD_KINDS for r in self.road_kinds):
            raise SpecError(f"road_kinds must be a nonempty subset of {ROAD_KINDS}")


@dataclass(frozen=True)
class PlantedEvent:
    kind: str
    scenario_id: str
    t_start: int
    t_end: int


# -- roads -------------------------------------------------------------------

class Road:
    """Reference path with lanes at lateral offsets, placed in the world by a rigid pose.

    Local coordinates are (s, d): arc length along lane 0 and signed lateral
    offset (left positive). Lane 0 is at d = 0, lane 1 at d = LANE_WIDTH.
    """

    def __init__(self, kind, curvature=0.0, origin=(0.0, 0.0), theta=0.0, merge_s=None):
        self.kind = kind
        self.curvature = curvature
        self.origin = np.asarray(origin, dtype=float)
        self.theta = theta
        self.merge_s = merge_s

    def local(self, s, d):
        s, d = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(d, dtype=float))
        k = self.curvature
        if k == 0.0:
            return np.stack([s, d], axis=-1)
        phi = k * s
        return np.stack([np.sin(phi) / k - d * np.sin(phi), (1 - np.cos(phi)) / k + d * np.cos(phi)], axis=-1)

    def point(self, s, d):
        p = self.local(s, d)
        c, sn = np.cos(self.theta), np.sin(self.theta)
        return np.stack([c * p[..., 0] - sn * p[..., 1], sn * p[..., 0] + c * p[..., 1]], axis=-1) + self.origin

    def heading(self, s):
        return wrap_angle(self.curvature * np.asarray(s, dtype=float) + self.theta)

    def project(self, p):
        q = np.asarray(p, dtype=float) - self.origin
        c, sn = np.cos(self.theta), np.sin(self.theta)
        x, y = c * q[..., 0] + sn * q[..., 1], -sn * q[..., 0] + c * q[..., 1]
        k = self.curvature
        if k == 0.0:
            return x, y
        sign = np.sign(k)
        rx, ry = x, y - 1.0 / k
        phi = np.arctan2(sign * rx, -sign * ry)
        return phi / k, 1.0 / k - sign * np.hypot(rx, ry)

    def ramp_offset(self, s):
        """Lateral offset of the on-ramp centerline (merge roads only)."""
        s = np.asarray(s, dtype=float)
        start = self.merge_s - 60.0
        return -LANE_WIDTH * np.clip((self.merge_s - s) / 60.0, 0.0, 1.0) * (s >= start) - LANE_WIDTH * (s < start)

    def _sampled(self, s0, s1, d_fn, reverse=False):
        n = max(2, int(np.ceil((s1 - s0) * (1 + abs(self.curvature) * 8.0) / POINT_SPACING)) + 1)
        s = np.linspace(s0, s1, n)
        pts = self.point(s, d_fn(s))
        return pts[::-1] if reverse else pts

    def polylines(self, s_min, s_max):
        out = []
        for lane_d in (0.0, LANE_WIDTH):
            a = s_min
            while a < s_max - 1e-9:
                b = min(a + LANE_SEGMENT, s_max)
                out.append(MapPolyline("lane_center", self._sampled(a, b, lambda s: np.full_like(s, lane_d))))
                a = b
        if self.kind == "merge":
            a = max(s_min, self.merge_s - 120.0)
            while a < self.merge_s - 1e-9:
                b = min(a + LANE_SEGMENT, self.merge_s)
                out.append(MapPolyline("lane_center", self._sampled(a, b, self.ramp_offset)))
                a = b
            right = lambda s: RIGHT_EDGE + np.where(s < self.merge_s, self.ramp_offset(s), 0.0)
        else:
            right = lambda s: np.full_like(s, RIGHT_EDGE)
        out.append(MapPolyline("road_edge", self._sampled(s_min, s_max, right)))
        out.append(MapPolyline("road_edge", self._sampled(s_min, s_max, lambda s: np.full_like(s, LEFT_EDGE),
                                                          reverse=True)))
        return out


def make_road(kind, rng) -> Road:
    origin = rng.uniform(-500.0, 500.0, size=2)
    theta = rng.uniform(-np.pi, np.pi)
    if kind == "straight":
        return Road("straight", 0.0, origin, theta)
    if kind == "curve":
        radius = rng.uniform(200.0, 500.0)
        return Road("curve", rng.choice([-1.0, 1.0]) / radius, origin, theta)
    if kind == "merge":
        return Road("merge", 0.0, origin, theta, merge_s=rng.uniform(150.0, 200.0))
    raise SpecError(f"unknown road kind {kind!r}")


# -- scripted expert ---------------------------------------------------------

@dataclass
class ExpertPlan:
    """Scripted SDC behaviour: commanded actions and the resulting states."""

    actions: np.ndarray          # (T - 1, 2)
    states: np.ndarray           # (T, 4) x, y, yaw, v
    s: np.ndarray                # (T,) arc length along the road
    nominal_s: np.ndarray        # (T,) arc length had no event happened
    window: tuple = None         # (t_start, t_end) of the planted event
    params: dict = field(default_factory=dict)
    redrive: object = field(default=None, repr=False)   # brake_fn -> (actions, states, s)


def _raised_cosine(t, t0, duration):
    tau = np.clip((np.asarray(t, dtype=float) - t0) / duration, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * tau))


def _bump(t, t0, duration):
    tau = np.clip((np.asarray(t, dtype=float) - t0) / duration, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * tau))


def lookahead(v):
    return float(np.clip(1.2 * v, 8.0, 20.0))


def drive(road, T, v0, accel_fn, offset_fn, s0=0.0, dt=DT, start_error=(0.0, 0.0), steer=True, yaw_ff=None,
          brake_fn=None):
    """Drive the SDC with the forward model.

    accel_fn(i, v) gives the commanded acceleration at step i; offset_fn(t)
    gives the target lateral offset at (possibly fractional) timestep t. The
    yaw rate is a pure-pursuit command toward a point one lookahead distance
    ahead on the target path, so an initial (lateral, heading) error given by
    `start_error` decays smoothly back onto the path. While yaw_ff(i, v)
    returns a value, that open-loop yaw rate (plus the road curvature term)
    replaces the pursuit command. brake_fn(i, state), when given, caps the
    acceleration.
    """
    d0, psi0 = start_error
    p0 = road.point(s0, offset_fn(0) + d0)
    state = KinState(float(p0[0]), float(p0[1]), float(wrap_angle(road.heading(s0) + psi0)), float(v0))
    states, actions = [state], []
    limit = 0.95 * YAW_RATE_MAX
    for i in range(T - 1):
        accel = accel_fn(i, state.v)
        if brake_fn is not None:
            cap = brake_fn(i, state)
            if cap is not None:
                accel = min(accel, cap)
        accel = float(np.clip(accel, ACCEL_MIN, 8.0))
        if state.v + accel * dt < 0.0:
            accel = -state.v / dt
        yaw_rate = 0.0
        ff = yaw_ff(i, state.v) if yaw_ff is not None else None
        if ff is not None:
            yaw_rate = float(np.clip(ff + state.v * road.curvature, -limit, limit))
        elif steer and state.v > 0.0:
            s_now, _ = road.project(np.array([state.x, state.y]))
            ld = lookahead(state.v)
            target = road.point(float(s_now) + ld, offset_fn(i + ld / (state.v * dt)))
            dx, dy = target[0] - state.x, target[1] - state.y
            alpha = wrap_angle(np.arctan2(dy, dx) - state.yaw)
            yaw_rate = float(np.clip(2.0 * state.v * np.sin(alpha) / np.hypot(dx, dy), -limit, limit))
        action = Action(accel, yaw_rate)
        state = forward_step(state, action, dt)
        states.append(state)
        actions.append((accel, yaw_rate))
    arr = np.array([[s.x, s.y, s.yaw, s.v] for s in states])
    s_arr, _ = road.project(arr[:, :2])
    return np.array(actions).reshape(-1, 2), arr, np.asarray(s_arr)


def _nominal_accel(rng):
    amp = rng.uniform(0.0, 0.3)
    omega = rng.uniform(0.3, 1.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    return lambda i: amp * np.sin(omega * i * DT + phase)


def script_expert(kind, road, rng, T=91, sdc_size=(4.8, 2.0)) -> ExpertPlan:
    """Scripted SDC plan for an event kind.

    None gives nominal driving, "cruise" a constant-speed run with zero
    steering (exactly zero actions on a straight road).

    `road` is a Road or a road kind name. Actions stay inside the action
    space. Event magnitudes are drawn so that the targeted normalized score
    lands in roughly [0.7, 1.0].
    """
    if isinstance(road, str):
        road = make_road(road, rng)
    length, width = sdc_size
    if kind == "cruise":
        v0 = rng.uniform(10.0, 15.0)
        acts, states, s = drive(road, T, v0, lambda i, v: 0.0, lambda i: 0.0, steer=False)
        return ExpertPlan(acts, states, s, s.copy())

    nominal = _nominal_accel(rng)
    v0 = rng.uniform(10.0, 15.0)
    zero = lambda i: 0.0
    # every drive starts slightly off the lane so the log shows recoveries
    error = (rng.uniform(-0.45, 0.45), rng.uniform(-0.03, 0.03))

    def go(accel_fn, offset_fn, yaw_ff=None):
        controls["redrive"] = lambda brake_fn: drive(road, T, v0, accel_fn, offset_fn, start_error=error,
                                                     yaw_ff=yaw_ff, brake_fn=brake_fn)
        return drive(road, T, v0, accel_fn, offset_fn, start_error=error, yaw_ff=yaw_ff)

    controls = {}

    _, _, nominal_s = go(lambda i, v: nominal(i), zero)

    if kind is None or kind == "dense_traffic":
        acts, states, s = go(lambda i, v: nominal(i), zero)
        window = (0, T - 1) if kind else None
        return ExpertPlan(acts, states, s, nominal_s, window, redrive=controls["redrive"])

    if kind == "hard_brake":
        # the braking itself comes from the reactive law once a leader or a
        # red light appears at t_b; see build_scenario
        t_b = int(rng.integers(int(0.33 * T), int(0.55 * T)))
        decel = rng.uniform(6.0, 9.0)
        acts, states, s = go(lambda i, v: nominal(i), zero)
        return ExpertPlan(acts, states, s, nominal_s, (t_b, T - 1), {"decel": decel},
                          redrive=controls["redrive"])

    if kind == "cut_in":
        t_c = int(rng.integers(int(0.38 * T), int(0.55 * T)))
        dv = rng.uniform(6.0, 9.0)
        decel = rng.uniform(5.0, 8.0)
        acts, states, s = go(lambda i, v: nominal(i), zero)
        return ExpertPlan(acts, states, s, nominal_s, (max(0, t_c - 5), T - 1),
                          {"dv": dv, "decel": decel, "t_c": t_c}, redrive=controls["redrive"])

    if kind == "lane_change":
        # one sine period of yaw rate shifts the car sideways by v * A * D^2 / (2 pi)
        t0 = int(rng.integers(int(0.2 * T), int(0.5 * T)))
        n = int(round(rng.uniform(2.0, 3.0) / DT))
        box = {}

        def yaw_ff(i, v):
            if not t0 <= i < t0 + n:
                return None
            if "amp" not in box:
                box["amp"] = 2 * np.pi * LANE_WIDTH / (max(v, 1.0) * (n * DT) ** 2)
            return box["amp"] * np.sin(2 * np.pi * (i - t0 + 0.5) / n)

        offset = lambda i: LANE_WIDTH * (i >= t0 + n)
        acts, states, s = go(lambda i, v: nominal(i), offset, yaw_ff)
        return ExpertPlan(acts, states, s, nominal_s, (t0, min(t0 + n, T - 1)), {"target": 1},
                          redrive=controls["redrive"])

    if kind == "near_boundary":
        t0 = int(rng.integers(int(0.2 * T), int(0.5 * T)))
        duration = rng.uniform(3.0, 4.0) / DT
        target_gap = rng.uniform(0.1, 0.6)
        depth = -RIGHT_EDGE - width / 2 - target_gap
        edge = road.polylines(-10.0, 300.0)[-2].points
        for _ in range(4):
            offset = (lambda dep: lambda i: -dep * _bump(i, t0, duration))(depth)
            acts, states, s = go(lambda i, v: nominal(i), offset)
            corners = box_corners(states[:, 0], states[:, 1], states[:, 2], length, width).reshape(-1, 2)
            gap = min_distance_to_polylines(corners, [edge]).min()
            depth += gap - target_gap
        return ExpertPlan(acts, states, s, nominal_s, (t0, min(int(t0 + duration), T - 1)),
                          {"target_gap": target_gap}, redrive=controls["redrive"])

    if kind == "dense_traffic":
        acts, states, s = go(lambda i, v: nominal(i), zero)
        return ExpertPlan(acts, states, s, nominal_s, (0, T - 1))

    raise SpecError(f"unknown event kind {kind!r}")


# -- background agents -------------------------------------------------------

def _path_track(road, s, d, length, width, agent_type="vehicle", valid=None, dt=DT):
    pos = road.point(s, d)
    vel = np.gradient(pos, dt, axis=0)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    yaw = np.where(speed > 0.1, np.arctan2(vel[:, 1], vel[:, 0]), road.heading(s))
    valid = np.ones(len(s), dtype=bool) if valid is None else valid
    return AgentTrack(agent_type, float(length), float(width), valid,
                      pos[:, 0], pos[:, 1], wrap_angle(yaw), vel[:, 0], vel[:, 1])


def _vehicle_size(rng):
    return rng.uniform(4.2, 5.2), rng.uniform(1.8, 2.1)


def _follower_s(base_s, offset, drift, T):
    return base_s + offset + drift * np.arange(T) * DT


def _background(road, plan, rng, T, kind, n):
    """Vehicles moving with the SDC's nominal progress plus a small drift,
    so relative speeds and convergence risks stay low."""
    agents = []
    lane0 = kind not in ("hard_brake", "cut_in")
    lane1_far = kind == "lane_change"
    for _ in range(n):
        length, width = _vehicle_size(rng)
        if lane0 and rng.random() < 0.4:
            if rng.random() < 0.5:
                offset, drift = rng.uniform(25.0, 50.0), rng.uniform(0.0, 0.5)
            else:
                offset, drift = -rng.uniform(20.0, 40.0), -rng.uniform(0.0, 0.5)
            d = 0.0
        else:
            lo = 45.0 if lane1_far else 8.0
            offset = rng.choice([-1.0, 1.0]) * rng.uniform(lo, lo + 35.0)
            drift = rng.uniform(-1.0, 1.0) * (0.3 if lane1_far else 1.0)
            d = LANE_WIDTH
        s = _follower_s(plan.nominal_s, offset, drift, T)
        agents.append(_path_track(road, s, np.full(T, d), length, width))
    return agents


def _event_agents(road, plan, rng, T, kind, sdc_length):
    agents, lights = [], None
    if kind == "cut_in":
        t_c, dv, decel = plan.params["t_c"], plan.params["dv"], plan.params["decel"]
        length, width = _vehicle_size(rng)
        v_c = max(2.0, plan.states[t_c, 3] - dv)
        gap = (sdc_length + length) / 2 + dv ** 2 / (2 * decel) + rng.uniform(5.0, 8.0)
        t = np.arange(T)
        s = plan.s[t_c] + gap + v_c * (t - t_c) * DT
        d = LANE_WIDTH * (1.0 - _raised_cosine(t, t_c - 5, 15))
        agents.append(_path_track(road, s, d, length, width))
    elif kind == "hard_brake":
        t_b, decel = plan.window[0], plan.params["decel"]
        if road.kind == "straight" and rng.random() < 0.5:
            # far enough that the law's first command equals the drawn deceleration
            v_b = plan.states[t_b, 3]
            stop_s = plan.s[t_b] + STOP_MARGIN + BRAKE_GAIN * v_b ** 2 / (2 * decel)
            line = tuple(float(v) for v in road.point(stop_s, 0.0))
            lights = [[TrafficLightState(line, "red" if t >= t_b else "green")] for t in range(T)]
            plan.params["cause"] = "red_light"
        else:
            length, width = _vehicle_size(rng)
            t_l = t_b - 1
            v_l = plan.states[t_l, 3]
            gap = (sdc_length + length) / 2 + rng.uniform(14.0, 22.0)
            s = np.empty(T)
            s[t_l] = plan.s[t_l] + gap
            s[:t_l] = s[t_l] - v_l * DT * np.arange(t_l, 0, -1)
            v = v_l
            for t in range(t_l + 1, T):
                s[t] = s[t - 1] + v * DT
                v = max(0.0, v - decel * DT)
            agents.append(_path_track(road, s, np.zeros(T), length, width))
            plan.params["cause"] = "lead_vehicle"
    elif kind == "dense_traffic":
        n_total = int(rng.integers(15, 21))
        slots = [(0.0, o) for o in (-36.0, -24.0, 14.0, 26.0, 38.0, 50.0)]
        slots += [(LANE_WIDTH, o) for o in np.arange(-48.0, 61.0, 12.0)]
        order = rng.permutation(len(slots))[: n_total - 1]
        for k in order:
            d, offset = slots[k]
            length, width = _vehicle_size(rng)
            offset += rng.uniform(-1.0, 1.0)
            drift = rng.uniform(-0.2, 0.2)
            s = _follower_s(plan.nominal_s, offset, drift, T)
            agents.append(_path_track(road, s, np.full(T, d), length, width))
    return agents, lights


def brake_law(road, agents, lights, sdc_length):
    """The expert's reactive braking as brake_fn(i, state) for drive().

    Leaders are agents ahead within LEAD_GATE of the SDC's lateral road
    offset; red stop lines count when the SDC is on the carriageway.
    """
    tracks = []
    for a in agents:
        s_a, d_a = road.project(np.stack([a.x, a.y], axis=1))
        h = road.heading(s_a)
        v_a = a.vx * np.cos(h) + a.vy * np.sin(h)
        tracks.append((np.asarray(s_a), np.asarray(d_a), v_a, a.valid, (sdc_length + a.length) / 2))
    reds = []
    for step in lights or []:
        lines = [l.stop_line for l in step if l.state == "red"]
        reds.append(np.asarray(road.project(np.array(lines, dtype=float))[0]) if lines else None)

    def brake_fn(i, state):
        s0, d0 = road.project(np.array([state.x, state.y]))
        v = state.v * np.cos(state.yaw - road.heading(s0))
        need = 0.0
        for s_a, d_a, v_a, valid, half in tracks:
            if valid[i] and abs(d_a[i] - d0) < LEAD_GATE and s_a[i] > s0:
                closing = v - v_a[i]
                if closing > 0:
                    room = max(s_a[i] - s0 - half - BRAKE_MARGIN, 0.1)
                    need = max(need, closing ** 2 / (2 * room))
        if reds and reds[i] is not None and abs(d0) < LANE_WIDTH and v > 0:
            ahead = reds[i] - s0
            ahead = ahead[(ahead > 0) & (ahead <= 50.0)]
            if len(ahead):
                need = max(need, v ** 2 / (2 * max(ahead.min() - STOP_MARGIN, 0.1)))
        return -BRAKE_GAIN * need if BRAKE_GAIN * need > BRAKE_ON else None

    return brake_fn


def _collides(sdc, other):
    a = box_corners(sdc.x, sdc.y, sdc.yaw, sdc.length * 1.05, sdc.width * 1.1)
    b = box_corners(other.x, other.y, other.yaw, other.length * 1.05, other.width * 1.1)
    both = sdc.valid & other.valid
    return bool((obb_overlap(a, b) & both).any())


def _route(states):
    pts = states[:, :2]
    step = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(step)])
    marks = np.arange(0.0, cum[-1], ROUTE_SPACING)
    idx = np.searchsorted(cum, marks)
    route = [pts[i] for i in idx]
    if np.hypot(*(route[-1] - pts[-1])) > 1e-9:
        route.append(pts[-1])
    return np.array(route)


def _sdc_track(states, length, width):
    T = len(states)
    return AgentTrack("vehicle", float(length), float(width), np.ones(T, dtype=bool),
                      states[:, 0], states[:, 1], states[:, 2],
                      states[:, 3] * np.cos(states[:, 2]), states[:, 3] * np.sin(states[:, 2]))


def _close_window(plan, kind, T):
    """End braking events where the reactive braking stops."""
    if kind not in ("hard_brake", "cut_in"):
        return
    t0 = plan.window[0]
    braking = np.flatnonzero(plan.actions[t0:, 0] < -BRAKE_ON)
    stopped = np.flatnonzero(plan.states[t0:, 3] <= 0.0)
    end = t0 + int(braking[-1]) + 1 if len(braking) else t0
    if len(stopped):
        end = min(end, t0 + int(stopped[0]))
    plan.window = (t0, min(end, T - 1))


def build_scenario(scenario_id, kind, rng, T=91, road_kinds=ROAD_KINDS):
    """One scenario plus its planted event (None for nominal)."""
    road_kind = road_kinds[int(rng.integers(len(road_kinds)))]
    if kind == "near_boundary" and road_kind == "merge":
        # the ramp widens the right shoulder; drift toward a plain edge instead
        road_kind = "straight"
    road = make_road(road_kind, rng)
    length, width = rng.uniform(4.5, 5.0), rng.uniform(1.9, 2.0)
    plan = script_expert(None if kind is None else kind, road, rng, T, (length, width))

    event_agents, lights = _event_agents(road, plan, rng, T, kind, length)
    n_bg = int(rng.integers(2, 8))
    background = [] if kind == "dense_traffic" else _background(road, plan, rng, T, kind, n_bg)
    # the expert reacts to whatever it sees; agents it would still hit are
    # dropped and the drive is repeated until the scene is collision-free
    for _ in range(6):
        plan.actions, plan.states, plan.s = plan.redrive(brake_law(road, event_agents + background, lights,
                                                                   length))
        sdc = _sdc_track(plan.states, length, width)
        kept = [a for a in background if not _collides(sdc, a)]
        if len(kept) == len(background):
            break
        background = kept
    others = event_agents + background
    states = plan.states
    _close_window(plan, kind, T)

    if lights is None:
        if road_kind == "straight" and rng.random() < 0.5:
            line = tuple(float(v) for v in road.point(rng.uniform(30.0, 120.0), 0.0))
            lights = [[TrafficLightState(line, "green")] for _ in range(T)]
        else:
            lights = [[] for _ in range(T)]

    s_min = float(min(plan.s.min(), plan.nominal_s.min())) - 60.0
    s_max = float(max(plan.s.max(), plan.nominal_s.max())) + 110.0
    scenario = Scenario(
        id=scenario_id, dt=DT, num_timesteps=T, sdc_index=0,
        agents=[sdc] + others, map=road.polylines(s_min, s_max),
        traffic_lights=lights, route=_route(states),
    )
    validate_scenario(scenario)
    event = None
    if kind is not None:
        event = PlantedEvent(kind, scenario_id, int(plan.window[0]), int(plan.window[1]))
    return scenario, event


def ambiguous_scenario(scenario_id, sign, rng, T=91, accel=3.0):
    """A roadside pedestrian the expert reacts to by speeding up (sign=+1)
    or slowing down (sign=-1). Scenes of both signs share one feature
    distribution, so the action is not predictable from the state. The
    route follows the lane regardless of the sign."""
    road = make_road("straight", rng)
    length, width = 4.8, 2.0
    v0 = rng.uniform(9.0, 13.0)
    ped_s = rng.uniform(45.0, 65.0)
    reach = 30.0

    p0 = road.point(0.0, 0.0)
    state = KinState(float(p0[0]), float(p0[1]), float(road.heading(0.0)), float(v0))
    states, actions = [state], []
    for i in range(T - 1):
        progress = float(road.project(np.array([state.x, state.y]))[0])
        near = state.v > 0 and 0.0 < ped_s - progress <= reach
        a = sign * accel if near else 0.0
        if state.v + a * DT < 0:
            a = -state.v / DT
        state = forward_step(state, Action(a, 0.0))
        states.append(state)
        actions.append((a, 0.0))
    st = np.array([[s.x, s.y, s.yaw, s.v] for s in states])
    s_arr = np.asarray(road.project(st[:, :2])[0])
    sdc = AgentTrack("vehicle", length, width, np.ones(T, dtype=bool), st[:, 0], st[:, 1], st[:, 2],
                     st[:, 3] * np.cos(st[:, 2]), st[:, 3] * np.sin(st[:, 2]))
    ped = _path_track(road, np.full(T, ped_s), np.full(T, RIGHT_EDGE - 1.5), 0.6, 0.6, "pedestrian")
    active = np.flatnonzero(np.array([a for a, _ in actions]) != 0.0)
    window = (int(active[0]), int(active[-1])) if len(active) else (0, 0)
    scenario = Scenario(
        id=scenario_id, dt=DT, num_timesteps=T, sdc_index=0, agents=[sdc, ped],
        map=road.polylines(float(s_arr.min()) - 60.0, float(s_arr.max()) + 110.0),
        traffic_lights=[[] for _ in range(T)],
        route=road.point(np.arange(0.0, 150.0 + 1e-9, ROUTE_SPACING), 0.0),
    )
    validate_scenario(scenario)
    return scenario, window


# -- corpus ------------------------------------------------------------------

def scenario_seed(seed, index):
    return np.random.SeedSequence([int(seed), int(index)])


def assign_events(spec: CorpusSpec):
    """Exactly round(p * N) scenarios per kind (largest remainder), placed by a
    seeded permutation; the rest are nominal."""
    n = spec.num_scenarios
    kinds = sorted(spec.event_mix)
    raw = np.array([spec.event_mix[k] * n for k in kinds])
    counts = np.floor(raw + 1e-9).astype(int)
    budget = min(n, int(round(sum(raw))))
    for k in np.argsort(-(raw - counts), kind="stable"):
        if counts.sum() >= budget:
            break
        if raw[k] - counts[k] > 1e-9:
            counts[k] += 1
    labels = [None] * n
    order = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 2**31 - 1])).permutation(n)
    pos = 0
    for k, c in zip(kinds, counts):
        for i in order[pos:pos + c]:
            labels[i] = k
        pos += c
    return labels


def scenario_id_for(spec, index):
    return f"{spec.id_prefix}-{index:05d}"


def _generate_one(args):
    spec, index, kind, out_dir = args
    rng = np.random.default_rng(scenario_seed(spec.seed, index))
    sid = scenario_id_for(spec, index)
    scenario, event = build_scenario(sid, kind, rng, spec.T, tuple(spec.road_kinds))
    if out_dir is not None:
        atomic_write_text(Path(out_dir) / scenario_filename(sid), dumps_scenario(scenario))
        return None, event
    return scenario, event


def generate_scenarios(spec: CorpusSpec, workers=1):
    """In-memory corpus: (scenarios, planted events)."""
    labels = assign_events(spec)
    jobs = [(spec, i, labels[i], None) for i in range(spec.num_scenarios)]
    results = _map(_generate_one, jobs, workers)
    return [r[0] for r in results], [r[1] for r in results if r[1] is not None]


def generate_corpus(spec: CorpusSpec, out_dir, workers=1):
    """Write the corpus and its event ledger; returns the planted events."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CuratorIOError(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CuratorIOError(f"{out} is not writable")
    labels = assign_events(spec)
    jobs = [(spec, i, labels[i], str(out)) for i in range(spec.num_scenarios)]
    events = [r[1] for r in _map(_generate_one, jobs, workers) if r[1] is not None]
    atomic_write_text(out / "events.csv", events_to_csv(events))
    return events


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def events_to_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "kind", "t_start", "t_end"])
    for e in sorted(events, key=lambda e: e.scenario_id):
        w.writerow([e.scenario_id, e.kind, e.t_start, e.t_end])
    return buf.getvalue()


def events_from_csv(text: str):
    return [PlantedEvent(r["kind"], r["scenario_id"], int(r["t_start"]), int(r["t_end"]))
            for r in csv.DictReader(io.StringIO(text))]
