"""Reward, closed-loop rollouts with log replay, and the evaluation metric suite."""
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import Action, KinState, clip_action, forward_step, kinematic_chain
from .errors import EmptyInput, PolicyError
from .features import EgoFrame, FeatureConfig, extract_state, flatten, sdc_state, to_ego
from .geometry import (box_corners, box_gap, min_distance_to_polylines, obb_overlap, polyline_segments,
                       segment_distances)
from .scouts import denormalize_actions, expert_actions, predict

SAFETY_MARGIN = 2.0
LAT_ACCEL_NORM = 3.0
JERK_NORM = 8.0
MOVING_SPEED = 0.5
SUCCESS_RADIUS = 3.0
STOP_LINE_BAND = 2.0


@dataclass(frozen=True)
class RewardWeights:
    progress: float = 1.0
    safety: float = -1.0
    accel_comfort: float = -0.1
    jerk_comfort: float = -0.2
    lane: float = -0.5
    red_light: float = -5.0

    def __post_init__(self):
        if self.progress < 0:
            raise ValueError("progress weight must be nonnegative")
        for name in ("safety", "accel_comfort", "jerk_comfort", "lane", "red_light"):
            if getattr(self, name) > 0:
                raise ValueError(f"{name} weight must be nonpositive")


METRIC_NAMES = ("collision_rate", "offroad_rate", "success_rate", "red_light_violation_rate",
                "progression_m", "dist_to_goal_m", "route_adherence_m", "max_jerk", "max_lat_accel")


@dataclass
class EvalMetrics:
    collision_rate: float
    offroad_rate: float
    success_rate: float
    red_light_violation_rate: float
    progression_m: float
    dist_to_goal_m: float
    route_adherence_m: float
    max_jerk: float
    max_lat_accel: float
    num_scenarios: int = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in METRIC_NAMES}


# -- reward ------------------------------------------------------------------

def safety_penalty(gap, margin=SAFETY_MARGIN):
    """Quadratic growth as the box gap falls below the margin; 1 at contact."""
    g = np.maximum(np.asarray(gap, dtype=float), 0.0)
    return np.maximum(0.0, (margin - g) / margin) ** 2


def min_box_gap(s, t, ego: KinState):
    arr = s.arrays
    others = np.flatnonzero(arr["valid"][:, t] & (np.arange(len(s.agents)) != s.sdc_index))
    if not len(others):
        return math.inf
    sdc = s.sdc
    cb = np.stack([arr["x"][others, t], arr["y"][others, t]], axis=1)
    gaps = box_gap(np.array([ego.x, ego.y]), ego.yaw, sdc.length, sdc.width,
                   cb, arr["yaw"][others, t], arr["length"][others], arr["width"][others])
    return float(gaps.min())


def _red_stop_lines(s, t):
    return [l.stop_line for l in s.traffic_lights[t] if l.state == "red"]


def compute_reward(s, t, state: KinState, action: Action, next_state: KinState,
                   w: RewardWeights = RewardWeights(), prev_accel=None):
    """Reward of taking `action` in `state` at time t, landing in `next_state`.

    Position-dependent terms are evaluated at the landing state against the
    logged scene at t + 1. Jerk uses the previous acceleration when given.
    """
    t1 = min(t + 1, s.num_timesteps - 1)
    p = np.array([next_state.x, next_state.y])
    to_goal = np.asarray(s.route[-1], dtype=float) - p
    dist = float(np.hypot(*to_goal))
    vel = next_state.v * np.array([math.cos(next_state.yaw), math.sin(next_state.yaw)])
    progress = float(vel @ to_goal) / dist if dist > 0 else 0.0

    safety = float(safety_penalty(min_box_gap(s, t1, next_state)))
    a_lat = state.v * action.yaw_rate
    comfort_a = min(1.0, (a_lat / LAT_ACCEL_NORM) ** 2)
    jerk = 0.0 if prev_accel is None else (action.accel - prev_accel) / s.dt
    comfort_j = min(1.0, (abs(jerk) / JERK_NORM) ** 2)

    lanes = s.polylines("lane_center")
    d_lane = float(min_distance_to_polylines(p, lanes)[0]) if lanes else 0.0

    red = 0.0
    lines = _red_stop_lines(s, t1)
    if lines and next_state.v > MOVING_SPEED:
        d_stop = np.hypot(*(np.asarray(lines, dtype=float) - p).T).min()
        red = float(d_stop <= STOP_LINE_BAND)

    return (w.progress * progress + w.safety * safety + w.accel_comfort * comfort_a
            + w.jerk_comfort * comfort_j + w.lane * d_lane + w.red_light * red)


# -- policies ----------------------------------------------------------------

class Policy:
    """Maps an observation to an action. `reset` is called once per scenario."""

    def reset(self, scenario):
        pass

    def act(self, features, t):
        raise NotImplementedError

    def __call__(self, features, t=0):
        return self.act(features, t)


class FunctionPolicy(Policy):
    def __init__(self, fn):
        self.fn = fn

    def act(self, features, t):
        return self.fn(features)


class ConstantPolicy(Policy):
    def __init__(self, accel, yaw_rate=0.0):
        self.action = Action(float(accel), float(yaw_rate))

    def act(self, features, t):
        return self.action


class ExpertReplayPolicy(Policy):
    """Replays the inverse-extracted expert actions of the current scenario."""

    def reset(self, scenario):
        self.actions, _ = expert_actions(scenario)

    def act(self, features, t):
        a = self.actions[min(t, len(self.actions) - 1)]
        return Action(float(a[0]), float(a[1]))


class ModelPolicy(Policy):
    """Wraps a regressor that emits normalized actions."""

    def __init__(self, model):
        self.model = model

    def act(self, features, t):
        y = predict(self.model, flatten(features))
        a = denormalize_actions(y)
        return Action(float(a[0]), float(a[1]))


def as_policy(pi):
    return pi if isinstance(pi, Policy) else FunctionPolicy(pi)


# -- rollout -----------------------------------------------------------------

@dataclass
class Rollout:
    states: np.ndarray      # (H + 1, 4) x, y, yaw, v
    actions: np.ndarray     # (H, 2)
    rewards: np.ndarray     # (H,)
    collided: np.ndarray    # (H + 1,) per-step overlap with any valid agent
    offroad: np.ndarray     # (H + 1,)
    red_violation: np.ndarray


def collision_check(sdc_box, other_boxes):
    """True iff the SDC rectangle overlaps any other rectangle (corner arrays)."""
    others = np.asarray(other_boxes, dtype=float).reshape(-1, 4, 2)
    if not len(others):
        return False
    return bool(obb_overlap(np.asarray(sdc_box, dtype=float)[None], others).any())


def _edge_cache(s):
    if "edges" not in s._memo:
        s._memo["edges"] = polyline_segments(s.polylines("road_edge"))
    return s._memo["edges"]


def offroad_check(s, corners):
    """True when any corner lies right of its nearest road-edge segment
    (edges keep the drivable area on their left)."""
    starts, ends, _ = _edge_cache(s)
    if not len(starts):
        return False
    pts = np.asarray(corners, dtype=float).reshape(-1, 2)
    nearest = segment_distances(pts, starts, ends).argmin(axis=1)
    d = ends[nearest] - starts[nearest]
    r = pts - starts[nearest]
    return bool((d[:, 0] * r[:, 1] - d[:, 1] * r[:, 0] < 0).any())


def _step_flags(s, t, st: KinState):
    sdc = s.sdc
    box = box_corners(st.x, st.y, st.yaw, sdc.length, sdc.width)
    arr = s.arrays
    others = np.flatnonzero(arr["valid"][:, t] & (np.arange(len(s.agents)) != s.sdc_index))
    other_boxes = box_corners(arr["x"][others, t], arr["y"][others, t], arr["yaw"][others, t],
                              arr["length"][others], arr["width"][others])
    collided = collision_check(box, other_boxes)
    off = offroad_check(s, box)
    red = False
    lines = _red_stop_lines(s, t)
    if lines and st.v > MOVING_SPEED:
        e = to_ego(EgoFrame((st.x, st.y), st.yaw), np.asarray(lines, dtype=float))
        red = bool(((np.abs(e[:, 0]) <= STOP_LINE_BAND) & (np.abs(e[:, 1]) < 3.0)).any())
    return collided, off, red


def rollout(s, pi, horizon=None, cfg: FeatureConfig = FeatureConfig(), w: RewardWeights = RewardWeights()):
    """Simulate the SDC under `pi` from its logged initial state; everything
    else replays the log."""
    pi = as_policy(pi)
    T = s.num_timesteps
    horizon = T - 1 if horizon is None else horizon
    if not 0 <= horizon <= T - 1:
        raise ValueError(f"horizon must lie in [0, {T - 1}]")
    pi.reset(s)
    st = sdc_state(s, 0)
    states, actions, rewards = [st], [], []
    flags = [_step_flags(s, 0, st)]
    prev = None
    for t in range(horizon):
        a = pi.act(extract_state(s, t, cfg, ego=st), t)
        if not (math.isfinite(a.accel) and math.isfinite(a.yaw_rate)):
            raise PolicyError(f"policy returned a non-finite action at t={t}")
        a = Action(*clip_action(a.accel, a.yaw_rate))
        nxt = forward_step(st, a, s.dt)
        rewards.append(compute_reward(s, t, st, a, nxt, w, prev))
        prev = a.accel
        actions.append((a.accel, a.yaw_rate))
        st = nxt
        states.append(st)
        flags.append(_step_flags(s, t + 1, st))
    fl = np.array(flags, dtype=bool).reshape(-1, 3)
    return Rollout(
        states=np.array([[q.x, q.y, q.yaw, q.v] for q in states]),
        actions=np.array(actions).reshape(-1, 2), rewards=np.array(rewards),
        collided=fl[:, 0], offroad=fl[:, 1], red_violation=fl[:, 2],
    )


# -- metrics -----------------------------------------------------------------

def scenario_metrics(s, r: Rollout):
    goal = np.asarray(s.route[-1], dtype=float)
    pos = r.states[:, :2]
    to_goal = np.hypot(*(pos - goal).T)
    collided, off = bool(r.collided[1:].any()), bool(r.offroad[1:].any())
    chain = kinematic_chain(r.states[:, 3], r.states[:, 2], s.dt)
    jerk = np.abs(chain.jerk[~np.isnan(chain.jerk)])
    lat = np.abs(r.states[:-1, 3] * r.actions[:, 1]) if len(r.actions) else np.zeros(0)
    route = np.asarray(s.route, dtype=float)
    if len(route) > 1:
        adherence = float(min_distance_to_polylines(pos, [route]).mean())
    else:
        adherence = float(np.hypot(*(pos - route[0]).T).mean())
    return {
        "collision_rate": float(collided),
        "offroad_rate": float(off),
        "success_rate": float(bool((to_goal <= SUCCESS_RADIUS).any()) and not collided and not off),
        "red_light_violation_rate": float(r.red_violation[1:].any()),
        "progression_m": float(np.hypot(*np.diff(pos, axis=0).T).sum()),
        "dist_to_goal_m": float(to_goal[-1]),
        "route_adherence_m": adherence,
        "max_jerk": float(jerk.max()) if len(jerk) else 0.0,
        "max_lat_accel": float(lat.max()) if len(lat) else 0.0,
    }


def aggregate_metrics(rows) -> EvalMetrics:
    if not rows:
        raise EmptyInput("no scenarios evaluated")
    return EvalMetrics(**{k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES},
                       num_scenarios=len(rows))


def _evaluate_one(args):
    s, pi, cfg = args
    return scenario_metrics(s, rollout(s, pi, cfg=cfg))


def evaluate_scenarios(scenarios, pi, cfg: FeatureConfig = FeatureConfig(), workers=1):
    """Per-scenario metric rows, in the order given."""
    jobs = [(s, pi, cfg) for s in scenarios]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("fork")) as pool:
            return list(pool.map(_evaluate_one, jobs))
    return [_evaluate_one(j) for j in jobs]


def evaluate(scenarios, pi, cfg: FeatureConfig = FeatureConfig(), workers=1) -> EvalMetrics:
    return aggregate_metrics(evaluate_scenarios(list(scenarios), pi, cfg, workers))
