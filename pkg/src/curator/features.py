"""Ego-centric structured state and its flat vector layout."""
from dataclasses import dataclass

import numpy as np

from .dynamics import KinState
from .errors import InvalidTimestep
from .geometry import (distance_to_each_polyline, polyline_segments, project_onto_polyline,
                       resample_polyline, rotate)

AGENT_FEATURES = 10


@dataclass(frozen=True)
class FeatureConfig:
    num_agents: int = 16
    num_map_polylines: int = 64
    map_points_per_polyline: int = 10
    num_goal_points: int = 5
    tl_lookahead_m: float = 50.0
    tl_lateral_gate_m: float = 3.0

    @property
    def flat_dim(self):
        n, m, p, g = self.num_agents, self.num_map_polylines, self.map_points_per_polyline, self.num_goal_points
        return 1 + AGENT_FEATURES * n + 2 * p * m + 2 + 2 * g


@dataclass(frozen=True)
class EgoFrame:
    origin: tuple
    yaw: float


@dataclass
class StateFeatures:
    ego: np.ndarray
    agents: np.ndarray
    agents_mask: np.ndarray
    map: np.ndarray
    map_mask: np.ndarray
    traffic_lights: np.ndarray
    goal: np.ndarray


def to_ego(frame: EgoFrame, p_world):
    p = np.asarray(p_world, dtype=float) - np.asarray(frame.origin, dtype=float)
    return rotate(p, -frame.yaw)


def from_ego(frame: EgoFrame, p_ego):
    return rotate(p_ego, frame.yaw) + np.asarray(frame.origin, dtype=float)


def _lane_cache(s, cfg):
    key = ("lanes", cfg.map_points_per_polyline)
    if key not in s._memo:
        lanes = s.polylines("lane_center")
        starts, ends, owner = polyline_segments(lanes)
        resampled = (np.stack([resample_polyline(p, cfg.map_points_per_polyline) for p in lanes])
                     if lanes else np.zeros((0, cfg.map_points_per_polyline, 2)))
        s._memo[key] = (starts, ends, owner, resampled)
    return s._memo[key]


def sdc_state(s, t) -> KinState:
    a = s.sdc
    return KinState(float(a.x[t]), float(a.y[t]), float(a.yaw[t]), float(np.hypot(a.vx[t], a.vy[t])))


def extract_state(s, t, cfg: FeatureConfig = FeatureConfig(), ego: KinState = None) -> StateFeatures:
    """Structured observation at timestep t.

    `ego` replaces the logged SDC pose and speed (used during closed-loop
    rollouts); every other agent is read from the log.
    """
    if ego is None:
        if not s.sdc.valid[t]:
            raise InvalidTimestep(f"SDC is not valid at t={t} in scenario {s.id}")
        ego = sdc_state(s, t)
    frame = EgoFrame((ego.x, ego.y), ego.yaw)
    origin = np.array([ego.x, ego.y])
    ego_vel = ego.v * np.array([np.cos(ego.yaw), np.sin(ego.yaw)])

    arr = s.arrays
    n = cfg.num_agents
    agents = np.zeros((n, AGENT_FEATURES))
    agents_mask = np.zeros(n)
    others = np.flatnonzero(arr["valid"][:, t] & (np.arange(len(s.agents)) != s.sdc_index))
    if len(others):
        pos = np.stack([arr["x"][others, t], arr["y"][others, t]], axis=1)
        dist = np.hypot(*(pos - origin).T)
        order = others[np.argsort(dist, kind="stable")][:n]
        k = len(order)
        rel_pos = to_ego(frame, np.stack([arr["x"][order, t], arr["y"][order, t]], axis=1))
        rel_vel = rotate(np.stack([arr["vx"][order, t], arr["vy"][order, t]], axis=1) - ego_vel, -ego.yaw)
        rel_yaw = arr["yaw"][order, t] - ego.yaw
        agents[:k, 0:2] = rel_pos
        agents[:k, 2:4] = rel_vel
        agents[:k, 4] = np.cos(rel_yaw)
        agents[:k, 5] = np.sin(rel_yaw)
        agents[:k, 6] = arr["length"][order]
        agents[:k, 7] = arr["width"][order]
        veh = arr["is_vehicle"][order]
        agents[:k, 8] = veh
        agents[:k, 9] = ~veh
        agents_mask[:k] = 1.0

    m, p = cfg.num_map_polylines, cfg.map_points_per_polyline
    map_feat = np.zeros((m, 2 * p))
    map_mask = np.zeros(m)
    starts, ends, owner, resampled = _lane_cache(s, cfg)
    if len(resampled):
        d = distance_to_each_polyline(origin, starts, ends, owner, len(resampled))
        order = np.argsort(d, kind="stable")[:m]
        k = len(order)
        map_feat[:k] = to_ego(frame, resampled[order]).reshape(k, 2 * p)
        map_mask[:k] = 1.0

    tl = np.array([0.0, cfg.tl_lookahead_m])
    reds = [l.stop_line for l in s.traffic_lights[t] if l.state == "red"]
    if reds:
        e = to_ego(frame, np.array(reds, dtype=float))
        ok = (e[:, 0] > 0) & (e[:, 0] <= cfg.tl_lookahead_m) & (np.abs(e[:, 1]) < cfg.tl_lateral_gate_m)
        if ok.any():
            tl = np.array([1.0, e[ok, 0].min()])

    g = cfg.num_goal_points
    route = s.route
    if len(route) == 1:
        ahead = np.repeat(route, g, axis=0)
    else:
        seg, _ = project_onto_polyline(origin, route)
        idx = np.minimum(np.arange(seg + 1, seg + 1 + g), len(route) - 1)
        ahead = route[idx]
    goal = to_ego(frame, ahead)

    return StateFeatures(
        ego=np.array([ego.v]), agents=agents, agents_mask=agents_mask,
        map=map_feat, map_mask=map_mask, traffic_lights=tl, goal=goal,
    )


def flatten(f: StateFeatures) -> np.ndarray:
    return np.concatenate([f.ego, f.agents.ravel(), f.map.ravel(), f.traffic_lights, f.goal.ravel()])


def featurize(s, ts, cfg: FeatureConfig = FeatureConfig(), dtype=np.float64):
    """Flat feature rows for the given timesteps, shape (len(ts), flat_dim)."""
    out = np.empty((len(ts), cfg.flat_dim), dtype=dtype)
    for i, t in enumerate(ts):
        out[i] = flatten(extract_state(s, int(t), cfg))
    return out
