"""Per-timestep heuristic criticality scores and their weighted combination."""
import csv
import io
import math
from dataclasses import dataclass, fields

import numpy as np

from .dynamics import kinematic_chain
from .errors import NoLaneError
from .geometry import box_corners, min_distance_to_polylines

SCORE_NAMES = ("volatility", "interaction", "offroad", "lanedev", "density")


@dataclass(frozen=True)
class HeuristicConstants:
    j_norm: float = 8.0
    yawacc_norm: float = 3.0
    i_norm: float = 200.0
    d_thresh: float = 2.0
    d_norm: float = 1.5
    n_norm: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")


@dataclass(frozen=True)
class HeuristicWeights:
    volatility: float = 0.40
    interaction: float = 0.05
    offroad: float = 0.05
    lanedev: float = 0.47
    density: float = 0.03

    def __post_init__(self):
        w = self.as_array()
        if (w < 0).any():
            raise ValueError("heuristic weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"heuristic weights must sum to 1, got {w.sum()}")

    def as_array(self):
        return np.array([getattr(self, n) for n in SCORE_NAMES])


@dataclass
class TimestepScores:
    volatility: np.ndarray
    interaction: np.ndarray
    offroad: np.ndarray
    lanedev: np.ndarray
    density: np.ndarray
    combined: np.ndarray
    defined: np.ndarray

    def raw(self):
        return np.stack([getattr(self, n) for n in SCORE_NAMES], axis=1)


def _clip01(x):
    return np.clip(x, 0.0, 1.0)


def score_volatility(chain, c: HeuristicConstants = HeuristicConstants()):
    """max(clip(|jerk|/j_norm), clip(|yaw_accel|/yawacc_norm)); NaN where undefined."""
    s = np.maximum(_clip01(np.abs(chain.jerk) / c.j_norm), _clip01(np.abs(chain.yaw_accel) / c.yawacc_norm))
    s[~chain.defined] = np.nan
    return s


def _interaction(s, ts, c):
    arr = s.arrays
    i = s.sdc_index
    ts = np.asarray(ts)
    others = np.arange(len(s.agents)) != i
    px = arr["x"][others][:, ts] - arr["x"][i, ts]
    py = arr["y"][others][:, ts] - arr["y"][i, ts]
    vx = arr["vx"][others][:, ts] - arr["vx"][i, ts]
    vy = arr["vy"][others][:, ts] - arr["vy"][i, ts]
    risk = np.maximum(0.0, -(px * vx + py * vy))
    risk = np.where(arr["valid"][others][:, ts], risk, 0.0)
    worst = risk.max(axis=0) if len(risk) else np.zeros(len(ts))
    return _clip01(worst / c.i_norm)


def _sdc_corners(s, ts):
    a = s.sdc
    return box_corners(a.x[ts], a.y[ts], a.yaw[ts], a.length, a.width)


def _offroad(s, ts, c):
    edges = s.polylines("road_edge")
    if not edges:
        return np.zeros(len(ts))
    corners = _sdc_corners(s, ts).reshape(-1, 2)
    d = min_distance_to_polylines(corners, edges).reshape(len(ts), 4).min(axis=1)
    return _clip01(1.0 - d / c.d_thresh)


def _lanedev(s, ts, c):
    lanes = s.polylines("lane_center")
    if not lanes:
        raise NoLaneError(f"scenario {s.id} has no lane centerline")
    centers = np.stack([s.sdc.x[ts], s.sdc.y[ts]], axis=1)
    return _clip01(min_distance_to_polylines(centers, lanes) / c.d_norm)


def _density(s, ts, c):
    return _clip01(s.arrays["valid"][:, ts].sum(axis=0) / c.n_norm)


def score_interaction(s, t, c: HeuristicConstants = HeuristicConstants()) -> float:
    return float(_interaction(s, [t], c)[0])


def score_offroad(s, t, c: HeuristicConstants = HeuristicConstants()) -> float:
    return float(_offroad(s, [t], c)[0])


def score_lanedev(s, t, c: HeuristicConstants = HeuristicConstants()) -> float:
    return float(_lanedev(s, [t], c)[0])


def score_density(s, t, c: HeuristicConstants = HeuristicConstants()) -> float:
    return float(_density(s, [t], c)[0])


def combine(raw, w: HeuristicWeights = HeuristicWeights()):
    """Weighted sum over the five scores; raw has shape (..., 5)."""
    return np.asarray(raw, dtype=float) @ w.as_array()


def sdc_chain(s):
    a = s.sdc
    return kinematic_chain(a.speed, a.yaw, s.dt, valid=a.valid)


def score_scenario(s, c: HeuristicConstants = HeuristicConstants(),
                   w: HeuristicWeights = HeuristicWeights()) -> TimestepScores:
    """All five scores and the combination for every timestep of a scenario.

    Entries where the SDC is invalid are NaN; `defined` marks timesteps where
    all five scores exist (the volatility needs two steps of history).
    """
    T = s.num_timesteps
    valid = s.sdc.valid
    ts = np.flatnonzero(valid)
    out = {n: np.full(T, np.nan) for n in SCORE_NAMES}
    out["volatility"] = score_volatility(sdc_chain(s), c)
    out["volatility"][~valid] = np.nan
    if len(ts):
        out["interaction"][ts] = _interaction(s, ts, c)
        out["offroad"][ts] = _offroad(s, ts, c)
        out["lanedev"][ts] = _lanedev(s, ts, c)
        out["density"][ts] = _density(s, ts, c)
    raw = np.stack([out[n] for n in SCORE_NAMES], axis=1)
    defined = ~np.isnan(raw).any(axis=1)
    combined = np.full(T, np.nan)
    combined[defined] = combine(raw[defined], w)
    return TimestepScores(combined=combined, defined=defined, **out)


# -- persistence -----------------------------------------------------------

TABLE_COLUMNS = ("t", "s_vol", "s_int", "s_off", "s_lane", "s_den", "s_comb", "defined")


def _fmt(v):
    return "" if math.isnan(v) else repr(float(v))


def _parse(v):
    return math.nan if v == "" else float(v)


def scores_to_csv(scores: TimestepScores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    cols = [scores.volatility, scores.interaction, scores.offroad, scores.lanedev,
            scores.density, scores.combined]
    for t in range(len(scores.defined)):
        w.writerow([t] + [_fmt(col[t]) for col in cols] + [int(scores.defined[t])])
    return buf.getvalue()


def scores_from_csv(text: str) -> TimestepScores:
    rows = list(csv.DictReader(io.StringIO(text)))
    get = lambda k: np.array([_parse(r[k]) for r in rows])
    return TimestepScores(
        volatility=get("s_vol"), interaction=get("s_int"), offroad=get("s_off"),
        lanedev=get("s_lane"), density=get("s_den"), combined=get("s_comb"),
        defined=np.array([r["defined"] == "1" for r in rows]),
    )
