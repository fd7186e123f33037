"""Scenario data model, JSON serialization, validation and transition enumeration."""
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import CuratorIOError, ParseError, SchemaError, ValidationError

SCHEMA_VERSION = 1
AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
MAP_KINDS = ("lane_center", "road_edge")
LIGHT_STATES = ("red", "green", "unknown")
STATE_FIELDS = ("x", "y", "yaw", "vx", "vy")


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AgentTrack:
    agent_type: str
    length: float
    width: float
    valid: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yaw: np.ndarray
    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "valid", _frozen(self.valid, bool))
        for name in STATE_FIELDS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def speed(self):
        return np.hypot(self.vx, self.vy)

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (self.agent_type == other.agent_type
                and self.length == other.length
                and self.width == other.width
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("valid",) + STATE_FIELDS))


@dataclass(frozen=True, eq=False)
class MapPolyline:
    kind: str
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points).reshape(-1, 2))

    def __eq__(self, other):
        if not isinstance(other, MapPolyline):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class TrafficLightState:
    stop_line: tuple
    state: str


@dataclass(frozen=True)
class Transition:
    scenario_ref: str
    t: int


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    dt: float
    num_timesteps: int
    sdc_index: int
    agents: tuple
    map: tuple
    traffic_lights: tuple
    route: np.ndarray
    _memo: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "map", tuple(self.map))
        object.__setattr__(self, "traffic_lights", tuple(tuple(ls) for ls in self.traffic_lights))
        object.__setattr__(self, "route", _frozen(self.route).reshape(-1, 2))

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.id == other.id and self.dt == other.dt
                and self.num_timesteps == other.num_timesteps
                and self.sdc_index == other.sdc_index
                and self.agents == other.agents and self.map == other.map
                and self.traffic_lights == other.traffic_lights
                and np.array_equal(self.route, other.route))

    @property
    def sdc(self) -> AgentTrack:
        return self.agents[self.sdc_index]

    @cached_property
    def arrays(self):
        """Stacked agent arrays: dict of (A, T) arrays plus (A,) sizes."""
        out = {n: np.stack([getattr(a, n) for a in self.agents]) for n in ("valid",) + STATE_FIELDS}
        out["length"] = np.array([a.length for a in self.agents])
        out["width"] = np.array([a.width for a in self.agents])
        out["is_vehicle"] = np.array([a.agent_type == "vehicle" for a in self.agents])
        return out

    def polylines(self, kind):
        return [p.points for p in self.map if p.kind == kind]


def enumerate_transitions(s: Scenario):
    """Timesteps t where the SDC is valid at both t and t + 1, ascending."""
    v = s.sdc.valid
    ts = np.flatnonzero(v[:-1] & v[1:])
    return [Transition(s.id, int(t)) for t in ts]


def transition_times(s: Scenario):
    v = s.sdc.valid
    return np.flatnonzero(v[:-1] & v[1:])


# -- serialization ---------------------------------------------------------

def scenario_to_dict(s: Scenario):
    agents = []
    for a in s.agents:
        states = [
            {"valid": bool(a.valid[t]), "x": float(a.x[t]), "y": float(a.y[t]),
             "yaw": float(a.yaw[t]), "vx": float(a.vx[t]), "vy": float(a.vy[t])}
            for t in range(s.num_timesteps)
        ]
        agents.append({"type": a.agent_type, "length": float(a.length),
                       "width": float(a.width), "states": states})
    return {
        "schema_version": SCHEMA_VERSION,
        "id": s.id,
        "dt": float(s.dt),
        "num_timesteps": int(s.num_timesteps),
        "sdc_index": int(s.sdc_index),
        "agents": agents,
        "map": [{"kind": p.kind, "points": p.points.tolist()} for p in s.map],
        "traffic_lights": [
            [{"stop_line": [float(v) for v in tl.stop_line], "state": tl.state} for tl in step]
            for step in s.traffic_lights
        ],
        "route": s.route.tolist(),
    }


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), separators=(",", ":"), allow_nan=False) + "\n"


def save_scenario(s: Scenario, path) -> None:
    validate_scenario(s)
    text = dumps_scenario(s)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CuratorIOError(f"cannot write scenario to {path}: {exc}") from exc


def _require(doc, key, path):
    if not isinstance(doc, dict):
        raise SchemaError("expected an object", path)
    if key not in doc:
        raise SchemaError(f"missing field '{key}'", path or "<root>")
    return doc[key]


def _number(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError("expected a number", path)
    return float(v)


def _point(v, path):
    if not isinstance(v, list) or len(v) != 2:
        raise SchemaError("expected an [x, y] pair", path)
    return [_number(v[0], path + "[0]"), _number(v[1], path + "[1]")]


def _list(v, path):
    if not isinstance(v, list):
        raise SchemaError("expected a list", path)
    return v


def scenario_from_dict(doc) -> Scenario:
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object", "<root>")
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version!r}", "schema_version")
    sid = _require(doc, "id", "")
    if not isinstance(sid, str):
        raise SchemaError("expected a string", "id")
    dt = _number(_require(doc, "dt", ""), "dt")
    T = _require(doc, "num_timesteps", "")
    if isinstance(T, bool) or not isinstance(T, int):
        raise SchemaError("expected an integer", "num_timesteps")
    sdc_index = _require(doc, "sdc_index", "")
    if isinstance(sdc_index, bool) or not isinstance(sdc_index, int):
        raise SchemaError("expected an integer", "sdc_index")

    agents = []
    for i, ad in enumerate(_list(_require(doc, "agents", ""), "agents")):
        p = f"agents[{i}]"
        states = _list(_require(ad, "states", p), p + ".states")
        if len(states) != T:
            raise SchemaError(f"track has {len(states)} states but num_timesteps is {T}", p + ".states")
        cols = {n: np.empty(T) for n in STATE_FIELDS}
        valid = np.empty(T, dtype=bool)
        for t, st in enumerate(states):
            sp = f"{p}.states[{t}]"
            v = _require(st, "valid", sp)
            if not isinstance(v, bool):
                raise SchemaError("expected a boolean", sp + ".valid")
            valid[t] = v
            for n in STATE_FIELDS:
                cols[n][t] = _number(_require(st, n, sp), f"{sp}.{n}")
        atype = _require(ad, "type", p)
        agents.append(AgentTrack(
            agent_type=atype,
            length=_number(_require(ad, "length", p), p + ".length"),
            width=_number(_require(ad, "width", p), p + ".width"),
            valid=valid, **cols,
        ))

    polylines = []
    for i, md in enumerate(_list(_require(doc, "map", ""), "map")):
        p = f"map[{i}]"
        pts = [_point(q, f"{p}.points[{j}]") for j, q in enumerate(_list(_require(md, "points", p), p + ".points"))]
        polylines.append(MapPolyline(kind=_require(md, "kind", p), points=np.array(pts).reshape(-1, 2)))

    tls = _list(_require(doc, "traffic_lights", ""), "traffic_lights")
    if len(tls) != T:
        raise SchemaError(f"{len(tls)} traffic-light steps but num_timesteps is {T}", "traffic_lights")
    lights = []
    for t, step in enumerate(tls):
        row = []
        for j, ld in enumerate(_list(step, f"traffic_lights[{t}]")):
            p = f"traffic_lights[{t}][{j}]"
            row.append(TrafficLightState(
                stop_line=tuple(_point(_require(ld, "stop_line", p), p + ".stop_line")),
                state=_require(ld, "state", p),
            ))
        lights.append(tuple(row))

    route = [_point(q, f"route[{j}]") for j, q in enumerate(_list(_require(doc, "route", ""), "route"))]
    s = Scenario(id=sid, dt=dt, num_timesteps=T, sdc_index=sdc_index, agents=agents,
                 map=polylines, traffic_lights=lights, route=np.array(route).reshape(-1, 2))
    validate_scenario(s)
    return s


def loads_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed document: {exc}") from exc
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CuratorIOError(f"cannot read {path}: {exc}") from exc
    try:
        return loads_scenario(text)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def validate_scenario(s: Scenario) -> None:
    T = s.num_timesteps
    if not (math.isfinite(s.dt) and s.dt > 0):
        raise ValidationError("dt must be positive", "dt")
    if T < 1:
        raise ValidationError("num_timesteps must be positive", "num_timesteps")
    if not 0 <= s.sdc_index < len(s.agents):
        raise ValidationError(f"sdc_index {s.sdc_index} out of range for {len(s.agents)} agents", "sdc_index")
    for i, a in enumerate(s.agents):
        p = f"agents[{i}]"
        if a.agent_type not in AGENT_TYPES:
            raise ValidationError(f"unknown agent type {a.agent_type!r}", p + ".type")
        if not (a.length > 0 and math.isfinite(a.length)):
            raise ValidationError("length must be positive", p + ".length")
        if not (a.width > 0 and math.isfinite(a.width)):
            raise ValidationError("width must be positive", p + ".width")
        for n in ("valid",) + STATE_FIELDS:
            if getattr(a, n).shape != (T,):
                raise SchemaError(f"expected {T} entries", f"{p}.{n}")
        for n in STATE_FIELDS:
            arr = getattr(a, n)
            bad = np.flatnonzero(a.valid & ~np.isfinite(arr))
            if len(bad):
                raise ValidationError("non-finite value on a valid state", f"{p}.states[{bad[0]}].{n}")
        yaw = a.yaw[a.valid]
        bad = np.flatnonzero((yaw <= -np.pi) | (yaw > np.pi))
        if len(bad):
            raise ValidationError("yaw outside (-pi, pi]", f"{p}.states[{np.flatnonzero(a.valid)[bad[0]]}].yaw")
    for i, pl in enumerate(s.map):
        p = f"map[{i}]"
        if pl.kind not in MAP_KINDS:
            raise ValidationError(f"unknown polyline kind {pl.kind!r}", p + ".kind")
        if len(pl.points) < 2:
            raise ValidationError("polyline needs at least 2 points", p + ".points")
        if not np.isfinite(pl.points).all():
            raise ValidationError("non-finite point", p + ".points")
        step = np.hypot(*np.diff(pl.points, axis=0).T)
        if (step == 0).any():
            raise ValidationError(f"repeated point at index {int(np.flatnonzero(step == 0)[0]) + 1}", p + ".points")
    if len(s.traffic_lights) != T:
        raise SchemaError(f"expected {T} traffic-light steps", "traffic_lights")
    for t, step in enumerate(s.traffic_lights):
        for j, tl in enumerate(step):
            p = f"traffic_lights[{t}][{j}]"
            if tl.state not in LIGHT_STATES:
                raise ValidationError(f"unknown light state {tl.state!r}", p + ".state")
            if not all(math.isfinite(v) for v in tl.stop_line):
                raise ValidationError("non-finite stop line", p + ".stop_line")
    if len(s.route) < 1:
        raise ValidationError("route needs at least one waypoint", "route")
    if not np.isfinite(s.route).all():
        raise ValidationError("non-finite waypoint", "route")


def scenario_paths(corpus_dir):
    """Scenario files in a corpus directory, sorted by file name."""
    d = Path(corpus_dir)
    if not d.is_dir():
        raise CuratorIOError(f"corpus directory {d} does not exist")
    return sorted(p for p in d.glob("*.json"))


def load_corpus(corpus_dir):
    return [load_scenario(p) for p in scenario_paths(corpus_dir)]


def scenario_filename(scenario_id: str) -> str:
    return f"{scenario_id}.json"


def atomic_write_text(path, text):
    """Write through a temporary sibling so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise CuratorIOError(f"cannot write {path}: {exc}") from exc
