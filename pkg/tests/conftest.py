import numpy as np
import pytest

from curator.scenario import AgentTrack, MapPolyline, Scenario, TrafficLightState
from curator.synth import CorpusSpec, generate_scenarios


def track(x, y, yaw=0.0, vx=0.0, vy=0.0, valid=True, T=None, agent_type="vehicle", length=4.8, width=2.0):
    """Agent track with scalars broadcast over T steps."""
    cols = [np.asarray(v, dtype=float) for v in (x, y, yaw, vx, vy)]
    if T is None:
        T = max([c.size for c in cols] + [np.asarray(valid).size])
    cols = [np.broadcast_to(c, (T,)).copy() for c in cols]
    return AgentTrack(agent_type, length, width, np.broadcast_to(np.asarray(valid, dtype=bool), (T,)).copy(),
                      *cols)


def scene(agents, T, lanes=(((-50.0, 0.0), (150.0, 0.0)),), edges=(), lights=None, route=((100.0, 0.0),),
          sid="micro", dt=0.1):
    poly = [MapPolyline("lane_center", np.array(p)) for p in lanes]
    poly += [MapPolyline("road_edge", np.array(p)) for p in edges]
    lights = lights if lights is not None else [()] * T
    return Scenario(sid, dt, T, 0, agents, poly, lights, np.array(route, dtype=float))


def red_light(x, y):
    return TrafficLightState((float(x), float(y)), "red")


@pytest.fixture(scope="session")
def small_corpus():
    spec = CorpusSpec(40, seed=3, event_mix={"hard_brake": 0.1, "cut_in": 0.1, "lane_change": 0.1,
                                              "near_boundary": 0.1, "dense_traffic": 0.1})
    return generate_scenarios(spec)
