import numpy as np
import pytest

from conftest import red_light, scene, track
from curator.errors import InvalidTimestep
from curator.features import EgoFrame, FeatureConfig, extract_state, flatten, featurize, from_ego, to_ego


def test_ego_hand_rotation():
    assert to_ego(EgoFrame((5.0, 0.0), np.pi / 2), [5.0, 5.0]) == pytest.approx([5.0, 0.0])
    assert to_ego(EgoFrame((5.0, 0.0), 1.0), [5.0, 0.0]) == pytest.approx([0.0, 0.0])


def test_ego_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(200):
        f = EgoFrame(tuple(rng.uniform(-100, 100, 2)), rng.uniform(-np.pi, np.pi))
        p = rng.uniform(-100, 100, size=(5, 2))
        np.testing.assert_allclose(from_ego(f, to_ego(f, p)), p, atol=1e-12)


def test_default_flat_dim():
    assert FeatureConfig().flat_dim == 1453


def test_lone_sdc():
    s = scene([track(0, 0, vx=7.0, T=3)], T=3)
    f = extract_state(s, 0)
    assert not f.agents_mask.any() and f.ego.tolist() == [7.0]
    assert f.traffic_lights.tolist() == [0.0, 50.0]


def test_red_light_ahead():
    T = 2
    s = scene([track(0, 0, vx=5.0, T=T)], T=T, lights=[(red_light(12, 0),)] * T)
    assert extract_state(s, 0).traffic_lights.tolist() == [1.0, 12.0]


def test_red_light_behind_is_ignored():
    T = 2
    s = scene([track(0, 0, vx=5.0, T=T)], T=T, lights=[(red_light(-12, 0),)] * T)
    assert extract_state(s, 0).traffic_lights.tolist() == [0.0, 50.0]


def test_agent_row():
    s = scene([track(0, 0, T=2), track(5, 0, T=2)], T=2)
    f = extract_state(s, 0)
    assert f.agents[0, :4].tolist() == [5.0, 0.0, 0.0, 0.0]
    assert f.agents[0, 8:].tolist() == [1.0, 0.0]
    assert f.agents_mask.tolist() == [1.0] + [0.0] * 15


def test_nearest_agents_kept():
    agents = [track(0, 0, T=2)] + [track(float(d), 0, T=2) for d in range(40, 0, -2)]
    f = extract_state(scene(agents, T=2), 0)
    assert f.agents[:, 0].tolist() == [float(d) for d in range(2, 34, 2)]


def test_padding_is_zero():
    s = scene([track(0, 0, vx=3.0, T=2)], T=2, lanes=())
    v = flatten(extract_state(s, 0))
    nonzero = np.flatnonzero(v)
    # ego speed, the light-distance default and the repeated goal point
    assert v[0] == 3.0 and 50.0 in v[nonzero]
    cfg = FeatureConfig()
    assert not v[1:1 + 10 * cfg.num_agents + 2 * cfg.num_map_polylines * cfg.map_points_per_polyline].any()


def test_deterministic_and_dtype():
    s = scene([track(0, 0, vx=3.0, T=4), track(9, 2, T=4)], T=4)
    a = featurize(s, [0, 1, 2])
    b = featurize(s, [0, 1, 2])
    assert np.array_equal(a, b) and a.shape == (3, 1453)
    assert featurize(s, [0], dtype=np.float32).dtype == np.float32


def test_invalid_timestep():
    s = scene([track(0, 0, valid=[1, 0], T=2)], T=2)
    with pytest.raises(InvalidTimestep):
        extract_state(s, 1)
