import numpy as np
import pytest

from conftest import red_light, scene, track
from curator.dynamics import Action, KinState
from curator.errors import PolicyError
from curator.evaluation import (ConstantPolicy, ExpertReplayPolicy, FunctionPolicy, RewardWeights,
                                collision_check, compute_reward, evaluate, offroad_check, rollout,
                                safety_penalty)
from curator.geometry import box_corners
from curator.synth import CorpusSpec, generate_scenarios

EDGES = (((-100.0, -4.0), (300.0, -4.0)), ((300.0, 4.0), (-100.0, 4.0)))


def cruiser(T=41, v=10.0, extra=(), lights=None, edges=EDGES):
    x = np.arange(T) * v * 0.1
    return scene([track(x, 0.0, vx=v, T=T)] + list(extra), T=T, edges=edges, lights=lights,
                 route=((x[-1], 0.0),))


def test_cruise_reward():
    s = cruiser()
    st = KinState(0.0, 0.0, 0.0, 10.0)
    a = Action(0.0, 0.0)
    nxt = KinState(1.0, 0.0, 0.0, 10.0)
    assert compute_reward(s, 0, st, a, nxt) == pytest.approx(10.0)


def test_contact_safety_term():
    assert safety_penalty(0.0) == 1.0 and safety_penalty(5.0) == 0.0
    # a stopped car touching the SDC's nose one step later
    other = track(1.0 + 4.8, 0.0, T=41)
    s = cruiser(extra=[other])
    r = compute_reward(s, 0, KinState(0, 0, 0, 10), Action(0, 0), KinState(1, 0, 0, 10))
    w = RewardWeights()
    base = compute_reward(cruiser(), 0, KinState(0, 0, 0, 10), Action(0, 0), KinState(1, 0, 0, 10))
    assert r - base == pytest.approx(w.safety * 1.0)


def test_red_light_term():
    T = 41
    st, nxt = KinState(0, 0, 0, 2.0), KinState(0.2, 0, 0, 2.0)
    red = cruiser(lights=[(red_light(1.2, 0.0),)] * T)
    r = compute_reward(red, 0, st, Action(0, 0), nxt) - compute_reward(cruiser(), 0, st, Action(0, 0), nxt)
    assert r == pytest.approx(-5.0)


def test_reward_weight_signs():
    with pytest.raises(ValueError):
        RewardWeights(safety=1.0)


def test_collision_check():
    a = box_corners(0, 0, 0, 4, 2)
    assert collision_check(a, [a])
    assert not collision_check(a, [box_corners(10, 0, 0, 4, 2)])
    assert not collision_check(a, np.zeros((0, 4, 2)))


def test_offroad_check():
    s = cruiser()
    assert not offroad_check(s, box_corners(0, 0, 0, 4, 2))
    assert offroad_check(s, box_corners(0, -3.5, 0, 4, 2))
    assert offroad_check(s, box_corners(0, 3.5, 0, 4, 2))


@pytest.fixture(scope="module")
def corpus():
    return generate_scenarios(CorpusSpec(12, seed=21, event_mix={"hard_brake": 0.25, "cut_in": 0.25,
                                                                  "lane_change": 0.25}))[0]


def test_expert_replay_is_clean(corpus):
    m = evaluate(corpus, ExpertReplayPolicy())
    assert m.collision_rate == 0 and m.offroad_rate == 0 and m.success_rate == 1


def test_expert_replay_tracks_log(corpus):
    s = corpus[0]
    r = rollout(s, ExpertReplayPolicy())
    assert np.hypot(r.states[:, 0] - s.sdc.x, r.states[:, 1] - s.sdc.y).max() < 1e-6


def test_full_brake_from_rest_never_moves():
    s = scene([track(0.0, 0.0, T=20)], T=20, route=((50.0, 0.0),))
    r = rollout(s, ConstantPolicy(-10.0))
    assert (r.states[:, :2] == 0).all()
    m = evaluate([s], ConstantPolicy(-10.0))
    assert m.progression_m == 0 and m.success_rate == 0


def test_rollout_deterministic(corpus):
    pi = FunctionPolicy(lambda f: Action(1.0 - 0.1 * f.ego[0], 0.02))
    a, b = rollout(corpus[1], pi), rollout(corpus[1], pi)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.rewards, b.rewards)


def test_actions_are_clipped():
    s = cruiser()
    r = rollout(s, ConstantPolicy(50.0, -3.0), horizon=5)
    assert r.actions[:, 0].max() == 8.0 and r.actions[:, 1].min() == -1.0


def test_non_finite_action():
    with pytest.raises(PolicyError):
        rollout(cruiser(), ConstantPolicy(np.nan), horizon=3)


def test_planted_collision_rate():
    # a stopped car sits in the lane in 3 of 8 scenes; constant speed runs into it
    scenes = []
    for k in range(8):
        extra = [track(30.0, 0.0, T=41)] if k < 3 else [track(30.0, 6.0, T=41)]
        scenes.append(cruiser(extra=extra))
    m = evaluate(scenes, ConstantPolicy(0.0))
    assert m.collision_rate == pytest.approx(3 / 8)
    assert m.offroad_rate == 0


def test_parallel_evaluation_matches(corpus):
    pi = ConstantPolicy(0.5, 0.01)
    assert evaluate(corpus[:4], pi).as_dict() == evaluate(corpus[:4], pi, workers=2).as_dict()
