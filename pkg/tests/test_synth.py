import numpy as np
import pytest

from curator.dynamics import KinState, simulate
from curator.errors import SpecError
from curator.heuristics import score_scenario
from curator.scouts import expert_actions
from curator.synth import (EVENT_KINDS, CorpusSpec, assign_events, build_scenario, events_from_csv,
                           events_to_csv, generate_corpus, generate_scenarios, make_road)


def test_spec_validation():
    with pytest.raises(SpecError):
        CorpusSpec(0)
    with pytest.raises(SpecError):
        CorpusSpec(10, event_mix={"meteor": 0.1})
    with pytest.raises(SpecError):
        CorpusSpec(10, event_mix={"hard_brake": 0.7, "cut_in": 0.6})


def test_event_counts_are_exact():
    spec = CorpusSpec(500, seed=4, event_mix={"hard_brake": 0.05, "cut_in": 0.03})
    labels = assign_events(spec)
    assert labels.count("hard_brake") == 25 and labels.count("cut_in") == 15


def test_nominal_corpus_is_calm():
    scenarios, events = generate_scenarios(CorpusSpec(60, seed=5))
    assert events == []
    worst = max(np.nanmax(score_scenario(s).combined) for s in scenarios)
    assert worst < 0.3


def test_every_scenario_gets_the_forced_event():
    _, events = generate_scenarios(CorpusSpec(12, seed=6, event_mix={"hard_brake": 1.0}))
    assert len(events) == 12 and {e.kind for e in events} == {"hard_brake"}


def test_same_seed_same_bytes(tmp_path):
    spec = CorpusSpec(6, seed=7, event_mix={"cut_in": 0.5})
    generate_corpus(spec, tmp_path / "a")
    generate_corpus(spec, tmp_path / "b", workers=2)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_events_csv_round_trip(small_corpus):
    events = small_corpus[1]
    assert sorted(events_from_csv(events_to_csv(events)), key=lambda e: e.scenario_id) == \
        sorted(events, key=lambda e: e.scenario_id)


def test_cruise_actions_are_zero():
    rng = np.random.default_rng(0)
    from curator.synth import script_expert
    plan = script_expert("cruise", make_road("straight", rng), rng)
    assert np.array_equal(plan.actions, np.zeros_like(plan.actions))


def test_hard_brake_onset_saturates_volatility():
    s, ev = build_scenario("hb", "hard_brake", np.random.default_rng(1))
    scores = score_scenario(s)
    window = scores.volatility[ev.t_start:ev.t_end + 3]
    assert np.nanmax(window) == 1.0
    acts, _ = expert_actions(s)
    jerk = np.abs(np.diff(acts[:, 0])) / s.dt
    assert jerk.max() >= 8.0


def test_lane_change_reaches_full_lane_deviation():
    s, ev = build_scenario("lc", "lane_change", np.random.default_rng(2))
    assert np.nanmax(score_scenario(s).lanedev[ev.t_start:ev.t_end + 1]) == 1.0


@pytest.mark.parametrize("kind", (None,) + EVENT_KINDS)
def test_logs_are_bicycle_consistent(kind):
    s, _ = build_scenario("x", kind, np.random.default_rng(3))
    acts, clipped = expert_actions(s)
    assert not clipped.any()
    a = s.sdc
    replay = simulate(KinState(a.x[0], a.y[0], a.yaw[0], a.speed[0]), acts)
    assert np.hypot(replay[:, 0] - a.x, replay[:, 1] - a.y).max() < 1e-6


def test_dense_traffic_agent_count():
    s, _ = build_scenario("d", "dense_traffic", np.random.default_rng(4))
    assert 15 <= s.arrays["valid"].sum(axis=0).max() <= 20
