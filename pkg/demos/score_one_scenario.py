"""
Scoring a single scenario
=========================

Build one synthetic cut-in scene, then look at it through the per-timestep
heuristics and the action rarity score.
"""

import numpy as np

from curator.heuristics import SCORE_NAMES, score_scenario
from curator.rarity import build_histogram, normalize_rarity, rarity_raw
from curator.scenario import transition_times
from curator.scouts import expert_actions
from curator.synth import CorpusSpec, generate_scenarios

# a small corpus with a few cut-ins; the rest is nominal driving
scenarios, events = generate_scenarios(CorpusSpec(30, seed=7, event_mix={"cut_in": 0.1}))
event = events[0]
scene = next(s for s in scenarios if s.id == event.scenario_id)
print(f"{scene.id}: {event.kind} between t={event.t_start} and t={event.t_end}")

# heuristics: one row per timestep, NaN where a score is undefined
hs = score_scenario(scene)
raw = hs.raw()
for t in range(event.t_start - 5, min(event.t_end, event.t_start + 15), 2):
    cells = "  ".join(f"{n[:5]}={raw[t, k]:.2f}" for k, n in enumerate(SCORE_NAMES))
    print(f"t={t:2d}  {cells}")

# rarity: expert actions binned into a histogram over the whole corpus
acts = [expert_actions(s)[0][transition_times(s)] for s in scenarios]
hist = build_histogram(np.concatenate(acts))
norm = normalize_rarity(np.concatenate([rarity_raw(hist, a) for a in acts]))
i = [s.id for s in scenarios].index(scene.id)
start = sum(len(a) for a in acts[:i])
mine = norm.score[start:start + len(acts[i])]
top = np.argsort(-mine, kind="stable")[:5]
print("rarest expert actions (t, accel, yaw rate, score):")
for t in sorted(top):
    print(f"  {t:2d}  {acts[i][t, 0]:6.2f}  {acts[i][t, 1]:6.3f}  {mine[t]:.2f}")
