"""
How each curation strategy reshapes the training stream
=======================================================

Run the scoring stages on a small corpus, then draw transitions under every
strategy and count how many land inside planted events.
"""

import tempfile
from pathlib import Path

from curator import pipeline
from curator.synth import events_from_csv

out = Path(tempfile.mkdtemp(prefix="curator-demo-"))
cfg = pipeline.config_from_dict({
    "out": str(out),
    "corpus": {"num_scenarios": 60},
    "ensemble": {"epochs": 5},
})
for stage in ("gen", "score-heuristic", "build-histogram", "score-rarity", "train-scouts",
              "score-uncertainty", "aggregate", "build-index"):
    pipeline.run_stage(cfg, stage)

# planted event windows, written next to the corpus
events = events_from_csv((out / "corpus" / "events.csv").read_text())
windows = {e.scenario_id: (e.t_start, e.t_end) for e in events}


def in_event(sid, t):
    w = windows.get(sid)
    return w is not None and w[0] <= t <= w[1]


n = 20000
print(f"{'strategy':>8}  share of draws inside planted events")
for strategy in ("uniform", "H", "HS", "E", "ES", "AR", "ARS"):
    draws = pipeline.sample_transitions(cfg, strategy, n)
    share = sum(in_event(sid, t) for sid, t in draws) / n
    print(f"{strategy:>8}  {share:.3f}")
print(f"artifacts in {out}")
