"""
End to end on a desk-sized corpus
=================================

Generate, score, curate, train toy policies and evaluate them in closed loop.
The sizes here are small enough to finish in a few minutes, so the metric
differences between strategies are mostly noise; the point is the plumbing.
"""

import json
import tempfile
from pathlib import Path

from curator import pipeline

out = Path(tempfile.mkdtemp(prefix="curator-e2e-"))
cfg = pipeline.config_from_dict({
    "out": str(out),
    "corpus": {"num_scenarios": 120},
    "eval_corpus": {"num_scenarios": 20},
    "ensemble": {"epochs": 5},
    "policy": {"steps": 300, "strategies": ["uniform", "HS", "E", "ARS"]},
})
pipeline.run_pipeline(cfg)

doc = json.loads((out / "reports" / "metrics.json").read_text())
names = list(next(iter(doc["metrics"].values())))
print(f"{'metric':>22}  " + "  ".join(f"{n:>8}" for n in names))
for metric, row in doc["metrics"].items():
    print(f"{metric:>22}  " + "  ".join(f"{row[n]:8.3f}" for n in names))
print(f"artifacts in {out}")
