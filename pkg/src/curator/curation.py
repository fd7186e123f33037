"""Scenario aggregation, the master transition index and weighted samplers."""
import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, MissingScores

EPSILON = 0.01
TIMESTEP_STRATEGIES = ("uniform", "H", "E", "AR")
SCENARIO_STRATEGIES = ("HS", "ES", "ARS")
STRATEGIES = ("uniform", "H", "HS", "E", "ES", "AR", "ARS")
SCENARIO_PERCENTILE = {"ES": 99.0, "ARS": 95.0}


def percentile(values, q):
    """Inclusive linear-interpolation percentile: rank = q / 100 * (n - 1)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    n = len(v)
    if n == 0:
        raise EmptyInput("percentile of an empty sequence")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"q must lie in [0, 100], got {q}")
    rank = q / 100.0 * (n - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, n - 1)
    frac = rank - lo
    return float(v[lo] + frac * (v[hi] - v[lo]))


def aggregate_heuristic_scenario(raw, weights=None):
    """Scenario-level heuristic score from an (n, 5) array of defined timesteps.

    P99 of volatility, interaction and off-road; standard deviation of lane
    deviation (clipped to [0, 1]); mean of density; then the weighted sum.
    """
    from .heuristics import HeuristicWeights

    raw = np.asarray(raw, dtype=float).reshape(-1, 5)
    raw = raw[~np.isnan(raw).any(axis=1)]
    if len(raw) == 0:
        raise EmptyInput("no defined timesteps to aggregate")
    w = (weights or HeuristicWeights()).as_array()
    agg = np.array([
        percentile(raw[:, 0], 99.0),
        percentile(raw[:, 1], 99.0),
        percentile(raw[:, 2], 99.0),
        min(1.0, max(0.0, float(np.std(raw[:, 3])))),
        float(np.mean(raw[:, 4])),
    ])
    return float(np.clip(agg @ w, 0.0, 1.0)), agg


def aggregate_percentile_scenario(scores, q):
    s = np.asarray(scores, dtype=float)
    s = s[~np.isnan(s)]
    if s.size == 0:
        raise EmptyInput("no scores to aggregate")
    return percentile(s, q)


# -- master index ------------------------------------------------------------

@dataclass
class MasterIndex:
    """Flat list of (scenario_id, t) transitions with per-strategy weights.

    A weight of 0 marks an entry excluded from that strategy (its score is
    undefined); every other weight is at least EPSILON.
    """

    scenario_ids: np.ndarray
    ts: np.ndarray
    weights: dict

    def __len__(self):
        return len(self.ts)

    def entry(self, i):
        from .scenario import Transition
        return Transition(str(self.scenario_ids[i]), int(self.ts[i]))

    def to_csv(self) -> str:
        names = sorted(self.weights)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario_id", "t"] + [f"w_{n}" for n in names])
        for i in range(len(self)):
            w.writerow([self.scenario_ids[i], int(self.ts[i])] + [repr(float(self.weights[n][i])) for n in names])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MasterIndex":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        names = [h[2:] for h in header[2:]]
        ids = np.array([r[0] for r in body], dtype=object)
        ts = np.array([int(r[1]) for r in body], dtype=np.int64)
        weights = {n: np.array([float(r[2 + k]) for r in body]) for k, n in enumerate(names)}
        return cls(ids, ts, weights)


def build_master_index(transitions, strategy_scores, epsilon=EPSILON) -> MasterIndex:
    """Assemble the index.

    transitions: mapping scenario_id -> ascending array of transition times.
    strategy_scores: mapping strategy -> (scenario_id -> per-timestep scores,
    NaN where undefined). Entries are sorted by scenario id then t.
    """
    ids, ts = [], []
    for sid in sorted(transitions):
        t = np.asarray(transitions[sid], dtype=np.int64)
        ids.extend([sid] * len(t))
        ts.append(t)
    ts = np.concatenate(ts) if ts else np.zeros(0, dtype=np.int64)
    ids = np.array(ids, dtype=object)
    weights = {"uniform": np.ones(len(ts))}
    for name, per_scenario in strategy_scores.items():
        w = np.empty(len(ts))
        pos = 0
        for sid in sorted(transitions):
            t = np.asarray(transitions[sid], dtype=np.int64)
            if sid not in per_scenario:
                raise MissingScores(f"no {name} scores for scenario {sid}")
            s = np.asarray(per_scenario[sid], dtype=float)[t] if len(t) else np.zeros(0)
            w[pos:pos + len(t)] = np.where(np.isnan(s), 0.0, s + epsilon)
            pos += len(t)
        weights[name] = w
    return MasterIndex(ids, ts, weights)


def _cumulative(weights):
    w = np.asarray(weights, dtype=float)
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("weights must have positive mass")
    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    return cum


def _draw(cum, rng, n):
    return np.searchsorted(cum, rng.random(n), side="right")


class TimestepSampler:
    """I.i.d. weighted draws with replacement over master-index entries."""

    def __init__(self, index: MasterIndex, strategy="uniform", seed=0, chunk=4096):
        if strategy not in index.weights:
            raise MissingScores(f"index has no weights for strategy {strategy}")
        self.index = index
        self.strategy = strategy
        self.probabilities = index.weights[strategy] / index.weights[strategy].sum()
        self._cum = _cumulative(index.weights[strategy])
        self._rng = np.random.default_rng(seed)
        self._chunk = chunk

    def draw(self, n):
        """Indices of n entries."""
        return _draw(self._cum, self._rng, n)

    def __iter__(self):
        while True:
            for i in self.draw(self._chunk):
                yield self.index.entry(i)


def timestep_sampler(idx: MasterIndex, strategy="uniform", seed=0):
    return iter(TimestepSampler(idx, strategy, seed))


class ScenarioEpochSampler:
    """Stochastic epochs: pick a scenario with probability proportional to
    score + epsilon, then emit all of its transitions in shuffled order."""

    def __init__(self, transitions, scenario_scores, seed=0, epsilon=EPSILON):
        self.scenario_ids = sorted(transitions)
        missing = [s for s in self.scenario_ids if s not in scenario_scores]
        if missing:
            raise MissingScores(f"no scenario score for {missing[0]}")
        self.transitions = {s: np.asarray(transitions[s], dtype=np.int64) for s in self.scenario_ids}
        w = np.array([scenario_scores[s] + epsilon for s in self.scenario_ids], dtype=float)
        w[[len(self.transitions[s]) == 0 for s in self.scenario_ids]] = 0.0
        self.probabilities = w / w.sum()
        self._position = {s: i for i, s in enumerate(self.scenario_ids)}
        self._cum = _cumulative(w)
        self._rng = np.random.default_rng(seed)

    def draw_scenarios(self, n):
        return _draw(self._cum, self._rng, n)

    def blocks(self):
        """Endless (scenario_id, shuffled transition times) blocks."""
        while True:
            for k in self.draw_scenarios(256):
                sid = self.scenario_ids[k]
                yield sid, self._rng.permutation(self.transitions[sid])

    def draw(self, n):
        """n transitions as (scenario position, t) arrays, following the block stream."""
        pos, ts = [], []
        count = 0
        for sid, block in self.blocks():
            pos.append(np.full(len(block), self._position[sid]))
            ts.append(block)
            count += len(block)
            if count >= n:
                break
        return np.concatenate(pos)[:n], np.concatenate(ts)[:n]

    def __iter__(self):
        from .scenario import Transition
        for sid, block in self.blocks():
            for t in block:
                yield Transition(sid, int(t))


def scenario_epoch_iter(transitions, scenario_scores, seed=0, epsilon=EPSILON):
    return iter(ScenarioEpochSampler(transitions, scenario_scores, seed, epsilon))


# -- scenario score table -----------------------------------------------------

def scenario_table_to_csv(table) -> str:
    """table: mapping scenario_id -> {strategy: score}."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scenario_id",) + SCENARIO_STRATEGIES)
    for sid in sorted(table):
        w.writerow([sid] + [repr(float(table[sid][k])) for k in SCENARIO_STRATEGIES])
    return buf.getvalue()


def scenario_table_from_csv(text: str):
    return {r["scenario_id"]: {k: float(r[k]) for k in SCENARIO_STRATEGIES}
            for r in csv.DictReader(io.StringIO(text))}
