"""Stage orchestration: configuration, on-disk artifacts and reports.

Every stage is a pure function of its inputs on disk, the config and the
seed, so reruns rewrite byte-identical files. Stage timings go to the log
and to logs/stages.jsonl, which is the only non-deterministic output.
"""
import csv
import io
import json
import logging
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import curation, heuristics, rarity, scouts, synth
from .errors import ConfigError, CuratorError, DependencyError, EmptyInput, SpecError
from .evaluation import (METRIC_NAMES, ConstantPolicy, ExpertReplayPolicy, ModelPolicy, RewardWeights,
                         aggregate_metrics, evaluate_scenarios)
from .features import FeatureConfig
from .scenario import atomic_write_text, load_corpus, scenario_paths, transition_times

log = logging.getLogger("curator")

STAGES = ("gen", "score-heuristic", "build-histogram", "score-rarity", "train-scouts",
          "score-uncertainty", "aggregate", "build-index", "eval", "report")


@dataclass(frozen=True)
class Paths:
    corpus: str = "corpus"
    eval_corpus: str = "eval_corpus"
    scores: str = "scores"
    index: str = "index"
    checkpoints: str = "checkpoints"
    reports: str = "reports"


@dataclass(frozen=True)
class CorpusConfig:
    num_scenarios: int = 100
    T: int = 91
    event_mix: dict = field(default_factory=lambda: {
        "hard_brake": 0.04, "cut_in": 0.04, "near_boundary": 0.02, "lane_change": 0.03, "dense_traffic": 0.02})
    road_kinds: tuple = synth.ROAD_KINDS
    id_prefix: str = "sc"
    seed_offset: int = 0

    def spec(self, seed):
        return synth.CorpusSpec(self.num_scenarios, self.T, seed + self.seed_offset, dict(self.event_mix),
                                tuple(self.road_kinds), self.id_prefix)


def _default_eval_corpus():
    return CorpusConfig(num_scenarios=100, event_mix={"cut_in": 0.5, "hard_brake": 0.5},
                        road_kinds=("curve", "merge"), id_prefix="ev", seed_offset=1000)


@dataclass(frozen=True)
class PolicyConfig:
    steps: int = 2000
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 256
    strategies: tuple = curation.STRATEGIES

    def __post_init__(self):
        bad = [s for s in self.strategies if s not in curation.STRATEGIES]
        if bad:
            raise ValueError(f"unknown strategies {bad}")
        if self.steps < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("policy steps, batch_size and learning_rate must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    out: str = "run"
    seed: int = 0
    workers: int = 1
    paths: Paths = Paths()
    corpus: CorpusConfig = CorpusConfig()
    eval_corpus: CorpusConfig = field(default_factory=_default_eval_corpus)
    features: FeatureConfig = FeatureConfig()
    heuristic_constants: heuristics.HeuristicConstants = heuristics.HeuristicConstants()
    heuristic_weights: heuristics.HeuristicWeights = heuristics.HeuristicWeights()
    smoothing_alpha: float = 1.0
    ensemble: scouts.EnsembleSpec = scouts.EnsembleSpec()
    reward: RewardWeights = RewardWeights()
    epsilon: float = curation.EPSILON
    policy: PolicyConfig = PolicyConfig()

    def path(self, name) -> Path:
        return Path(self.out) / getattr(self.paths, name)


# -- config file -------------------------------------------------------------

_SECTIONS = {
    "paths": Paths, "corpus": CorpusConfig, "eval_corpus": CorpusConfig, "features": FeatureConfig,
    "ensemble": scouts.EnsembleSpec, "reward": RewardWeights, "policy": PolicyConfig,
}


def _build(cls, values, where):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError, SpecError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(doc, base: PipelineConfig = None) -> PipelineConfig:
    """Overlay a nested mapping (the YAML layout) onto the defaults."""
    cfg = base or PipelineConfig()
    doc = dict(doc or {})
    updates = {}
    for key in ("out", "seed", "workers", "epsilon"):
        if key in doc:
            updates[key] = doc.pop(key)
    for key, cls in _SECTIONS.items():
        if key in doc:
            current = asdict(getattr(cfg, key))
            current.update(doc.pop(key) or {})
            updates[key] = _build(cls, current, key)
    if "heuristics" in doc:
        h = doc.pop("heuristics") or {}
        extra = set(h) - {"constants", "weights"}
        if extra:
            raise ConfigError(f"unknown keys in heuristics: {', '.join(sorted(extra))}")
        updates["heuristic_constants"] = _build(
            heuristics.HeuristicConstants, {**asdict(cfg.heuristic_constants), **(h.get("constants") or {})},
            "heuristics.constants")
        updates["heuristic_weights"] = _build(
            heuristics.HeuristicWeights, {**asdict(cfg.heuristic_weights), **(h.get("weights") or {})},
            "heuristics.weights")
    if "rarity" in doc:
        r = doc.pop("rarity") or {}
        if set(r) - {"smoothing_alpha"}:
            raise ConfigError("rarity accepts only smoothing_alpha")
        updates["smoothing_alpha"] = float(r.get("smoothing_alpha", cfg.smoothing_alpha))
    if doc:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(doc))}")
    cfg = replace(cfg, **updates)
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig):
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("seed must be an integer")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("workers must be a positive integer")
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon must be positive")
    if not cfg.smoothing_alpha > 0:
        raise ConfigError("smoothing_alpha must be positive")
    for name in ("corpus", "eval_corpus"):
        try:
            getattr(cfg, name).spec(cfg.seed)
        except SpecError as exc:
            raise ConfigError(f"invalid {name}: {exc}") from exc


def config_to_dict(cfg: PipelineConfig):
    d = {"out": cfg.out, "seed": cfg.seed, "workers": cfg.workers, "epsilon": cfg.epsilon}
    for key in _SECTIONS:
        d[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(getattr(cfg, key)).items()}
    d["heuristics"] = {"constants": asdict(cfg.heuristic_constants), "weights": asdict(cfg.heuristic_weights)}
    d["rarity"] = {"smoothing_alpha": cfg.smoothing_alpha}
    return d


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a YAML config (or CURATOR_CONFIG); keyword overrides win."""
    path = path or os.environ.get("CURATOR_CONFIG")
    doc = {}
    if path:
        try:
            with open(path) as f:
                doc = yaml.safe_load(f) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(doc)


# -- table helpers -----------------------------------------------------------

def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _require(paths, stage):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise DependencyError(f"stage {stage} needs {', '.join(missing)}; run the upstream stages first")


def _corpus(cfg, name="corpus"):
    d = cfg.path(name)
    _require([d], name)
    if not scenario_paths(d):
        raise DependencyError(f"{d} holds no scenarios; run `curator gen` first")
    return load_corpus(d)


def _pool_map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("fork")) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


def _per_timestep_table(path, values_by_sid, columns):
    """values_by_sid: sid -> (ts, [column arrays])."""
    rows = []
    for sid in sorted(values_by_sid):
        ts, cols = values_by_sid[sid]
        for i, t in enumerate(ts):
            rows.append([sid, int(t)] + [_fmt(c[i]) for c in cols])
    _write_rows(path, ["scenario_id", "t"] + list(columns), rows)


def _load_per_timestep(path, column, num_timesteps):
    out = {}
    for r in _read_rows(path):
        sid = r["scenario_id"]
        if sid not in out:
            out[sid] = np.full(num_timesteps.get(sid, 0), np.nan)
        v = r[column]
        out[sid][int(r["t"])] = math.nan if v == "" else float(v)
    return out


# -- stages ------------------------------------------------------------------

def stage_gen(cfg: PipelineConfig):
    train = synth.generate_corpus(cfg.corpus.spec(cfg.seed), cfg.path("corpus"), cfg.workers)
    held = synth.generate_corpus(cfg.eval_corpus.spec(cfg.seed), cfg.path("eval_corpus"), cfg.workers)
    return {"scenarios": cfg.corpus.num_scenarios, "events": len(train), "eval_events": len(held)}


def _score_one(args):
    s, c, w = args
    return s.id, heuristics.score_scenario(s, c, w)


def stage_score_heuristic(cfg):
    corpus = _corpus(cfg)
    results = _pool_map(_score_one, [(s, cfg.heuristic_constants, cfg.heuristic_weights) for s in corpus],
                        cfg.workers)
    out = cfg.path("scores")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for sid, sc in sorted(results, key=lambda r: r[0]):
        cols = [sc.volatility, sc.interaction, sc.offroad, sc.lanedev, sc.density, sc.combined]
        for t in range(len(sc.defined)):
            rows.append([sid, t] + [_fmt(c[t]) for c in cols] + [int(sc.defined[t])])
    _write_rows(out / "heuristic.csv", ["scenario_id"] + list(heuristics.TABLE_COLUMNS), rows)
    return {"rows": len(rows)}


def _corpus_actions(corpus):
    acts = {}
    for s in corpus:
        a, _ = scouts.expert_actions(s)
        ts = transition_times(s)
        acts[s.id] = (ts, a[ts])
    return acts


def stage_build_histogram(cfg):
    corpus = _corpus(cfg)
    acts = _corpus_actions(corpus)
    all_acts = np.concatenate([a for _, a in acts.values()]) if acts else np.zeros((0, 2))
    h = rarity.build_histogram(all_acts, smoothing_alpha=cfg.smoothing_alpha)
    out = cfg.path("scores")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "action_histogram.json", h.to_json())
    return {"total": h.total}


def stage_score_rarity(cfg):
    hist_path = cfg.path("scores") / "action_histogram.json"
    _require([hist_path], "score-rarity")
    h = rarity.ActionHistogram.from_json(hist_path.read_text())
    acts = _corpus_actions(_corpus(cfg))
    sids = sorted(acts)
    raws = {sid: rarity.rarity_raw(h, acts[sid][1]) for sid in sids}
    flat = np.concatenate([raws[s] for s in sids])
    norm = rarity.normalize_rarity(flat)
    values, pos = {}, 0
    for sid in sids:
        n = len(raws[sid])
        values[sid] = (acts[sid][0], [raws[sid], norm.score[pos:pos + n]])
        pos += n
    _per_timestep_table(cfg.path("scores") / "rarity.csv", values, ["raw", "score"])
    return {"p99_raw": norm.p99_raw}


def _transitions(cfg, name="corpus"):
    corpus = _corpus(cfg, name)
    return corpus, scouts.build_transitions(corpus, cfg.features, workers=cfg.workers)


def stage_train_scouts(cfg):
    _, data = _transitions(cfg)
    models = scouts.train_ensemble(data, cfg.ensemble, cfg.workers)
    out = cfg.path("checkpoints")
    out.mkdir(parents=True, exist_ok=True)
    scouts.save_ensemble(models, out / "scouts.npz")
    _write_rows(out / "scouts_loss.csv", ["fold", "final_loss"],
                [[k, _fmt(m.final_loss)] for k, m in enumerate(models)])
    return {"losses": [m.final_loss for m in models]}


def stage_score_uncertainty(cfg):
    ckpt = cfg.path("checkpoints") / "scouts.npz"
    _require([ckpt], "score-uncertainty")
    models = scouts.load_ensemble(ckpt)
    _, data = _transitions(cfg)
    ds = scouts.score_corpus_uncertainty(models, data)
    values = {sid: (data.ts[data.rows(i)], [ds.raw[data.rows(i)], ds.score[data.rows(i)]])
              for i, sid in enumerate(data.scenario_ids)}
    _per_timestep_table(cfg.path("scores") / "uncertainty.csv", values, ["raw", "score"])
    return {"p99_raw": ds.p99_raw}


def _score_tables(cfg, stage):
    scores = cfg.path("scores")
    needed = [scores / "heuristic.csv", scores / "rarity.csv", scores / "uncertainty.csv"]
    _require(needed, stage)
    corpus = _corpus(cfg)
    T = {s.id: s.num_timesteps for s in corpus}
    heur_rows = _read_rows(needed[0])
    raw_h = {}
    for r in heur_rows:
        cols = ["s_vol", "s_int", "s_off", "s_lane", "s_den", "s_comb"]
        raw_h.setdefault(r["scenario_id"], []).append([math.nan if r[c] == "" else float(r[c]) for c in cols])
    raw_h = {k: np.array(v) for k, v in raw_h.items()}
    return corpus, {
        "heuristic": raw_h,
        "AR": _load_per_timestep(needed[1], "score", T),
        "E": _load_per_timestep(needed[2], "score", T),
    }


def stage_aggregate(cfg):
    corpus, tables = _score_tables(cfg, "aggregate")
    table = {}
    for s in corpus:
        h = tables["heuristic"][s.id]
        hs, _ = curation.aggregate_heuristic_scenario(h[:, :5], cfg.heuristic_weights)
        table[s.id] = {
            "HS": hs,
            "ES": curation.aggregate_percentile_scenario(tables["E"][s.id], curation.SCENARIO_PERCENTILE["ES"]),
            "ARS": curation.aggregate_percentile_scenario(tables["AR"][s.id], curation.SCENARIO_PERCENTILE["ARS"]),
        }
    atomic_write_text(cfg.path("scores") / "scenario_scores.csv", curation.scenario_table_to_csv(table))
    return {"scenarios": len(table)}


def stage_build_index(cfg):
    corpus, tables = _score_tables(cfg, "build-index")
    transitions = {s.id: transition_times(s) for s in corpus}
    strategy_scores = {
        "H": {sid: h[:, 5] for sid, h in tables["heuristic"].items()},
        "E": tables["E"],
        "AR": tables["AR"],
    }
    idx = curation.build_master_index(transitions, strategy_scores, cfg.epsilon)
    out = cfg.path("index")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "master_index.csv", idx.to_csv())
    return {"entries": len(idx)}


def load_index(cfg):
    p = cfg.path("index") / "master_index.csv"
    _require([p], "sampling")
    return curation.MasterIndex.from_csv(p.read_text())


def load_scenario_scores(cfg):
    p = cfg.path("scores") / "scenario_scores.csv"
    _require([p], "sampling")
    return curation.scenario_table_from_csv(p.read_text())


def make_row_sampler(cfg, strategy, idx, scenario_table, data, seed):
    """draw(n) -> transition row indices for one curation strategy."""
    if strategy in curation.SCENARIO_STRATEGIES:
        transitions = {sid: data.ts[data.rows(i)] for i, sid in enumerate(data.scenario_ids)}
        sampler = curation.ScenarioEpochSampler(
            transitions, {sid: v[strategy] for sid, v in scenario_table.items()}, seed, cfg.epsilon)
        return lambda n: scouts.rows_for(data, *sampler.draw(n))
    if len(idx) != len(data.ts) or not np.array_equal(idx.ts, data.ts):
        raise DependencyError("master index does not match the corpus; rerun build-index")
    sampler = curation.TimestepSampler(idx, strategy, seed)
    return sampler.draw


def sample_transitions(cfg, strategy, n, seed=None):
    """n (scenario_id, t) draws under a strategy."""
    seed = cfg.seed if seed is None else seed
    idx = load_index(cfg)
    if strategy in curation.SCENARIO_STRATEGIES:
        table = load_scenario_scores(cfg)
        transitions = {}
        for sid, t in zip(idx.scenario_ids, idx.ts):
            transitions.setdefault(sid, []).append(t)
        sampler = curation.ScenarioEpochSampler(transitions, {k: v[strategy] for k, v in table.items()},
                                                seed, cfg.epsilon)
        pos, ts = sampler.draw(n)
        return [(sampler.scenario_ids[p], int(t)) for p, t in zip(pos, ts)]
    if strategy not in curation.TIMESTEP_STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy}")
    rows = curation.TimestepSampler(idx, strategy, seed).draw(n)
    return [(str(idx.scenario_ids[i]), int(idx.ts[i])) for i in rows]


def policy_spec(cfg):
    p = cfg.policy
    return replace(cfg.ensemble, learning_rate=p.learning_rate, weight_decay=p.weight_decay,
                   batch_size=p.batch_size)


def _write_eval(path, scenario_ids, rows):
    agg = aggregate_metrics(rows)
    body = [[sid] + [_fmt(r[k]) for k in METRIC_NAMES] for sid, r in zip(scenario_ids, rows)]
    body.append(["__aggregate__"] + [_fmt(getattr(agg, k)) for k in METRIC_NAMES])
    _write_rows(path, ["scenario_id"] + list(METRIC_NAMES), body)
    return agg


def stage_eval(cfg):
    _, data = _transitions(cfg)
    idx = load_index(cfg)
    table = load_scenario_scores(cfg)
    held = sorted(_corpus(cfg, "eval_corpus"), key=lambda s: s.id)
    spec = policy_spec(cfg)
    ckpt, reports = cfg.path("checkpoints"), cfg.path("reports") / "eval"
    ckpt.mkdir(parents=True, exist_ok=True)
    reports.mkdir(parents=True, exist_ok=True)
    curves = cfg.path("reports") / "curves"
    curves.mkdir(parents=True, exist_ok=True)
    out = {}
    for strategy in cfg.policy.strategies:
        draw = make_row_sampler(cfg, strategy, idx, table, data, cfg.seed)
        losses = []
        model = scouts.train_policy(data, draw, cfg.policy.steps, spec, cfg.seed, losses)
        scouts.save_ensemble([model], ckpt / f"policy_{strategy}.npz")
        _write_rows(curves / f"{strategy}.csv", ["step", "loss"], [[i + 1, _fmt(l)] for i, l in enumerate(losses)])
        rows = evaluate_scenarios(held, ModelPolicy(model), cfg.features, cfg.workers)
        out[strategy] = _write_eval(reports / f"{strategy}.csv", [s.id for s in held], rows).collision_rate
    return {"collision_rate": out}


def stage_report(cfg):
    reports = cfg.path("reports")
    eval_dir = reports / "eval"
    files = sorted(eval_dir.glob("*.csv")) if eval_dir.is_dir() else []
    if not files:
        raise DependencyError(f"no evaluation results under {eval_dir}; run `curator eval` first")
    metrics = {}
    for f in files:
        agg = [r for r in _read_rows(f) if r["scenario_id"] == "__aggregate__"]
        if not agg:
            raise EmptyInput(f"{f} has no aggregate row")
        metrics[f.stem] = {k: (None if agg[0][k] == "" else float(agg[0][k])) for k in METRIC_NAMES}
    strategies = [s for s in curation.STRATEGIES if s in metrics] + sorted(set(metrics) - set(curation.STRATEGIES))
    _write_rows(reports / "metrics.csv", ["metric"] + strategies,
                [[k] + [_fmt(metrics[s][k]) for s in strategies] for k in METRIC_NAMES])
    doc = {"strategies": strategies, "metrics": {k: {s: metrics[s][k] for s in strategies} for k in METRIC_NAMES}}
    atomic_write_text(reports / "metrics.json", json.dumps(doc, indent=1, allow_nan=False) + "\n")
    summary = score_summary(cfg)
    if summary:
        cols = ["count", "mean", "p50", "p90", "p99", "max"]
        _write_rows(reports / "score_summary.csv", ["strategy"] + cols,
                    [[s] + [_fmt(summary[s][c]) for c in cols] for s in summary])
        atomic_write_text(reports / "score_summary.json", json.dumps(summary, indent=1, allow_nan=False) + "\n")
    return {"strategies": strategies}


def score_summary(cfg):
    """Distribution of sampling scores per strategy (weights minus epsilon)."""
    out = {}
    idx_path = cfg.path("index") / "master_index.csv"
    if idx_path.exists():
        idx = curation.MasterIndex.from_csv(idx_path.read_text())
        for name in ("H", "E", "AR"):
            w = idx.weights[name]
            out[name] = _summary(w[w > 0] - cfg.epsilon)
    table_path = cfg.path("scores") / "scenario_scores.csv"
    if table_path.exists():
        table = curation.scenario_table_from_csv(table_path.read_text())
        for name in curation.SCENARIO_STRATEGIES:
            out[name] = _summary(np.array([v[name] for v in table.values()]))
    return out


def _summary(v):
    v = np.asarray(v, dtype=float)
    if not len(v):
        return {"count": 0, "mean": None, "p50": None, "p90": None, "p99": None, "max": None}
    return {"count": int(len(v)), "mean": float(v.mean()), "p50": curation.percentile(v, 50.0),
            "p90": curation.percentile(v, 90.0), "p99": curation.percentile(v, 99.0), "max": float(v.max())}


def evaluate_policy_file(corpus_dir, policy, report_path, cfg: PipelineConfig = PipelineConfig()):
    """Evaluate one policy ("expert", "constant:a,w" or a checkpoint) on a corpus directory."""
    if not scenario_paths(corpus_dir):
        raise DependencyError(f"{corpus_dir} holds no scenarios")
    scenarios = sorted(load_corpus(corpus_dir), key=lambda s: s.id)
    if policy == "expert":
        pi = ExpertReplayPolicy()
    elif policy.startswith("constant:"):
        try:
            a, w = (float(v) for v in policy.split(":", 1)[1].split(","))
        except ValueError as exc:
            raise ConfigError(f"constant policy must look like constant:a,w, got {policy}") from exc
        pi = ConstantPolicy(a, w)
    else:
        _require([policy], "eval")
        pi = ModelPolicy(scouts.load_ensemble(policy)[0])
    rows = evaluate_scenarios(scenarios, pi, cfg.features, cfg.workers)
    Path(report_path).parent.mkdir(parents=True, exist_ok=True)
    return _write_eval(report_path, [s.id for s in scenarios], rows)


STAGE_FUNCS = {
    "gen": stage_gen, "score-heuristic": stage_score_heuristic, "build-histogram": stage_build_histogram,
    "score-rarity": stage_score_rarity, "train-scouts": stage_train_scouts,
    "score-uncertainty": stage_score_uncertainty, "aggregate": stage_aggregate,
    "build-index": stage_build_index, "eval": stage_eval, "report": stage_report,
}


def run_stage(cfg: PipelineConfig, stage):
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    start = time.perf_counter()
    info = STAGE_FUNCS[stage](cfg)
    elapsed = time.perf_counter() - start
    log.info("stage %s done in %.2fs", stage, elapsed)
    logs = Path(cfg.out) / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    with open(logs / "stages.jsonl", "a") as f:
        f.write(json.dumps({"stage": stage, "seconds": round(elapsed, 3), "info": _jsonable(info)}) + "\n")
    return info


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def run_pipeline(cfg: PipelineConfig, stages=STAGES):
    """Run stages in the canonical order; returns 0 on success.

    Errors propagate as CuratorError subclasses so callers can map them to
    exit codes.
    """
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages: {', '.join(unknown)}")
    for stage in [s for s in STAGES if s in stages]:
        run_stage(cfg, stage)
    return 0
