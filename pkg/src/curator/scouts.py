"""Behavioral-cloning scouts: a K-fold ensemble of small MLPs whose
disagreement measures epistemic uncertainty per transition.

Actions are regressed in normalized units where the acceleration range
[-10, 8] maps to [-1, 1] and the yaw rate is already in [-1, 1].
"""
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .curation import percentile
from .dynamics import ACCEL_MAX, ACCEL_MIN, YAW_RATE_MAX, inverse_actions
from .errors import CorpusTooSmall, CuratorIOError, DimensionMismatch, TooFewModels
from .features import FeatureConfig, featurize
from .scenario import transition_times

ACCEL_MID = (ACCEL_MAX + ACCEL_MIN) / 2
ACCEL_HALF = (ACCEL_MAX - ACCEL_MIN) / 2


def normalize_actions(actions):
    a = np.asarray(actions, dtype=float)
    return np.stack([(a[..., 0] - ACCEL_MID) / ACCEL_HALF, a[..., 1] / YAW_RATE_MAX], axis=-1)


def denormalize_actions(y):
    y = np.asarray(y, dtype=float)
    return np.stack([y[..., 0] * ACCEL_HALF + ACCEL_MID, y[..., 1] * YAW_RATE_MAX], axis=-1)


@dataclass(frozen=True)
class EnsembleSpec:
    K: int = 5
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 256
    epochs: int = 20
    k_samples_per_scenario: int = 2
    seed: int = 0
    hidden: tuple = (256, 128)

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        for name in ("learning_rate", "batch_size", "epochs", "k_samples_per_scenario"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


# -- model -------------------------------------------------------------------

@dataclass
class ScoutModel:
    """Feed-forward regressor; inputs are standardized with stored statistics."""

    weights: list
    biases: list
    feature_mean: np.ndarray
    feature_std: np.ndarray
    final_loss: float = float("nan")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    def params(self):
        return self.weights + self.biases


def init_model(layer_sizes, rng, feature_mean=None, feature_std=None) -> ScoutModel:
    """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    d = layer_sizes[0]
    mean = np.zeros(d) if feature_mean is None else np.asarray(feature_mean, dtype=float)
    std = np.ones(d) if feature_std is None else np.asarray(feature_std, dtype=float)
    return ScoutModel(ws, bs, mean, std)


def _forward(m: ScoutModel, z):
    """Forward pass on standardized inputs, keeping activations for backprop."""
    acts = [z]
    h = z
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def standardize(m: ScoutModel, x):
    return (np.asarray(x, dtype=float) - m.feature_mean) / m.feature_std


def predict_batch(m: ScoutModel, x):
    x = np.atleast_2d(x)
    if x.shape[1] != m.input_dim:
        raise DimensionMismatch(f"expected {m.input_dim} features, got {x.shape[1]}")
    return _forward(m, standardize(m, x))[-1]


def predict(m: ScoutModel, x):
    """Normalized (accel, yaw_rate) prediction for one flat feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("predict takes a single flat feature vector")
    return predict_batch(m, x[None])[0]


def loss_and_grads(m: ScoutModel, z, y):
    """Mean squared error over batch and output dims, and its gradients.

    z are standardized inputs. Returns (loss, weight grads, bias grads).
    """
    acts = _forward(m, z)
    out = acts[-1]
    diff = out - y
    loss = float(np.mean(diff ** 2))
    g = 2.0 * diff / diff.size
    gw, gb = [None] * len(m.weights), [None] * len(m.weights)
    for i in range(len(m.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ m.weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


class AdamW:
    """Adaptive moments with decoupled weight decay on every parameter."""

    def __init__(self, params, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.weight_decay = lr, weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            p *= 1.0 - self.lr * self.weight_decay
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- data --------------------------------------------------------------------

@dataclass
class TransitionData:
    """Flat features and normalized expert actions for every valid transition.

    Rows are grouped by scenario in ascending id order; `offsets[i]` is the
    first row of scenario i and `ts` the transition time of each row.
    """

    scenario_ids: list
    offsets: np.ndarray
    ts: np.ndarray
    x: np.ndarray
    y: np.ndarray
    clipped: np.ndarray = field(default=None)

    def rows(self, i):
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @property
    def groups(self):
        return np.repeat(np.arange(len(self.scenario_ids)), np.diff(self.offsets))


def expert_actions(s):
    """(T - 1, 2) physical expert actions and clipped flags from the SDC log."""
    a = s.sdc
    return inverse_actions(a.yaw, a.speed, s.dt)


def _scenario_rows(args):
    s, cfg, dtype = args
    ts = transition_times(s)
    acts, clipped = expert_actions(s)
    return ts, featurize(s, ts, cfg, dtype), normalize_actions(acts[ts]), clipped[ts]


def build_transitions(scenarios, cfg: FeatureConfig = FeatureConfig(), dtype=np.float32, workers=1):
    scenarios = sorted(scenarios, key=lambda s: s.id)
    jobs = [(s, cfg, dtype) for s in scenarios]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("fork")) as pool:
            parts = list(pool.map(_scenario_rows, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        parts = [_scenario_rows(j) for j in jobs]
    counts = [len(p[0]) for p in parts]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    dim = cfg.flat_dim
    return TransitionData(
        scenario_ids=[s.id for s in scenarios], offsets=offsets,
        ts=np.concatenate([p[0] for p in parts]).astype(np.int64) if parts else np.zeros(0, np.int64),
        x=np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, dim), dtype),
        y=np.concatenate([p[2] for p in parts]) if parts else np.zeros((0, 2)),
        clipped=np.concatenate([p[3] for p in parts]) if parts else np.zeros(0, bool),
    )


# -- folds and training ------------------------------------------------------

def assign_folds(scenario_ids, K, seed):
    """Deterministic shuffle of the sorted ids, split into K near-equal folds."""
    ids = sorted(scenario_ids)
    if len(ids) < K:
        raise CorpusTooSmall(f"{len(ids)} scenarios cannot form {K} folds")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed)])).permutation(len(ids))
    folds = {}
    for k, chunk in enumerate(np.array_split(perm, K)):
        for i in chunk:
            folds[ids[i]] = k
    return folds


def feature_stats(x, floor=1e-6, chunk=8192):
    """Per-dimension mean and std (dims with std <= floor get std 1)."""
    n = len(x)
    total = np.zeros(x.shape[1])
    for start in range(0, n, chunk):
        total += np.asarray(x[start:start + chunk], dtype=np.float64).sum(axis=0)
    mean = total / n
    sq = np.zeros(x.shape[1])
    for start in range(0, n, chunk):
        sq += ((np.asarray(x[start:start + chunk], dtype=np.float64) - mean) ** 2).sum(axis=0)
    std = np.sqrt(sq / n)
    return mean, np.where(std > floor, std, 1.0)


def train_model(data: TransitionData, scenario_rows, spec: EnsembleSpec, rng, weights=None):
    """Train one regressor on the listed scenarios (indices into data).

    Every epoch draws k_samples_per_scenario transitions (with replacement)
    from each training scenario and visits them in shuffled minibatches.
    `weights` optionally scales each scenario's draw probability per row.
    """
    rows = [np.arange(data.offsets[i], data.offsets[i + 1]) for i in scenario_rows]
    rows = [r for r in rows if len(r)]
    if not rows:
        raise CorpusTooSmall("no training transitions")
    mean, std = feature_stats(data.x[np.concatenate(rows)])
    model = init_model([data.x.shape[1], *spec.hidden, 2], rng, mean, std)
    opt = AdamW(model.params(), spec.learning_rate, spec.weight_decay)
    k = spec.k_samples_per_scenario
    loss = float("nan")
    for _ in range(spec.epochs):
        picks = np.concatenate([r[rng.integers(0, len(r), size=k)] for r in rows])
        picks = picks[rng.permutation(len(picks))]
        total, n = 0.0, 0
        for start in range(0, len(picks), spec.batch_size):
            b = picks[start:start + spec.batch_size]
            z = standardize(model, data.x[b])
            batch_loss, gw, gb = loss_and_grads(model, z, data.y[b])
            opt.step(gw + gb)
            total += batch_loss * len(b)
            n += len(b)
        loss = total / n
    model.final_loss = loss
    return model


_SHARED = {}


def _train_fold(args):
    fold, spec = args
    data, folds = _SHARED["data"], _SHARED["folds"]
    train = [i for i, sid in enumerate(data.scenario_ids) if folds[sid] != fold]
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), fold]))
    with threadpool_limits(1):
        return train_model(data, train, spec, rng)


def train_ensemble(data: TransitionData, spec: EnsembleSpec = EnsembleSpec(), workers=1):
    """K scouts; scout k never sees fold k. Results do not depend on workers."""
    folds = assign_folds(data.scenario_ids, spec.K, spec.seed)
    _SHARED.update(data=data, folds=folds)
    try:
        jobs = [(k, spec) for k in range(spec.K)]
        if workers > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(min(workers, spec.K), mp_context=ctx) as pool:
                return list(pool.map(_train_fold, jobs))
        return [_train_fold(j) for j in jobs]
    finally:
        _SHARED.clear()


# -- disagreement ------------------------------------------------------------

def disagreement(preds):
    """Trace of the population covariance of K predictions.

    preds has shape (K, 2) or (K, n, 2); the result is a scalar or (n,).
    """
    p = np.asarray(preds, dtype=float)
    if p.shape[0] < 2:
        raise TooFewModels(f"need at least 2 predictions, got {p.shape[0]}")
    # shifting by the first prediction keeps identical copies exactly at zero
    out = (p - p[0]).var(axis=0).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass
class DisagreementScores:
    raw: np.ndarray
    score: np.ndarray
    p99_raw: float


def normalize_disagreement(raw, p99_raw=None) -> DisagreementScores:
    raw = np.asarray(raw, dtype=float)
    if p99_raw is None:
        p99_raw = percentile(raw, 99.0)
    score = np.clip(raw / p99_raw, 0.0, 1.0) if p99_raw > 0 else np.zeros_like(raw)
    return DisagreementScores(raw, score, float(p99_raw))


def ensemble_predictions(models, x, chunk=4096):
    dims = {m.input_dim for m in models}
    if len(dims) != 1:
        raise DimensionMismatch("models disagree on input_dim")
    out = np.empty((len(models), len(x), 2))
    with threadpool_limits(1):
        for start in range(0, len(x), chunk):
            xb = np.asarray(x[start:start + chunk], dtype=float)
            for k, m in enumerate(models):
                out[k, start:start + len(xb)] = predict_batch(m, xb)
    return out


def score_corpus_uncertainty(models, data: TransitionData) -> DisagreementScores:
    """Raw disagreement for every transition row and its P99 normalization."""
    if len(models) < 2:
        raise TooFewModels("need at least 2 scouts")
    return normalize_disagreement(disagreement(ensemble_predictions(models, data.x)))


def per_scenario(data: TransitionData, values, num_timesteps):
    """Scatter row values into per-scenario (T,) arrays with NaN gaps."""
    out = {}
    for i, sid in enumerate(data.scenario_ids):
        r = data.rows(i)
        a = np.full(num_timesteps[sid] if isinstance(num_timesteps, dict) else num_timesteps, np.nan)
        a[data.ts[r]] = values[r]
        out[sid] = a
    return out


# -- checkpoints -------------------------------------------------------------

def save_ensemble(models, path):
    arrays = {"num_models": np.array(len(models))}
    for k, m in enumerate(models):
        arrays[f"m{k}_layer_sizes"] = np.array(m.layer_sizes)
        arrays[f"m{k}_mean"] = m.feature_mean
        arrays[f"m{k}_std"] = m.feature_std
        arrays[f"m{k}_final_loss"] = np.array(m.final_loss)
        for i, (w, b) in enumerate(zip(m.weights, m.biases)):
            arrays[f"m{k}_w{i}"] = np.ascontiguousarray(w)
            arrays[f"m{k}_b{i}"] = b
    try:
        with open(path, "wb") as f:
            np.savez(f, **arrays)
    except OSError as exc:
        raise CuratorIOError(f"cannot write {path}: {exc}") from exc


def load_ensemble(path):
    try:
        z = np.load(path)
    except OSError as exc:
        raise CuratorIOError(f"cannot read {path}: {exc}") from exc
    with z:
        models = []
        for k in range(int(z["num_models"])):
            n = len(z[f"m{k}_layer_sizes"]) - 1
            models.append(ScoutModel(
                [z[f"m{k}_w{i}"] for i in range(n)], [z[f"m{k}_b{i}"] for i in range(n)],
                z[f"m{k}_mean"], z[f"m{k}_std"], float(z[f"m{k}_final_loss"]),
            ))
    return models


# -- sampler-driven policy training ------------------------------------------

def rows_for(data: TransitionData, scenario_pos, ts):
    """Row indices for (scenario position, transition time) pairs."""
    scenario_pos = np.asarray(scenario_pos, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.int64)
    out = np.empty(len(ts), dtype=np.int64)
    for k in np.unique(scenario_pos):
        sel = scenario_pos == k
        lo, hi = int(data.offsets[k]), int(data.offsets[k + 1])
        out[sel] = lo + np.searchsorted(data.ts[lo:hi], ts[sel])
    return out


def train_policy(data: TransitionData, draw_rows, steps, spec: EnsembleSpec = EnsembleSpec(), seed=0,
                 losses=None):
    """Behavioral cloning where every minibatch comes from draw_rows(n).

    draw_rows returns row indices into `data` (e.g. from a weighted sampler),
    so the data-curation strategy is the only thing that varies between runs.
    Per-step minibatch losses are appended to `losses` when given.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    mean, std = feature_stats(data.x)
    model = init_model([data.x.shape[1], *spec.hidden, 2], rng, mean, std)
    opt = AdamW(model.params(), spec.learning_rate, spec.weight_decay)
    loss = float("nan")
    with threadpool_limits(1):
        for _ in range(steps):
            b = np.asarray(draw_rows(spec.batch_size))
            loss, gw, gb = loss_and_grads(model, standardize(model, data.x[b]), data.y[b])
            opt.step(gw + gb)
            if losses is not None:
                losses.append(loss)
    model.final_loss = loss
    return model
