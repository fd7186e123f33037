"""Global expert-action histogram and smoothed inverse-frequency rarity."""
import json
from dataclasses import dataclass

import numpy as np

from .curation import percentile
from .dynamics import ACCEL_MAX, ACCEL_MIN, YAW_RATE_MAX
from .errors import EmptyInput


def _doubling_edges(base, levels, lo, hi):
    steps = base * 2.0 ** np.arange(levels)
    inner = np.concatenate([-steps[::-1], [0.0], steps])
    inner = inner[(inner > lo) & (inner < hi)]
    return np.concatenate([[lo], inner, [hi]])


def default_edges():
    """Symmetric geometric bin edges, finest around zero.

    Acceleration: 0, +-0.05 * 2**i up to 6.4, closed by the action limits
    (18 bins). Yaw rate: 0, +-0.01 * 2**i up to 0.64, closed by +-1 (16 bins).
    """
    accel = _doubling_edges(0.05, 8, ACCEL_MIN, ACCEL_MAX)
    yaw = _doubling_edges(0.01, 7, -YAW_RATE_MAX, YAW_RATE_MAX)
    return accel, yaw


def bin_index(edges, values):
    """Bin of each value; the top edge belongs to the last bin."""
    edges = np.asarray(edges, dtype=float)
    v = np.clip(np.asarray(values, dtype=float), edges[0], edges[-1])
    return np.clip(np.searchsorted(edges, v, side="right") - 1, 0, len(edges) - 2)


@dataclass
class ActionHistogram:
    accel_edges: np.ndarray
    yaw_edges: np.ndarray
    counts: np.ndarray
    smoothing_alpha: float = 1.0

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def num_bins(self):
        return self.counts.size

    def bins(self, actions):
        a = np.asarray(actions, dtype=float).reshape(-1, 2)
        return bin_index(self.accel_edges, a[:, 0]), bin_index(self.yaw_edges, a[:, 1])

    def merge(self, other: "ActionHistogram") -> "ActionHistogram":
        if not (np.array_equal(self.accel_edges, other.accel_edges)
                and np.array_equal(self.yaw_edges, other.yaw_edges)):
            raise ValueError("cannot merge histograms with different edges")
        return ActionHistogram(self.accel_edges, self.yaw_edges, self.counts + other.counts,
                               self.smoothing_alpha)

    def to_json(self) -> str:
        return json.dumps({
            "accel_edges": self.accel_edges.tolist(),
            "yaw_edges": self.yaw_edges.tolist(),
            "counts": self.counts.tolist(),
            "total": self.total,
            "smoothing_alpha": self.smoothing_alpha,
        }, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ActionHistogram":
        d = json.loads(text)
        h = cls(np.array(d["accel_edges"]), np.array(d["yaw_edges"]),
                np.array(d["counts"], dtype=np.int64), float(d["smoothing_alpha"]))
        if h.total != d["total"]:
            raise ValueError("histogram counts do not sum to the stored total")
        return h


def empty_histogram(edges=None, smoothing_alpha=1.0) -> ActionHistogram:
    accel, yaw = default_edges() if edges is None else edges
    return ActionHistogram(np.asarray(accel, dtype=float), np.asarray(yaw, dtype=float),
                           np.zeros((len(accel) - 1, len(yaw) - 1), dtype=np.int64), smoothing_alpha)


def build_histogram(actions, edges=None, smoothing_alpha=1.0) -> ActionHistogram:
    h = empty_histogram(edges, smoothing_alpha)
    a = np.asarray(actions, dtype=float).reshape(-1, 2)
    if len(a):
        i, j = h.bins(a)
        np.add.at(h.counts, (i, j), 1)
    return h


def rarity_raw(h: ActionHistogram, actions):
    """1 / p with p = (count + alpha) / (total + alpha * B), per action."""
    i, j = h.bins(actions)
    alpha = h.smoothing_alpha
    p = (h.counts[i, j] + alpha) / (h.total + alpha * h.num_bins)
    return 1.0 / p


@dataclass
class RarityScores:
    raw: np.ndarray
    score: np.ndarray
    p99_raw: float


def normalize_rarity(raws, p99_raw=None) -> RarityScores:
    raws = np.asarray(raws, dtype=float)
    if raws.size == 0:
        raise EmptyInput("no rarity values to normalize")
    if p99_raw is None:
        p99_raw = percentile(raws, 99.0)
    score = np.clip(raws / p99_raw, 0.0, 1.0) if p99_raw > 0 else np.zeros_like(raws)
    return RarityScores(raws, score, float(p99_raw))
