"""Gentle AdaBoost over regression stumps, the late-integration baseline.

Each round fits the weighted-least-squares optimal stump across every
feature and candidate threshold, adds its real-valued output to the
ensemble, and reweights samples multiplicatively.  Scores are the plain
sum of stump outputs.
"""

from dataclasses import dataclass

import numpy as np

from . import accel
from .samples import SampleSet

DEFAULT_ROUNDS = 200
MAX_THRESHOLDS = 256
_W_EPS = 1e-12


@dataclass(frozen=True)
class Stump:
    """Axis-aligned split: value <= threshold scores left, else right."""

    feature: int
    threshold: float
    left: float
    right: float

    def __post_init__(self):
        if self.feature < 0:
            raise ValueError("feature index must be non-negative")
        for v in (self.threshold, self.left, self.right):
            if not np.isfinite(v):
                raise ValueError("stump parameters must be finite")


@dataclass(frozen=True)
class BoostModel:
    stumps: tuple[Stump, ...]

    def __post_init__(self):
        if len(self.stumps) < 1:
            raise ValueError("model needs at least one stump")

    @property
    def rounds(self) -> int:
        return len(self.stumps)


def _candidates(col: np.ndarray) -> np.ndarray:
    """Midpoints of consecutive distinct values, quantile-thinned to a cap."""
    uniq = np.unique(col)
    mids = 0.5 * (uniq[:-1] + uniq[1:])
    # adjacent floats can average onto an endpoint, and such a split would
    # count samples differently at fit and predict time; drop those
    mids = mids[(mids > uniq[:-1]) & (mids < uniq[1:])]
    if mids.size > MAX_THRESHOLDS:
        pick = np.round(np.linspace(0, mids.size - 1, MAX_THRESHOLDS))
        mids = mids[np.unique(pick.astype(np.int64))]
    return mids


def boost_train(s: SampleSet, t: int = DEFAULT_ROUNDS) -> BoostModel:
    """Fit up to t rounds of gentle boosting on labelled samples."""
    if s.y is None:
        raise ValueError("samples carry no labels")
    if not s.both_classes_present():
        raise ValueError("need both classes to boost")
    if t < 1:
        raise ValueError(f"rounds must be >= 1, got {t}")
    accel.warmup()
    x = s.x
    n, d = x.shape
    orders = np.argsort(x, axis=0, kind="stable").T.copy()
    sorted_cols = np.sort(x, axis=0).T
    cands = [_candidates(x[:, f]) for f in range(d)]
    nc = max(c.size for c in cands)
    if nc == 0:
        raise ValueError("every feature is constant; nothing to split")
    # ragged candidate lists are padded with split position 0, which puts
    # zero weight on the left and is skipped by the scan
    thresholds = np.full((d, nc), np.nan)
    split_idx = np.zeros((d, nc), dtype=np.int64)
    for f in range(d):
        cf = cands[f]
        thresholds[f, : cf.size] = cf
        split_idx[f, : cf.size] = np.searchsorted(sorted_cols[f], cf)

    y = s.y
    w = np.full(n, 1.0 / n)
    stumps: list[Stump] = []
    for _ in range(t):
        w_sorted = w[orders]
        wz_sorted = (w * y)[orders]
        err, c_best, left, right = accel.stump_scan(w_sorted, wz_sorted, split_idx)
        f = int(np.argmin(err))
        if not np.isfinite(err[f]):
            break  # remaining weight sits on one side of every candidate
        c = int(c_best[f])
        st = Stump(f, float(thresholds[f, c]), float(left[f]), float(right[f]))
        stumps.append(st)
        h = np.where(x[:, f] <= st.threshold, st.left, st.right)
        w = w * np.exp(-y * h)
        total = w.sum()
        if total <= 0.0:
            break
        w = w / total
        if w.max() >= 1.0 - _W_EPS:
            break  # all mass on one sample
    return BoostModel(stumps=tuple(stumps))


def _check_width(m: BoostModel, width: int):
    need = max(st.feature for st in m.stumps) + 1
    if width < need:
        raise ValueError(f"input has {width} features, model indexes {need - 1}")


def boost_score(m: BoostModel, x) -> float:
    """Additive stump score of a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D feature vector, got shape {x.shape}")
    _check_width(m, x.size)
    total = 0.0
    for st in m.stumps:
        total += st.left if x[st.feature] <= st.threshold else st.right
    return total


def boost_score_many(m: BoostModel, rows) -> np.ndarray:
    """Scores for a (n, d) batch of feature vectors."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-D batch, got shape {rows.shape}")
    _check_width(m, rows.shape[1])
    fidx = np.array([st.feature for st in m.stumps], dtype=np.int64)
    thr = np.array([st.threshold for st in m.stumps])
    lv = np.array([st.left for st in m.stumps])
    rv = np.array([st.right for st in m.stumps])
    return np.where(rows[:, fidx] <= thr, lv, rv).sum(axis=1)
