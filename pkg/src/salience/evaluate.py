"""Fixation AUC, multi-seed experiment runs, and heatmap export."""

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import Dataset, FixationSet, make_split
from .fmap import write_fmap
from .pipeline import (
    METHODS,
    collect_samples,
    external_channels,
    load_stack,
    predict_map,
    train_model,
)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank block."""
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    n = v.size
    starts = np.empty(n, dtype=bool)
    starts[0] = True
    starts[1:] = sv[1:] != sv[:-1]
    group = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    counts = np.diff(np.append(first, n))
    avg = first + (counts + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = avg[group]
    return ranks


def auc(sal: np.ndarray, f: FixationSet) -> float:
    """Rank score of fixated pixels against all unfixated pixels.

    Fixations are mapped to the map's grid; repeated hits on a pixel count
    once. Ties contribute one half, so a constant map scores exactly 0.5.
    """
    sal = np.asarray(sal, dtype=np.float64)
    if sal.ndim != 2:
        raise ValueError("saliency map must be 2-D")
    h, w = sal.shape
    cols = np.clip(np.floor(f.x * (w / f.width)).astype(np.intp), 0, w - 1)
    rows = np.clip(np.floor(f.y * (h / f.height)).astype(np.intp), 0, h - 1)
    pos = np.unique(rows * w + cols)
    n_pos = pos.size
    n_neg = sal.size - n_pos
    if n_neg == 0:
        raise ValueError("every pixel is fixated, no negatives left")
    ranks = _average_ranks(sal.ravel())
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class AucResult:
    runs: tuple

    def __post_init__(self):
        if not self.runs:
            raise ValueError("a result needs at least one run")

    @property
    def mean(self) -> float:
        return float(np.mean(self.runs))

    @property
    def std(self) -> float:
        return float(np.std(self.runs))

    @property
    def best(self) -> float:
        return float(max(self.runs))


def _format_table(results: dict) -> str:
    head = ("method", "features", "mean", "std", "best", "runs")
    body = []
    for (method, label) in sorted(results):
        r = results[(method, label)]
        body.append((method, label, f"{r.mean:.4f}", f"{r.std:.4f}",
                     f"{r.best:.4f}", str(len(r.runs))))
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
             for row in [head] + body]
    return "\n".join(lines)


def run_experiment(ds: Dataset, methods, feature_sets: dict, seeds,
                   n_train: int, out_dir=None, cache_dir=None,
                   params: dict | None = None, stride: int = 4,
                   n_pos: int = 10, n_neg: int = 10, smooth: float | None = None,
                   n_test: int | None = None):
    """Train and score every (method, feature set) over the given seeds.

    Each seed draws its own split; a failure inside a seed drops that seed
    for every cell so results stay comparable. Raises when more than half
    the seeds fail. smooth=None blurs each map with the same sigma the
    fixation density uses (3% of the short side); pass 0 to disable.
    n_test caps how many held-out images are scored per seed. Returns
    (results, table_text) and optionally writes runs.csv and summary.csv
    under out_dir.
    """
    methods = list(methods)
    seeds = list(seeds)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if not methods or not seeds or not feature_sets:
        raise ValueError("need at least one method, one seed, and one feature set")
    if n_test is not None and n_test < 1:
        raise ValueError("n_test must be at least 1")
    n_ext = external_channels(ds)
    per_seed = []  # (seed, {(method, label): auc})
    failures = []
    for seed in seeds:
        try:
            split = make_split(ds, n_train, seed=seed)
            cell = {}
            for label, config in feature_sets.items():
                s = collect_samples(ds, split.train, config, seed=seed,
                                    cache_dir=cache_dir, n_ext=n_ext,
                                    n_pos=n_pos, n_neg=n_neg)
                held_out = split.test if n_test is None else split.test[:n_test]
                stacks = [(tid, load_stack(ds, tid, config, cache_dir, n_ext))
                          for tid in held_out]
                for method in methods:
                    bundle = train_model(method, s, params)
                    scores = []
                    for tid, stack in stacks:
                        sig = smooth
                        if sig is None:
                            sig = 0.03 * min(stack.height, stack.width)
                        sal = predict_map(bundle, stack, stride=stride, smooth=sig)
                        scores.append(auc(sal, ds.fixations(tid)))
                    cell[(method, label)] = float(np.mean(scores))
            per_seed.append((seed, cell))
        except Exception as exc:  # noqa: BLE001 - a bad seed must not kill the run
            failures.append((seed, f"{type(exc).__name__}: {exc}"))
    if 2 * len(failures) > len(seeds):
        detail = "; ".join(f"seed {s}: {msg}" for s, msg in failures)
        raise RuntimeError(f"{len(failures)} of {len(seeds)} seeds failed: {detail}")
    results = {}
    for method in methods:
        for label in feature_sets:
            key = (method, label)
            results[key] = AucResult(runs=tuple(cell[key] for _, cell in per_seed))
    table = _format_table(results)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "runs.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "features", "run", "auc"])
            for method, label in sorted(results):
                for seed, cell in per_seed:
                    writer.writerow([method, label, seed,
                                     f"{cell[(method, label)]:.6f}"])
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "features", "mean", "std", "best"])
            for method, label in sorted(results):
                r = results[(method, label)]
                writer.writerow([method, label, f"{r.mean:.6f}",
                                 f"{r.std:.6f}", f"{r.best:.6f}"])
    return results, table


def export_heatmap(path, sal: np.ndarray, display: bool = False) -> None:
    """Write an 8-bit PNG view plus the raw scores as a float32 raster.

    A constant map renders mid-gray. The display flag applies an
    exponential emphasis curve to the normalized values before quantizing;
    the raster next to the PNG always keeps the untouched scores.
    """
    sal = np.asarray(sal, dtype=np.float64)
    if sal.ndim != 2:
        raise ValueError("saliency map must be 2-D")
    if not np.all(np.isfinite(sal)):
        raise ValueError("saliency map holds non-finite values")
    lo, hi = sal.min(), sal.max()
    norm = (sal - lo) / (hi - lo) if hi > lo else np.full(sal.shape, 0.5)
    shown = np.exp(4.0 * (norm - 1.0)) if display else norm
    u8 = (np.clip(shown, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    buf = io.BytesIO()
    Image.fromarray(u8, "L").save(buf, format="PNG")
    path.write_bytes(buf.getvalue())
    write_fmap(path.with_suffix(".fmap"), sal.astype(np.float32))
