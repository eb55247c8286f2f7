"""Kernel functions, Gram construction and spherical normalization."""

from dataclasses import dataclass

import numpy as np

from .samples import SampleSet

KINDS = ("linear", "polynomial", "gaussian")


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    group: str = "all"
    q: int = 2
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial":
            if int(self.q) != self.q or self.q < 1:
                raise ValueError("polynomial degree must be an integer >= 1")
        if self.kind == "gaussian":
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("gaussian kernel needs gamma > 0")


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    spec: KernelSpec
    scale: np.ndarray | None = None  # pre-normalization diagonal, if normalized

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def eval_kernel(spec: KernelSpec, a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("kernel arguments must share dimension")
    if spec.kind == "linear":
        return float(a @ b)
    if spec.kind == "polynomial":
        return float((a @ b + 1.0) ** spec.q)
    return float(np.exp(-spec.gamma * np.sum((a - b) ** 2)))


def _sqdist(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    na = np.sum(xa * xa, axis=1)[:, None]
    nb = np.sum(xb * xb, axis=1)[None, :]
    d2 = na + nb - 2.0 * (xa @ xb.T)
    return np.maximum(d2, 0.0)


def gram_matrix(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Symmetric kernel matrix of one point set against itself."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "linear":
        g = x @ x.T
    elif spec.kind == "polynomial":
        g = (x @ x.T + 1.0) ** spec.q
    else:
        d2 = _sqdist(x, x)
        np.fill_diagonal(d2, 0.0)
        g = np.exp(-spec.gamma * d2)
    return (g + g.T) * 0.5


def cross_gram(spec: KernelSpec, xq: np.ndarray, xt: np.ndarray) -> np.ndarray:
    """Kernel rows of query points against training points."""
    xq = np.asarray(xq, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if xq.shape[1] != xt.shape[1]:
        raise ValueError("query and train dimensions differ")
    if spec.kind == "linear":
        return xq @ xt.T
    if spec.kind == "polynomial":
        return (xq @ xt.T + 1.0) ** spec.q
    return np.exp(-spec.gamma * _sqdist(xq, xt))


def gram(spec: KernelSpec, s: SampleSet) -> GramMatrix:
    return GramMatrix(gram_matrix(spec, s.restrict(spec.group)), spec)


def normalize_spherical(g: GramMatrix) -> GramMatrix:
    """Rescale to unit diagonal: g_ij / sqrt(g_ii g_jj)."""
    e = g.entries
    d = np.diag(e).copy()
    if np.any(d <= 0):
        raise ValueError("spherical normalization needs positive diagonal")
    inv = 1.0 / np.sqrt(d)
    out = e * inv[:, None] * inv[None, :]
    np.fill_diagonal(out, 1.0)
    return GramMatrix(out, g.spec, scale=d)


def normalize_cross(rows: np.ndarray, diag_query: np.ndarray, diag_train: np.ndarray) -> np.ndarray:
    """Query-side counterpart of normalize_spherical."""
    return rows / np.sqrt(np.outer(diag_query, diag_train))


def self_kernel_diag(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """k(x, x) per row, the query-side normalization scale."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "linear":
        return np.sum(x * x, axis=1)
    if spec.kind == "polynomial":
        return (np.sum(x * x, axis=1) + 1.0) ** spec.q
    return np.ones(x.shape[0])


def default_gamma(s: SampleSet, group: str, max_pairs: int = 2000, seed: int = 0) -> float:
    """1 / median of pairwise squared distances, zero distances excluded."""
    x = s.restrict(group)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        iu = np.triu_indices(n, k=1)
        d2 = np.sum((x[iu[0]] - x[iu[1]]) ** 2, axis=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=2 * max_pairs)
        j = rng.integers(0, n, size=2 * max_pairs)
        keep = i != j
        i, j = i[keep][:max_pairs], j[keep][:max_pairs]
        d2 = np.sum((x[i] - x[j]) ** 2, axis=1)
    d2 = d2[d2 > 0]
    if d2.size == 0:
        raise ValueError("all pairwise distances are zero")
    return float(1.0 / np.median(d2))
