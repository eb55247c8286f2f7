"""SMO solver for the hinge-loss dual, plus the linear baseline."""

from dataclasses import dataclass

import numpy as np

from . import accel
from .kernels import GramMatrix, KernelSpec, gram_matrix
from .samples import SampleSet

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100_000


class SmoDidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class SvmModel:
    alpha: np.ndarray
    b: float
    c: float
    support: np.ndarray  # indices with meaningful alpha
    y: np.ndarray
    iterations: int


def _entries(g) -> np.ndarray:
    return g.entries if isinstance(g, GramMatrix) else np.asarray(g, dtype=np.float64)


def dual_objective(k: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    beta = alpha * y
    return float(np.sum(alpha) - 0.5 * beta @ k @ beta)


def duality_gap(k: np.ndarray, y: np.ndarray, alpha: np.ndarray, b: float, c: float) -> float:
    beta = alpha * y
    f = k @ beta + b
    primal = 0.5 * beta @ k @ beta + c * np.sum(np.maximum(0.0, 1.0 - y * f))
    return float(primal - dual_objective(k, y, alpha))


def smo_solve(
    g,
    y,
    c: float = 1.0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    beta0: np.ndarray | None = None,
    debug: bool = False,
) -> SvmModel:
    """Maximize the box-constrained dual by maximal-violating-pair updates.

    beta0 warm-starts from a feasible beta = alpha*y (used by the MKL
    outer loops); debug asserts the dual never decreases step to step.
    """
    k = np.ascontiguousarray(_entries(g), dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    if k.shape != (n, n):
        raise ValueError("kernel matrix and labels disagree on sample count")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise ValueError("training needs both classes")
    if not c > 0:
        raise ValueError("C must be positive")

    lo = np.where(y > 0, 0.0, -c)
    hi = np.where(y > 0, c, 0.0)
    if beta0 is None:
        beta = np.zeros(n)
        grad = y.copy()
    else:
        beta = np.clip(np.asarray(beta0, dtype=np.float64).copy(), lo, hi)
        grad = y - k @ beta

    accel.warmup()
    if debug:
        it = 0
        w_prev = -np.inf
        while it < max_iter:
            step = accel.smo_core(k, beta, grad, lo, hi, tol, 1)
            if step == 0:
                break
            it += 1
            alpha_now = beta * y
            w_now = dual_objective(k, y, alpha_now)
            assert w_now >= w_prev - 1e-9, "dual objective decreased"
            w_prev = w_now
    else:
        it = accel.smo_core(k, beta, grad, lo, hi, tol, max_iter)

    if it >= max_iter:
        # converged exactly at the budget is fine; a live violating pair is not
        if _max_gap(beta, grad, lo, hi) >= tol:
            raise SmoDidNotConverge(f"no convergence after {max_iter} pair updates")

    alpha = beta * y
    b = _bias(beta, grad, lo, hi, c)
    thresh = 1e-8 * min(1.0, c)
    support = np.flatnonzero(alpha > thresh)
    if support.size == 0:
        support = np.flatnonzero(alpha == alpha.max())
    return SvmModel(alpha=alpha, b=b, c=c, support=support, y=y, iterations=it)


def _max_gap(beta, grad, lo, hi) -> float:
    up = beta < hi
    dn = beta > lo
    if not up.any() or not dn.any():
        return 0.0
    return float(np.max(grad[up]) - np.min(grad[dn]))


def _bias(beta, grad, lo, hi, c) -> float:
    alpha_abs = np.abs(beta)
    margin = 1e-8 * max(c, 1.0)
    free = (alpha_abs > margin) & (alpha_abs < c - margin)
    if free.any():
        return float(np.mean(grad[free]))
    up = beta < hi
    dn = beta > lo
    gi = np.max(grad[up]) if up.any() else 0.0
    gj = np.min(grad[dn]) if dn.any() else 0.0
    return float(0.5 * (gi + gj))


def decision(m: SvmModel, k_row: np.ndarray) -> float:
    """Discriminant value from kernel evaluations against the support set."""
    k_row = np.asarray(k_row, dtype=np.float64).ravel()
    if k_row.size != m.support.size:
        raise ValueError("kernel row length must equal support count")
    sv = m.support
    return float(np.sum(m.alpha[sv] * m.y[sv] * k_row) + m.b)


def decision_many(m: SvmModel, k_rows: np.ndarray) -> np.ndarray:
    """decision() over a (q, n_support) block of kernel rows."""
    k_rows = np.asarray(k_rows, dtype=np.float64)
    if k_rows.shape[1] != m.support.size:
        raise ValueError("kernel row length must equal support count")
    sv = m.support
    return k_rows @ (m.alpha[sv] * m.y[sv]) + m.b


@dataclass(frozen=True)
class LinearModel:
    w: np.ndarray
    b: float
    c: float


def linear_svm_train(s: SampleSet, c: float = 1.0, tol: float = DEFAULT_TOL) -> LinearModel:
    """Linear-kernel SMO, folded down to an explicit weight vector."""
    if s.y is None or not s.both_classes_present():
        raise ValueError("training needs labeled samples from both classes")
    k = gram_matrix(KernelSpec("linear"), s.x)
    m = smo_solve(k, s.y, c=c, tol=tol)
    w = s.x.T @ (m.alpha * m.y)
    return LinearModel(w=w, b=m.b, c=c)


def linear_decision(m: LinearModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x @ m.w + m.b
