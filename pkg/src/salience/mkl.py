"""Combine per-group kernels: product rule, learned polynomial, learned gating.

All three schemes train an inner SVM on the combined Gram.  The learned
schemes alternate SMO with a parameter step that lowers the SMO-optimal
dual objective; a lower dual at the optimum means a larger margin, so
kernel mass flows toward the groups that separate the data.
"""

from dataclasses import dataclass, field

import numpy as np

from .svm import SvmModel, decision, decision_many, dual_objective, smo_solve

DEFAULT_STEP = 0.1
MIN_STEP = 1e-6
PARAM_TOL = 1e-4
MAX_OUTER = 50
LOGIT_LIMIT = 30.0


@dataclass(frozen=True)
class KernelBank:
    entries: list  # P matrices, n x n, spherically normalized
    names: list

    def __post_init__(self):
        if len(self.entries) < 1:
            raise ValueError("kernel bank must hold at least one matrix")
        if len(self.names) != len(self.entries):
            raise ValueError("one name per kernel")
        n = self.entries[0].shape[0]
        for e in self.entries:
            if e.shape != (n, n):
                raise ValueError("bank matrices must share dimensions")

    @property
    def p(self) -> int:
        return len(self.entries)

    @property
    def n(self) -> int:
        return self.entries[0].shape[0]


@dataclass(frozen=True)
class MklModel:
    scheme: str  # rbmkl | nlmkl | lmkl
    svm: SvmModel
    names: list
    eta: np.ndarray | None = None  # nlmkl kernel weights
    degree: int = 2
    lam: float = 1.0
    gate_v: np.ndarray | None = None  # lmkl gating matrix (P, Dg)
    gate_v0: np.ndarray | None = None  # lmkl gating offsets (P,)
    eta_support: np.ndarray | None = None  # lmkl gating weights at supports (n_sv, P)
    outer_iterations: int = 0
    dual_trace: tuple = field(default_factory=tuple)


def rbmkl_combine(bank: KernelBank) -> np.ndarray:
    """Elementwise product of all bank matrices."""
    out = bank.entries[0]
    if bank.p == 1:
        return out
    out = out.copy()
    for e in bank.entries[1:]:
        out *= e
    return out


def rbmkl_train(bank: KernelBank, y, c: float = 1.0, tol: float = 1e-3) -> MklModel:
    m = smo_solve(rbmkl_combine(bank), y, c=c, tol=tol)
    return MklModel(scheme="rbmkl", svm=m, names=list(bank.names))


def _project_eta(eta: np.ndarray, lam: float) -> np.ndarray:
    e = np.maximum(eta, 0.0)
    nrm = float(np.linalg.norm(e))
    if nrm > lam:
        e = e * (lam / nrm)
    return e


def _nlmkl_combined(entries, eta, degree) -> np.ndarray:
    s = eta[0] * entries[0]
    for m in range(1, len(entries)):
        s = s + eta[m] * entries[m]
    return s**degree if degree > 1 else s


def nlmkl_grad(entries, beta, eta, degree):
    """Dual value at fixed beta and its eta gradient.

    W(eta) = sum(alpha) - 0.5 beta' (sum_m eta_m K_m)^{.d} beta, so
    dW/deta_m = -0.5 d beta' [S^{.(d-1)} . K_m] beta.
    """
    s = eta[0] * entries[0]
    for m in range(1, len(entries)):
        s = s + eta[m] * entries[m]
    sd1 = s ** (degree - 1) if degree > 1 else np.ones_like(s)
    grad = np.empty(len(entries))
    for m, k in enumerate(entries):
        grad[m] = -0.5 * degree * beta @ ((sd1 * k) @ beta)
    w = float(np.sum(np.abs(beta)) - 0.5 * beta @ ((sd1 * s) @ beta))
    return w, grad


def nlmkl_train(
    bank: KernelBank,
    y,
    c: float = 1.0,
    degree: int = 2,
    lam: float = 1.0,
    tol: float = 1e-3,
    max_outer: int = MAX_OUTER,
) -> MklModel:
    """Learn nonnegative kernel weights for an elementwise-power combination."""
    if int(degree) != degree or degree < 1:
        raise ValueError("degree must be an integer >= 1")
    if not lam > 0:
        raise ValueError("norm bound must be positive")
    entries = bank.entries
    p = bank.p
    y = np.asarray(y, dtype=np.float64).ravel()

    eta = _project_eta(np.full(p, 1.0 / np.sqrt(p)), lam)
    if not np.any(eta > 0):
        raise ValueError("kernel weights all zero after projection")
    model = smo_solve(_nlmkl_combined(entries, eta, degree), y, c=c, tol=tol)
    f_cur = dual_objective(_nlmkl_combined(entries, eta, degree), y, model.alpha)
    trace = [f_cur]
    outer = 0
    for outer in range(1, max_outer + 1):
        beta = model.alpha * y
        _, grad = nlmkl_grad(entries, beta, eta, degree)
        # descend the dual in eta: direction opposite the (nonpositive) gradient
        direction = -grad
        nrm = float(np.linalg.norm(direction))
        if nrm <= 0:
            break
        direction /= nrm
        accepted = False
        step = DEFAULT_STEP
        while step >= MIN_STEP:
            eta_try = _project_eta(eta + step * direction, lam)
            if not np.any(eta_try > 0):
                raise ValueError("kernel weights all zero after projection")
            k_try = _nlmkl_combined(entries, eta_try, degree)
            m_try = smo_solve(k_try, y, c=c, tol=tol, beta0=beta)
            f_try = dual_objective(k_try, y, m_try.alpha)
            if f_try <= f_cur + 1e-8:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        delta = float(np.max(np.abs(eta_try - eta)))
        eta, model, f_cur = eta_try, m_try, f_try
        trace.append(f_cur)
        if delta < PARAM_TOL:
            break
    return MklModel(
        scheme="nlmkl",
        svm=model,
        names=list(bank.names),
        eta=eta,
        degree=degree,
        lam=lam,
        outer_iterations=outer,
        dual_trace=tuple(trace),
    )


def gating_weights(v: np.ndarray, v0: np.ndarray, rep: np.ndarray) -> np.ndarray:
    """Softmax kernel weights per sample; rows sum to one."""
    z = rep @ v.T + v0[None, :]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _lmkl_combined(entries, eta_s) -> np.ndarray:
    out = np.zeros_like(entries[0])
    for m, k in enumerate(entries):
        w = eta_s[:, m]
        out += (w[:, None] * w[None, :]) * k
    return out


def lmkl_train(
    bank: KernelBank,
    gating_rep,
    y,
    c: float = 1.0,
    tol: float = 1e-3,
    max_outer: int = MAX_OUTER,
) -> MklModel:
    """Learn softmax gating over a per-sample representation."""
    rep = np.asarray(gating_rep, dtype=np.float64)
    if rep.ndim != 2 or rep.shape[0] != bank.n:
        raise ValueError("gating representation must be (n, Dg)")
    entries = bank.entries
    p = bank.p
    y = np.asarray(y, dtype=np.float64).ravel()

    v = np.zeros((p, rep.shape[1]))
    v0 = np.zeros(p)
    eta_s = gating_weights(v, v0, rep)
    k_cur = _lmkl_combined(entries, eta_s)
    model = smo_solve(k_cur, y, c=c, tol=tol)
    f_cur = dual_objective(k_cur, y, model.alpha)
    trace = [f_cur]
    rescaled = False
    outer = 0
    for outer in range(1, max_outer + 1):
        beta = model.alpha * y
        # s_m(i) = beta_i [K_m (beta*eta_m)]_i drives the gating gradient
        s = np.empty((bank.n, p))
        for m, k in enumerate(entries):
            s[:, m] = beta * (k @ (beta * eta_s[:, m]))
        s_bar = np.sum(eta_s * s, axis=1, keepdims=True)
        dz = -eta_s * (s - s_bar)  # dW/dz, W the dual at fixed beta
        gv = dz.T @ rep
        gv0 = dz.sum(axis=0)
        scale = max(float(np.max(np.abs(gv))), float(np.max(np.abs(gv0))))
        if scale <= 0:
            break
        gv /= scale
        gv0 /= scale
        accepted = False
        step = DEFAULT_STEP
        while step >= MIN_STEP:
            v_try = v - step * gv
            v0_try = v0 - step * gv0
            z = rep @ v_try.T + v0_try[None, :]
            if np.max(np.abs(z)) > LOGIT_LIMIT:
                if rescaled:
                    raise RuntimeError("gating logits saturated twice")
                shrink = LOGIT_LIMIT / float(np.max(np.abs(z)))
                v_try = v_try * shrink
                v0_try = v0_try * shrink
                rescaled = True
            eta_try = gating_weights(v_try, v0_try, rep)
            k_try = _lmkl_combined(entries, eta_try)
            m_try = smo_solve(k_try, y, c=c, tol=tol, beta0=beta)
            f_try = dual_objective(k_try, y, m_try.alpha)
            if f_try < f_cur:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        delta = max(float(np.max(np.abs(v_try - v))), float(np.max(np.abs(v0_try - v0))))
        v, v0, eta_s, model, f_cur = v_try, v0_try, eta_try, m_try, f_try
        trace.append(f_cur)
        if delta < PARAM_TOL:
            break
    return MklModel(
        scheme="lmkl",
        svm=model,
        names=list(bank.names),
        gate_v=v,
        gate_v0=v0,
        eta_support=eta_s[model.support],
        outer_iterations=outer,
        dual_trace=tuple(trace),
    )


def _combined_rows(m: MklModel, rows: list, gating_rep) -> np.ndarray:
    """Fold per-group kernel rows into combined-kernel rows."""
    if m.scheme == "rbmkl":
        out = rows[0]
        if len(rows) > 1:
            out = out.copy()
            for r in rows[1:]:
                out *= r
        return out
    if m.scheme == "nlmkl":
        s = m.eta[0] * rows[0]
        for i in range(1, len(rows)):
            s = s + m.eta[i] * rows[i]
        return s**m.degree if m.degree > 1 else s
    if gating_rep is None:
        raise ValueError("lmkl decision needs the query gating representation")
    rep = np.atleast_2d(np.asarray(gating_rep, dtype=np.float64))
    eta_q = gating_weights(m.gate_v, m.gate_v0, rep)
    out = np.zeros_like(rows[0])
    for i, r in enumerate(rows):
        out += (eta_q[:, i : i + 1] if r.ndim == 2 else eta_q[0, i]) * r * m.eta_support[:, i]
    return out


def mkl_decision(m: MklModel, rows: list, gating_rep=None) -> float:
    """Discriminant for one query from per-group kernel rows over supports."""
    rows = [np.asarray(r, dtype=np.float64).ravel() for r in rows]
    if len(rows) != len(m.names):
        raise ValueError("one kernel row per bank entry required")
    for r in rows:
        if r.size != m.svm.support.size:
            raise ValueError("kernel row length must equal support count")
    return decision(m.svm, _combined_rows(m, rows, gating_rep))


def mkl_decision_many(m: MklModel, rows: list, gating_rep=None) -> np.ndarray:
    """Vectorized mkl_decision over (q, n_support) row blocks."""
    rows = [np.asarray(r, dtype=np.float64) for r in rows]
    return decision_many(m.svm, _combined_rows(m, rows, gating_rep))
