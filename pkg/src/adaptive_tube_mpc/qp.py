"""Dense convex quadratic programming.

Programs have the form::

    min  0.5 x' Hq x + g' x
    s.t. Aineq x <= bineq
         Aeq x    = beq

Quadratic programs are solved by a primal-dual interior-point method
(Mehrotra predictor-corrector) after eliminating the equality constraints
through a null-space basis.  Linear programs go to HiGHS through
``scipy.optimize.linprog``.  Either way an Optimal verdict is only returned
together with a KKT certificate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .errors import InvalidProgram, MaxIterations

PRIMAL_TOL = 1e-8
DUAL_TOL = 1e-6
COMPL_TOL = 1e-6


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


def _as_matrix(M, ncols):
    if M is None:
        return np.zeros((0, ncols))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((0, ncols))
    return M


def _as_vector(v):
    if v is None:
        return np.zeros(0)
    return np.asarray(v, dtype=float).reshape(-1)


@dataclass(frozen=True)
class QuadProgram:
    Hq: np.ndarray
    g: np.ndarray
    Aineq: np.ndarray = None
    bineq: np.ndarray = None
    Aeq: np.ndarray = None
    beq: np.ndarray = None

    def __post_init__(self):
        g = _as_vector(self.g)
        n = g.size
        Hq = np.zeros((n, n)) if self.Hq is None else np.atleast_2d(np.asarray(self.Hq, dtype=float))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "Hq", Hq)
        object.__setattr__(self, "Aineq", _as_matrix(self.Aineq, n))
        object.__setattr__(self, "bineq", _as_vector(self.bineq))
        object.__setattr__(self, "Aeq", _as_matrix(self.Aeq, n))
        object.__setattr__(self, "beq", _as_vector(self.beq))
        self._validate()

    def _validate(self):
        n = self.n
        if self.Hq.shape != (n, n):
            raise InvalidProgram(f"Hq has shape {self.Hq.shape}, expected {(n, n)}")
        if self.Aineq.shape[1] != n or self.Aineq.shape[0] != self.bineq.size:
            raise InvalidProgram("inequality block has inconsistent dimensions")
        if self.Aeq.shape[1] != n or self.Aeq.shape[0] != self.beq.size:
            raise InvalidProgram("equality block has inconsistent dimensions")
        if n and np.max(np.abs(self.Hq - self.Hq.T)) > 1e-12 * max(1.0, np.max(np.abs(self.Hq))):
            raise InvalidProgram("Hq is not symmetric")
        if n and np.any(self.Hq):
            lam_min = np.linalg.eigvalsh(self.Hq)[0]
            if lam_min < -1e-10 * max(1.0, np.max(np.abs(self.Hq))):
                raise InvalidProgram(f"Hq is not positive semidefinite (min eigenvalue {lam_min:.3e})")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def is_lp(self) -> bool:
        return not np.any(self.Hq)

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Hq @ x + self.g @ x)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    objective: float
    duals_ineq: np.ndarray
    duals_eq: np.ndarray
    status: Status
    iterations: int = 0
    regularization: float = 0.0
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(p: QuadProgram, x, lam, nu) -> dict:
    """Primal, dual and complementarity residuals of a candidate KKT point.

    Dual and complementarity residuals are scaled by ``1 + max|data|`` so that
    the thresholds mean the same thing for programs of different magnitude.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    nu = np.asarray(nu, dtype=float)
    slack = p.bineq - p.Aineq @ x if p.Aineq.size else np.zeros(0)
    primal = 0.0
    if slack.size:
        primal = max(primal, float(np.max(-slack, initial=0.0)))
    if p.beq.size:
        primal = max(primal, float(np.max(np.abs(p.Aeq @ x - p.beq))))
    grad = p.Hq @ x + p.g
    if lam.size:
        grad = grad + p.Aineq.T @ lam
    if nu.size:
        grad = grad + p.Aeq.T @ nu
    scale = 1.0 + max(np.max(np.abs(p.g), initial=0.0), np.max(np.abs(p.Hq @ x), initial=0.0))
    dual = float(np.max(np.abs(grad), initial=0.0)) / scale
    dual_sign = float(np.max(-lam, initial=0.0))
    compl = float(np.max(np.abs(lam * slack), initial=0.0)) / scale if lam.size else 0.0
    return {"primal": primal, "dual": max(dual, dual_sign), "complementarity": compl}


def certified(res: dict) -> bool:
    return res["primal"] <= PRIMAL_TOL and res["dual"] <= DUAL_TOL and res["complementarity"] <= COMPL_TOL


# ---------------------------------------------------------------------------
# linear programs

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def solve_lp(g, Aineq=None, bineq=None, Aeq=None, beq=None, max_iter=None) -> QpSolution:
    g = _as_vector(g)
    n = g.size
    Aineq = _as_matrix(Aineq, n)
    bineq = _as_vector(bineq)
    Aeq = _as_matrix(Aeq, n)
    beq = _as_vector(beq)
    options = dict(_HIGHS_OPTIONS)
    if max_iter is not None:
        options["maxiter"] = int(max_iter)
    res = linprog(
        g,
        A_ub=Aineq if Aineq.size else None,
        b_ub=bineq if bineq.size else None,
        A_eq=Aeq if Aeq.size else None,
        b_eq=beq if beq.size else None,
        bounds=(None, None),
        method="highs",
        options=options,
    )
    empty = np.full(n, np.nan)
    if res.status == 2:
        return QpSolution(empty, np.inf, np.zeros(bineq.size), np.zeros(beq.size), Status.INFEASIBLE)
    if res.status == 3:
        return QpSolution(empty, -np.inf, np.zeros(bineq.size), np.zeros(beq.size), Status.UNBOUNDED)
    if res.status == 1:
        raise MaxIterations(f"LP iteration limit reached: {res.message}")
    if res.status != 0:
        raise MaxIterations(f"LP solver failed without certificate: {res.message}")
    lam = -res.ineqlin.marginals if bineq.size else np.zeros(0)
    nu = -res.eqlin.marginals if beq.size else np.zeros(0)
    lam = np.maximum(lam, 0.0)
    p = QuadProgram(np.zeros((n, n)), g, Aineq, bineq, Aeq, beq)
    resid = kkt_residuals(p, res.x, lam, nu)
    return QpSolution(res.x, float(res.fun), lam, nu, Status.OPTIMAL, int(res.nit), 0.0, resid)


# ---------------------------------------------------------------------------
# quadratic programs

def _null_space(E, rtol=1e-12):
    """Particular solution basis split of ``E x = e`` via SVD."""
    if E.shape[0] == 0:
        return np.eye(E.shape[1]), E.shape[1]
    U, sv, Vt = np.linalg.svd(E)
    rank = int(np.sum(sv > rtol * max(1.0, sv[0])))
    return Vt[rank:].T, rank


def _phase1(p: QuadProgram):
    """Return the minimal uniform violation of the constraints (<= 0 when feasible)."""
    n = p.n
    mi = p.bineq.size
    if mi == 0:
        if p.beq.size == 0:
            return -np.inf
        x, *_ = np.linalg.lstsq(p.Aeq, p.beq, rcond=None)
        return float(np.max(np.abs(p.Aeq @ x - p.beq)))
    g = np.zeros(n + 1)
    g[-1] = 1.0
    A = np.hstack([p.Aineq, -np.ones((mi, 1))])
    A = np.vstack([A, np.r_[np.zeros(n), -1.0]])
    b = np.r_[p.bineq, 1.0]
    Aeq = np.hstack([p.Aeq, np.zeros((p.beq.size, 1))]) if p.beq.size else None
    sol = solve_lp(g, A, b, Aeq, p.beq if p.beq.size else None)
    if sol.status is Status.INFEASIBLE:
        return np.inf  # equality system alone is inconsistent
    return float(sol.x[-1])


def _has_descent_ray(p: QuadProgram, tol=1e-9) -> bool:
    """True when a direction d with Hq d = 0, Aineq d <= 0, Aeq d = 0 has g'd < 0."""
    n = p.n
    Aeq = np.vstack([p.Hq, p.Aeq]) if p.beq.size else p.Hq
    beq = np.zeros(Aeq.shape[0])
    Ain = np.vstack([p.Aineq, np.eye(n), -np.eye(n)])
    bin_ = np.r_[np.zeros(p.bineq.size), np.ones(2 * n)]
    sol = solve_lp(p.g, Ain, bin_, Aeq, beq)
    return sol.optimal and sol.objective < -tol


def _diagnose(p: QuadProgram, iters: int, reason: str) -> QpSolution:
    n = p.n
    viol = _phase1(p)
    zeros_i, zeros_e = np.zeros(p.bineq.size), np.zeros(p.beq.size)
    if viol > 1e-8:
        return QpSolution(np.full(n, np.nan), np.inf, zeros_i, zeros_e, Status.INFEASIBLE, iters,
                          residuals={"phase1": viol})
    if _has_descent_ray(p):
        return QpSolution(np.full(n, np.nan), -np.inf, zeros_i, zeros_e, Status.UNBOUNDED, iters)
    raise MaxIterations(f"QP solver stopped without certificate after {iters} iterations ({reason})")


def _solve_kkt(M, rhs):
    try:
        c = sla.cho_factor(M, check_finite=False)
        return sla.cho_solve(c, rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        reg = 1e-13 * max(1.0, np.trace(M) / max(1, M.shape[0]))
        return np.linalg.lstsq(M + reg * np.eye(M.shape[0]), rhs, rcond=None)[0]


def _ipm(H, g, A, b, max_iter, tol=1e-11):
    """Mehrotra predictor-corrector for min 0.5 y'Hy + g'y s.t. Ay <= b.

    Returns ``(y, lam, iterations, state)`` with state one of "converged",
    "stalled" or "diverged".
    """
    n = g.size
    m = b.size
    y = np.zeros(n)
    # starting point: least-squares slack shifted into the interior
    s = b - A @ y
    shift = max(1.0, -1.5 * np.min(s, initial=0.0))
    s = np.maximum(s, 0.0) + shift
    lam = np.ones(m)
    bscale = 1.0 + np.max(np.abs(b), initial=0.0)
    gscale = 1.0 + np.max(np.abs(g), initial=0.0)
    for it in range(1, max_iter + 1):
        rd = H @ y + g + A.T @ lam
        rp = A @ y + s - b
        mu = s @ lam / m
        if (np.max(np.abs(rp)) <= tol * bscale and np.max(np.abs(rd)) <= tol * gscale
                and mu <= tol * gscale):
            return y, lam, it, "converged"
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(lam))) or np.max(lam) > 1e14 \
                or np.max(np.abs(y)) > 1e14:
            return y, lam, it, "diverged"
        w = lam / s
        M = H + (A.T * w) @ A

        def direction(rc):
            # rc: complementarity right-hand side, i.e. target of S dlam + Lam ds
            rhs = -rd - A.T @ ((rc + lam * rp) / s)
            dy = _solve_kkt(M, rhs)
            ds = -rp - A @ dy
            dlam = (rc - lam * ds) / s
            return dy, ds, dlam

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        # predictor
        dy_a, ds_a, dl_a = direction(-s * lam)
        a_aff = min(max_step(s, ds_a), max_step(lam, dl_a))
        mu_aff = (s + a_aff * ds_a) @ (lam + a_aff * dl_a) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dy, ds, dl = direction(-s * lam - ds_a * dl_a + sigma * mu)
        a = min(max_step(s, ds), max_step(lam, dl))
        a = min(1.0, 0.995 * a)
        y = y + a * dy
        s = s + a * ds
        lam = lam + a * dl
        s = np.maximum(s, 1e-300)
        lam = np.maximum(lam, 1e-300)
    return y, lam, max_iter, "stalled"


def _polish(p: QuadProgram, x, lam, nu):
    """Refine an interior-point solution by solving the KKT system on the
    numerically active set; kept only if it improves the certificate."""
    slack = p.bineq - p.Aineq @ x
    act = np.where(lam > np.maximum(slack, 1e-14) * 10)[0]
    Aa = p.Aineq[act]
    ba = p.bineq[act]
    C = np.vstack([Aa, p.Aeq])
    d = np.r_[ba, p.beq]
    n = p.n
    k = C.shape[0]
    K = np.block([[p.Hq + 1e-14 * np.eye(n), C.T], [C, -1e-14 * np.eye(k)]])
    rhs = np.r_[-p.g, d]
    try:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    xp = sol[:n]
    mult = sol[n:]
    lam_p = np.zeros_like(lam)
    lam_p[act] = mult[: act.size]
    nu_p = mult[act.size:]
    if np.any(lam_p < -1e-9):
        return None
    lam_p = np.maximum(lam_p, 0.0)
    return xp, lam_p, nu_p


def solve_qp(p: QuadProgram, max_iter: int | None = None) -> QpSolution:
    """Solve a convex QP, returning a KKT-certified optimum or a verdict.

    Raises
    ------
    MaxIterations
        If the iteration cap is reached and neither infeasibility nor
        unboundedness can be certified.
    """
    n = p.n
    if max_iter is None:
        max_iter = 10 * (n + p.bineq.size + p.beq.size)
    ipm_cap = max(1, min(max_iter, 200))

    if p.is_lp and p.bineq.size:
        return solve_lp(p.g, p.Aineq, p.bineq, p.Aeq, p.beq)

    Z, rank = _null_space(p.Aeq)
    if p.beq.size:
        x0, *_ = np.linalg.lstsq(p.Aeq, p.beq, rcond=None)
        if np.max(np.abs(p.Aeq @ x0 - p.beq)) > 1e-9 * (1 + np.max(np.abs(p.beq))):
            return QpSolution(np.full(n, np.nan), np.inf, np.zeros(p.bineq.size),
                              np.zeros(p.beq.size), Status.INFEASIBLE)
    else:
        x0 = np.zeros(n)
    Hr = Z.T @ p.Hq @ Z
    Hr = 0.5 * (Hr + Hr.T)
    gr = Z.T @ (p.Hq @ x0 + p.g)
    Ar = p.Aineq @ Z
    br = p.bineq - p.Aineq @ x0

    if br.size == 0:
        # equality-constrained / unconstrained
        if Z.shape[1] == 0:
            y = np.zeros(0)
        else:
            y = np.linalg.lstsq(Hr, -gr, rcond=None)[0]
            if np.max(np.abs(Hr @ y + gr), initial=0.0) > 1e-9 * (1 + np.max(np.abs(gr))):
                return QpSolution(np.full(n, np.nan), -np.inf, np.zeros(0), np.zeros(p.beq.size),
                                  Status.UNBOUNDED)
        lam = np.zeros(0)
        iters = 1
    elif Z.shape[1] == 0:
        y = np.zeros(0)
        if np.min(br) < -1e-9:
            return QpSolution(np.full(n, np.nan), np.inf, np.zeros(br.size), np.zeros(p.beq.size),
                              Status.INFEASIBLE)
        lam = np.zeros(br.size)
        iters = 1
    else:
        y, lam, iters, state = _ipm(Hr, gr, Ar, br, ipm_cap)
        if state == "diverged":
            return _diagnose(p, iters, "interior-point iterates diverged")

    x = x0 + Z @ y
    grad = p.Hq @ x + p.g + (p.Aineq.T @ lam if lam.size else 0.0)
    nu = np.linalg.lstsq(p.Aeq.T, -grad, rcond=None)[0] if p.beq.size else np.zeros(0)
    res = kkt_residuals(p, x, lam, nu)
    if not certified(res):
        polished = _polish(p, x, lam, nu)
        if polished is not None:
            res_p = kkt_residuals(p, *polished)
            if certified(res_p) or sum(res_p.values()) < sum(res.values()):
                x, lam, nu = polished
                res = res_p
    if not certified(res):
        return _diagnose(p, iters, f"KKT certificate failed: {res}")
    return QpSolution(x, p.objective(x), lam, nu, Status.OPTIMAL, iters, 0.0, res)
