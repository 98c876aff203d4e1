"""A priori bound on the infinite-horizon closed-loop cost.

The bound reads ``J <= alpha_V V_inf(x0) + alpha_f + alpha_Delta + a(||theta~0||, mu)``.
Constants that do not depend on the weights ``eps1..eps3`` are gathered once in
:class:`BoundInputs`; :func:`thm1_bound` assembles a :class:`BoundReport` for a
given weight triple, and :func:`optimize_epsilons` searches over the triple.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (GammaNonpositive, InvalidEpsilon, NoFeasiblePoint, NoFeasibleSamples,
                     OcpInfeasible, SolverError)
from .estimator import c1
from .geometry import HPolytope, enumerate_vertices, spectral_norm
from .model import AffineParamSystem, ConstraintSet, StageCost
from .tube_mpc import TubeConfig, solve_ocp

C_THETA_SAFETY = 1.2
EPS_GRID = (1e-4, 1e2)


def c2(l: int, c_cl: float) -> float:
    """``sum_{i=1..l} c_cl^i``; equals ``l`` when ``c_cl == 1``."""
    if c_cl < 0 or l < 0:
        raise ValueError("need l >= 0 and c_cl >= 0")
    if abs(c_cl - 1.0) < 1e-9:
        return float(l)
    return (1.0 - c_cl ** (l + 1)) / (1.0 - c_cl) - 1.0


def c3(N: int, c_cl: float, Qbar_norm: float, P_norm: float) -> float:
    if N < 1:
        raise ValueError("N must be positive")
    return sum(c2(l, c_cl) for l in range(1, N)) * Qbar_norm + c2(N, c_cl) * P_norm


def gamma(eps3: float, c_theta: float, Q) -> float:
    """``1 - eps3 c_theta / lambda_min(Q)``; may be nonpositive."""
    if eps3 <= 0:
        raise InvalidEpsilon("eps3 must be positive")
    lam_min = float(np.linalg.eigvalsh(np.atleast_2d(Q))[0])
    if lam_min <= 0:
        raise ValueError("Q must be positive definite")
    return 1.0 - eps3 * c_theta / lam_min


# ---------------------------------------------------------------------------
# input deviation bound

@dataclass(frozen=True)
class DeltaUBound:
    per_step: list
    uniform: float

    def values(self, N: int, use_per_step: bool = False) -> np.ndarray:
        if use_per_step:
            if len(self.per_step) != N:
                raise ValueError("per-step bound length does not match the horizon")
            return np.asarray(self.per_step, dtype=float)
        return np.full(N, self.uniform)


def input_vertices(zc: ConstraintSet) -> np.ndarray:
    """Vertices (possibly with interior extras) of the input projection of Z."""
    V = zc.vertices()[:, zc.n:]
    return np.unique(np.round(V, 12), axis=0)


def delta_u_bound(zc: ConstraintSet, ubar=None) -> DeltaUBound:
    """Squared input deviations over the input projection ``U`` of Z.

    ``per_step[l] = max_{nu in U} ||nu - ubar_l||^2`` for each supplied
    ``ubar_l``; ``uniform`` is the squared diameter of U.
    """
    U = input_vertices(zc)
    diff = U[:, None, :] - U[None, :, :]
    uniform = float(np.max(np.sum(diff ** 2, axis=-1)))
    per_step = []
    if ubar is not None:
        for ub in ubar:
            per_step.append(float(np.max(np.sum((U - np.ravel(ub)) ** 2, axis=1))))
    return DeltaUBound(per_step, uniform)


# ---------------------------------------------------------------------------
# constants

def terminal_cost_bound(cfg: TubeConfig) -> float:
    """``max ||z + alpha v||_P^2`` over vertices of Xf and of X0."""
    W = enumerate_vertices(cfg.Xf)
    n = cfg.P.shape[0]
    pts = (W[:, None, :n] + W[:, None, n:] * cfg.X0_vertices[None, :, :]).reshape(-1, n)
    return float(np.max(np.einsum("ij,jk,ik->i", pts, cfg.P, pts)))


def terminal_cost_of_decision(cfg: TubeConfig, z_N, alpha_N) -> float:
    pts = np.ravel(z_N) + alpha_N * cfg.X0_vertices
    return float(np.max(np.einsum("ij,jk,ik->i", pts, cfg.P, pts)))


def _theta_vertices(Theta) -> np.ndarray:
    if isinstance(Theta, HPolytope):
        return enumerate_vertices(Theta)
    return np.atleast_2d(np.asarray(Theta, dtype=float))


def model_constants(sys: AffineParamSystem, K, Theta=None) -> dict:
    """Squared worst-case norms of ``A``, ``B`` and ``A + BK`` over Theta.

    Each norm is convex in theta, so the maxima sit at vertices.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    V = _theta_vertices(sys.Theta if Theta is None else Theta)
    cA = cB = ccl = 0.0
    for t in V:
        A, B = sys.assemble(t)
        cA = max(cA, spectral_norm(A) ** 2)
        cB = max(cB, spectral_norm(B) ** 2)
        ccl = max(ccl, spectral_norm(A + B @ K) ** 2)
    return {"c_A": cA, "c_B": cB, "c_cl": ccl}


def estimate_c_theta(sys: AffineParamSystem, zc: ConstraintSet, sc: StageCost, cfg: TubeConfig,
                     theta_hat, Theta, n_samples: int = 8, seed: int = 0,
                     bisect_iters: int = 10, scales=(0.25, 0.5, 0.75, 1.0)) -> float:
    """Heuristic ``c_theta`` with ``V_N(x) <= c_theta ||x||^2`` on the feasible region.

    Along each sampled ray the largest feasible scale is found by bisection;
    the ratio ``V_N / ||x||^2`` is evaluated at fractions of that scale and the
    maximum, inflated by 1.2, is returned.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    n = sys.n
    dirs = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(n_samples, n))])[:max(n_samples, 1)]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    reach = float(np.max(np.linalg.norm(zc.vertices()[:, :n], axis=1)))

    def value(x):
        try:
            return solve_ocp(sys, zc, sc, cfg, x, theta_hat, Theta).value
        except (OcpInfeasible, SolverError):
            # a stall right at the feasibility boundary counts as infeasible
            return None

    best = None
    for d in dirs:
        lo, hi = 0.0, reach * 1.01
        if value(hi * d) is not None:
            lo = hi
        else:
            for _ in range(bisect_iters):
                mid = 0.5 * (lo + hi)
                if value(mid * d) is not None:
                    lo = mid
                else:
                    hi = mid
        if lo <= 0.0:
            continue
        for s in scales:
            val = value(s * lo * d)
            if val is not None:
                ratio = val / (s * lo) ** 2
                best = ratio if best is None else max(best, ratio)
    if best is None:
        raise NoFeasibleSamples("no feasible state found along any sampled ray")
    return C_THETA_SAFETY * best


@dataclass(frozen=True)
class BoundInputs:
    """Everything in the bound that does not depend on ``eps1..eps3``."""

    N: int
    mu: float
    c_Q: float
    c_R: float
    c_A: float
    c_B: float
    c_cl: float
    c_f: float
    c_theta: float
    c3: float
    lam_min_Q: float
    a_norm: float          # ||A(theta_hat)|| entering the c1 sums
    dub: tuple             # N squared input-deviation bounds
    theta_err_norm: float = 0.0
    dtheta_mu_exponent: int = 2

    def __post_init__(self):
        if self.dtheta_mu_exponent not in (1, 2):
            raise ValueError("dtheta_mu_exponent must be 1 or 2")
        if len(self.dub) != self.N:
            raise ValueError("dub must have N entries")

    @property
    def c1_sq_sum(self) -> float:
        return sum(c1(l, self.a_norm) ** 2 for l in range(self.N))

    @property
    def geom_dub_sum(self) -> float:
        return sum(sum(self.c_A ** i for i in range(l)) * self.dub[l] for l in range(self.N))


def bound_inputs(sys: AffineParamSystem, zc: ConstraintSet, sc: StageCost, cfg: TubeConfig, mu: float,
                 theta_err_norm: float = 0.0, c_theta: float | None = None, theta_hat=None,
                 dub: DeltaUBound | None = None, dtheta_mu_exponent: int = 2,
                 c_theta_kwargs: dict | None = None) -> BoundInputs:
    """Collect the weight-independent constants over the initial Theta.

    With ``theta_hat=None`` the ``c1`` sums use ``max_Theta ||A(theta)||``,
    which dominates every admissible initial estimate.
    """
    Theta = sys.Theta
    mc = model_constants(sys, cfg.K, Theta)
    Qbar = sc.Q + cfg.K.T @ sc.R @ cfg.K
    if theta_hat is None:
        a_norm = float(np.sqrt(mc["c_A"]))
    else:
        a_norm = spectral_norm(sys.assemble(theta_hat)[0])
    if c_theta is None:
        th = np.mean(enumerate_vertices(Theta), axis=0) if theta_hat is None else theta_hat
        c_theta = estimate_c_theta(sys, zc, sc, cfg, th, Theta, **(c_theta_kwargs or {}))
    if dub is None:
        dub = delta_u_bound(zc)
    return BoundInputs(
        N=cfg.N, mu=float(mu), c_Q=spectral_norm(sc.Q), c_R=spectral_norm(sc.R),
        c_A=mc["c_A"], c_B=mc["c_B"], c_cl=mc["c_cl"], c_f=terminal_cost_bound(cfg),
        c_theta=float(c_theta), c3=c3(cfg.N, mc["c_cl"], spectral_norm(Qbar), spectral_norm(cfg.P)),
        lam_min_Q=float(np.linalg.eigvalsh(sc.Q)[0]), a_norm=a_norm,
        dub=tuple(float(d) for d in dub.values(cfg.N)), theta_err_norm=float(theta_err_norm),
        dtheta_mu_exponent=dtheta_mu_exponent)


# ---------------------------------------------------------------------------
# bound assembly

@dataclass(frozen=True)
class Prop1Terms:
    c_V: float
    delta_bar1: float
    delta_bar2: float
    d_theta_coeff: float   # multiplies ||theta~||^2
    c_f: float

    @property
    def delta_bar(self) -> float:
        return self.delta_bar1 + self.delta_bar2

    def rhs(self, v_inf: float, theta_err_norm: float) -> float:
        return self.c_V * v_inf + self.d_theta_coeff * theta_err_norm ** 2 + self.delta_bar + self.c_f


def _check_eps(*eps):
    for e in eps:
        if not np.isfinite(e) or e <= 0:
            raise InvalidEpsilon(f"weights must be positive, got {e}")


def prop1_terms(inp: BoundInputs, eps1: float, eps2: float) -> Prop1Terms:
    _check_eps(eps1, eps2)
    c_V = (1 + eps1) * (1 + eps2)
    d1 = (1 + eps1) * (1 + 1 / eps2) * inp.c_Q * inp.c_B * inp.geom_dub_sum
    d2 = (1 + 1 / eps2) * inp.c_R * float(np.sum(inp.dub))
    dth = inp.c_Q * inp.c1_sq_sum / inp.mu ** inp.dtheta_mu_exponent * (1 + 1 / eps1)
    return Prop1Terms(c_V, d1, d2, dth, inp.c_f)


def prop1_bound(sys: AffineParamSystem, sc: StageCost, cfg: TubeConfig, theta_hat, eps1: float,
                eps2: float, mu: float, dub: DeltaUBound, use_per_step: bool = False,
                dtheta_mu_exponent: int = 2) -> Prop1Terms:
    """Terms of ``V_N(x, theta_hat, Theta) <= c_V V_inf(x) + d(||theta~||) + Delta + c_f``.

    ``c_A`` and ``c_B`` are taken over the initial Theta; ``c1`` uses
    ``||A(theta_hat)||``.
    """
    _check_eps(eps1, eps2)
    mc = model_constants(sys, cfg.K)
    inp = BoundInputs(
        N=cfg.N, mu=float(mu), c_Q=spectral_norm(sc.Q), c_R=spectral_norm(sc.R),
        c_A=mc["c_A"], c_B=mc["c_B"], c_cl=mc["c_cl"], c_f=terminal_cost_bound(cfg), c_theta=0.0,
        c3=0.0, lam_min_Q=float(np.linalg.eigvalsh(sc.Q)[0]),
        a_norm=spectral_norm(sys.assemble(theta_hat)[0]),
        dub=tuple(float(d) for d in dub.values(cfg.N, use_per_step)), dtheta_mu_exponent=dtheta_mu_exponent)
    return prop1_terms(inp, eps1, eps2)


@dataclass(frozen=True)
class BoundReport:
    eps1: float
    eps2: float
    eps3: float
    c_Q: float
    c_R: float
    c_A: float
    c_B: float
    c_cl: float
    c_f: float
    c_theta: float
    c3: float
    gamma: float
    c_V: float
    delta_bar1: float
    delta_bar2: float
    d_theta_tilde: float
    alpha_V: float
    alpha_Delta: float
    alpha_f: float
    a_of_theta0: float
    mu: float
    theta_err_norm: float
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise GammaNonpositive(f"gamma = {self.gamma} <= 0; the bound is void")

    @property
    def slope(self) -> float:
        return self.alpha_V

    @property
    def intercept(self) -> float:
        return self.alpha_f + self.alpha_Delta + self.a_of_theta0

    def total_bound(self, v_inf: float) -> float:
        return self.alpha_V * v_inf + self.intercept

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("extras")
        d["slope"] = self.slope
        d["intercept"] = self.intercept
        return d


def a_function(inp: BoundInputs, eps1: float, eps3: float, g: float, theta_err_norm: float) -> float:
    dth = inp.c_Q * inp.c1_sq_sum / inp.mu ** inp.dtheta_mu_exponent * (1 + 1 / eps1)
    return (dth / g + (1 + 1 / eps3) * inp.c3 / (g * inp.mu)) * theta_err_norm ** 2


def thm1_bound(inp: BoundInputs, eps1: float, eps2: float, eps3: float,
               theta_err_norm: float | None = None) -> BoundReport:
    _check_eps(eps1, eps2, eps3)
    te = inp.theta_err_norm if theta_err_norm is None else float(theta_err_norm)
    g = 1.0 - eps3 * inp.c_theta / inp.lam_min_Q
    if not g > 0:
        raise GammaNonpositive(f"gamma = {g} <= 0 for eps3 = {eps3}")
    p1 = prop1_terms(inp, eps1, eps2)
    return BoundReport(
        eps1=eps1, eps2=eps2, eps3=eps3, c_Q=inp.c_Q, c_R=inp.c_R, c_A=inp.c_A, c_B=inp.c_B,
        c_cl=inp.c_cl, c_f=inp.c_f, c_theta=inp.c_theta, c3=inp.c3, gamma=g, c_V=p1.c_V,
        delta_bar1=p1.delta_bar1, delta_bar2=p1.delta_bar2,
        d_theta_tilde=p1.d_theta_coeff * te ** 2,
        alpha_V=p1.c_V / g, alpha_Delta=p1.delta_bar / g, alpha_f=inp.c_f / g,
        a_of_theta0=a_function(inp, eps1, eps3, g, te), mu=inp.mu, theta_err_norm=te)


def epsilon_objective(inp: BoundInputs, eps, weight: float = 1.0) -> float:
    """``weight (alpha_V - 1)^2 + alpha_Delta + alpha_f + a``; ``inf`` when gamma <= 0."""
    e1, e2, e3 = eps
    if min(e1, e2, e3) <= 0:
        return np.inf
    g = 1.0 - e3 * inp.c_theta / inp.lam_min_Q
    if g <= 0:
        return np.inf
    p1 = prop1_terms(inp, e1, e2)
    return (weight * (p1.c_V / g - 1.0) ** 2 + p1.delta_bar / g + inp.c_f / g
            + a_function(inp, e1, e3, g, inp.theta_err_norm))


def optimize_epsilons(inp: BoundInputs, weight: float = 1.0, n_grid: int = 20, rounds: int = 3):
    """Log-grid search over ``[1e-4, 1e2]^3`` followed by coordinate descent."""
    if weight <= 0:
        raise ValueError("weight must be positive")
    grid = np.logspace(np.log10(EPS_GRID[0]), np.log10(EPS_GRID[1]), n_grid)
    best, best_val = None, np.inf
    for e in itertools.product(grid, grid, grid):
        val = epsilon_objective(inp, e, weight)
        if val < best_val:
            best, best_val = e, val
    if best is None:
        raise NoFeasiblePoint("gamma <= 0 over the whole grid; c_theta is too large")
    best = list(best)
    lo, hi = np.log(EPS_GRID[0]), np.log(EPS_GRID[1])
    for _ in range(rounds):
        for axis in range(3):
            def f(log_e, axis=axis):
                trial = list(best)
                trial[axis] = np.exp(log_e)
                return epsilon_objective(inp, trial, weight)
            upper = hi
            if axis == 2:
                # keep gamma strictly positive inside the search bracket
                upper = min(hi, np.log(inp.lam_min_Q / inp.c_theta * (1 - 1e-12)))
            res = minimize_scalar(f, bounds=(lo, upper), method="bounded",
                                  options={"xatol": 1e-10})
            if res.fun < best_val:
                best[axis] = float(np.exp(res.x))
                best_val = float(res.fun)
    return tuple(float(e) for e in best)
