"""Set-membership and projected-gradient parameter estimation.

The membership set is kept as an exact halfspace accumulation: every
noiseless transition contributes the affine set ``{theta : D theta = d}``,
stored as a band of half-width ``slack`` and pruned for redundancy.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateRegressor, EmptyMembershipSet, EmptyPolytope
from .geometry import TOL, HPolytope, enumerate_vertices, remove_redundant, spectral_norm
from .model import AffineParamSystem, ConstraintSet
from .qp import QuadProgram, solve_qp

DEFAULT_SLACK = 1e-8
DEFAULT_FACET_CAP = 64


@dataclass(frozen=True, eq=False)
class EstimatorState:
    theta_hat: np.ndarray
    Theta_k: HPolytope
    mu: float
    cumulative_sq_error: float = 0.0
    vertices: np.ndarray | None = None  # cached vertices of Theta_k

    def with_vertices(self) -> "EstimatorState":
        if self.vertices is not None:
            return self
        return replace(self, vertices=enumerate_vertices(self.Theta_k))


def initial_state(theta_hat0, Theta0: HPolytope, mu: float) -> EstimatorState:
    return EstimatorState(np.asarray(theta_hat0, dtype=float), Theta0, float(mu), 0.0,
                          enumerate_vertices(Theta0))


def compute_mu(sys: AffineParamSystem, zc: ConstraintSet, safety: float = 0.99) -> float:
    """Gain with ``1/mu > sup_Z ||D(x, u)||^2``.

    ``||D(x, u)||`` is convex in ``(x, u)``, so the supremum over the polytope
    Z is attained at one of its vertices.
    """
    if not 0.0 < safety < 1.0:
        raise ValueError("safety factor must lie in (0, 1)")
    s = regressor_norm_bound(sys, zc)
    if s <= 0.0:
        raise DegenerateRegressor("all perturbation matrices vanish; supply mu explicitly")
    return safety / s


def regressor_norm_bound(sys: AffineParamSystem, zc: ConstraintSet) -> float:
    n = sys.n
    return max(spectral_norm(sys.regressor(v[:n], v[n:])) ** 2 for v in zc.vertices())


def delta_set(sys: AffineParamSystem, x_prev, u_prev, x_next):
    """Affine description ``Dmat theta = d`` of the parameters consistent with one transition."""
    Dmat = sys.regressor(x_prev, u_prev)
    d = np.asarray(x_next, dtype=float) - sys.nominal_part(x_prev, u_prev)
    return Dmat, d


def update_membership(state: EstimatorState, Dmat, d, slack: float = DEFAULT_SLACK,
                      facet_cap: int = DEFAULT_FACET_CAP) -> EstimatorState:
    Dmat = np.atleast_2d(np.asarray(Dmat, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    rows = np.linalg.norm(Dmat, axis=1) > 1e-14
    if np.any(~rows & (np.abs(d) > slack)):
        raise EmptyMembershipSet("transition is inconsistent with every parameter value")
    Dmat, d = Dmat[rows], d[rows]
    if Dmat.shape[0] == 0:
        return state
    state = state.with_vertices()
    # a convex set lies inside the band iff all of its vertices do
    resid = state.vertices @ Dmat.T - d
    if np.all(np.abs(resid) <= slack + TOL * np.linalg.norm(Dmat, axis=1)):
        return state
    P = state.Theta_k.add_halfspaces(np.vstack([Dmat, -Dmat]), np.r_[d + slack, -d + slack])
    try:
        P = remove_redundant(P)
        if P.n_facets > facet_cap:
            return state
        V = enumerate_vertices(P)
    except EmptyPolytope as exc:
        raise EmptyMembershipSet("membership set became empty; data inconsistent with the model") from exc
    return replace(state, Theta_k=P, vertices=V)


def project(theta, Theta: HPolytope) -> np.ndarray:
    """Euclidean projection onto a polytope."""
    theta = np.asarray(theta, dtype=float)
    if Theta.contains_point(theta, tol=0.0):
        return theta.copy()
    p = theta.size
    sol = solve_qp(QuadProgram(2.0 * np.eye(p), -2.0 * theta, Theta.H, Theta.h))
    if not sol.optimal:
        raise EmptyMembershipSet(f"projection target is {sol.status.value}")
    return sol.x


def point_update(state: EstimatorState, sys: AffineParamSystem, x_prev, u_prev, x_next,
                 Theta0: HPolytope, project_onto_membership: bool = False) -> EstimatorState:
    """One projected-gradient step on the one-step prediction error.

    The projection targets the fixed initial set ``Theta0`` unless
    ``project_onto_membership`` is set, in which case the current membership
    set is used instead.
    """
    Dmat = sys.regressor(x_prev, u_prev)
    x_pred = sys.step(state.theta_hat, x_prev, u_prev)
    err = np.asarray(x_next, dtype=float) - x_pred
    theta_est = state.theta_hat + state.mu * Dmat.T @ err
    target = state.Theta_k if project_onto_membership else Theta0
    theta_hat = project(theta_est, target)
    return replace(state, theta_hat=theta_hat,
                   cumulative_sq_error=state.cumulative_sq_error + float(err @ err))


def one_step_prediction_error(sys: AffineParamSystem, theta_hat, theta_true, x, u) -> np.ndarray:
    A1, B1 = sys.assemble(theta_true)
    A0, B0 = sys.assemble(theta_hat)
    direct = (A1 - A0) @ np.ravel(x) + (B1 - B0) @ np.ravel(u)
    via_regressor = sys.regressor(x, u) @ (np.asarray(theta_true, float) - np.asarray(theta_hat, float))
    scale = 1.0 + np.max(np.abs(direct), initial=0.0)
    if np.max(np.abs(direct - via_regressor), initial=0.0) > 1e-10 * scale:
        raise ArithmeticError("prediction error paths disagree")
    return direct


def c1(l: int, a_norm: float) -> float:
    """Geometric sum ``1 + a + ... + a^(l-1)``; equals ``l`` when ``a == 1``."""
    if l < 0 or a_norm < 0:
        raise ValueError("need l >= 0 and a_norm >= 0")
    if abs(a_norm - 1.0) < 1e-9:
        return float(l)
    return (1.0 - a_norm ** l) / (1.0 - a_norm)


def prediction_error_bound(l: int, a_norm: float, theta_err_norm: float, mu: float) -> float:
    """Upper bound on ``||x~_{l|k}||^2``; ``a_norm`` is ``||A(theta_hat)||``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return c1(l, a_norm) ** 2 * theta_err_norm ** 2 / mu
