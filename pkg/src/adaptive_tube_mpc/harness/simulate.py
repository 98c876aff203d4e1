"""Closed-loop simulation of the adaptive tube controller and cost oracles."""

from __future__ import annotations

import numpy as np

from .. import estimator as est
from ..errors import (InitiallyInfeasible, OcpInfeasible, RecursiveFeasibilityViolated,
                      RiccatiDiverged)
from ..geometry import box
from ..model import TrajectoryLog
from ..tube_mpc import control_input, in_tube, ocp_cost, solve_ocp, tube_violation
from .config import Prepared, RunConfig, prepare

INVARIANT_TOL = 1e-6
ERROR_SUM_TOL = 1e-8
MEMBERSHIP_TOL = 1e-7


def simulate_closed_loop(cfg: RunConfig, prep: Prepared | None = None,
                         check_invariants: bool = True) -> TrajectoryLog:
    """Run the adaptive controller against the true parameter until convergence.

    The loop stops once ``||x_k|| < x_tol`` (the tail ``x_k' P x_k`` is then
    added to the cost) or after ``T_max`` steps.  With ``check_invariants``
    every step re-validates tube soundness, constraint satisfaction, the
    membership and projection invariants and the running prediction-error
    bound; failures are appended to ``log.violations``.

    Raises
    ------
    InitiallyInfeasible
        The OCP has no solution at ``x0``.
    RecursiveFeasibilityViolated
        The OCP became infeasible after a feasible start.
    """
    prep = prepare(cfg) if prep is None else prep
    sys, zc, sc, tube = cfg.system, cfg.constraints, cfg.cost, prep.tube
    Theta0 = cfg.Theta0
    state = est.initial_state(cfg.theta_hat0, Theta0, prep.mu)
    theta_star = cfg.theta_star
    theta_err0 = float(np.linalg.norm(theta_star - cfg.theta_hat0))
    log = TrajectoryLog(error_sum_bound=theta_err0 ** 2 / prep.mu)
    x = cfg.x0.copy()
    log.states.append(x.copy())
    log.estimates.append(state.theta_hat.copy())
    log.membership_sets.append(state.vertices)
    log.membership_polytopes.append(state.Theta_k)
    viol = log.violations

    def flag(k, msg):
        viol.append(f"step {k}: {msg}")

    for k in range(cfg.T_max):
        if np.linalg.norm(x) < cfg.x_tol:
            log.converged = True
            break
        try:
            dec = solve_ocp(sys, zc, sc, tube, x, state.theta_hat, state.vertices)
        except OcpInfeasible as exc:
            if k == 0:
                raise InitiallyInfeasible(f"OCP infeasible at x0 = {x}") from exc
            raise RecursiveFeasibilityViolated(f"OCP infeasible at step {k} after a feasible start") from exc
        u = control_input(dec, tube, x)
        x_next = sys.step(theta_star, x, u)

        if check_invariants:
            worst = tube_violation(sys, zc, tube, dec, x, state.vertices)
            bad = {key: val for key, val in worst.items() if val > INVARIANT_TOL}
            if bad:
                flag(k, f"tube re-check failed {bad}")
            if not in_tube(tube, dec.z[1], dec.alpha[1], x_next, INVARIANT_TOL):
                flag(k, "realized state left the first predicted tube")
            if not zc.contains(x, u, INVARIANT_TOL):
                flag(k, "state/input pair outside Z")
            recomputed = ocp_cost(sc, tube, dec.nominal_states, dec.v)
            if abs(recomputed - dec.value) > 1e-8 * max(1.0, abs(dec.value)):
                flag(k, f"value {dec.value} does not match re-evaluated cost {recomputed}")
            if Theta0.contains_point(state.theta_hat, 0.0) and state.Theta_k.contains_point(
                    state.theta_hat, MEMBERSHIP_TOL):
                xN = dec.nominal_states[-1]
                if xN @ tube.P @ xN > prep.c_f + INVARIANT_TOL * max(1.0, prep.c_f):
                    flag(k, "terminal nominal state exceeds c_f")

        log.inputs.append(np.atleast_1d(u).copy())
        log.stage_costs.append(sc(x, u))
        log.values_VN.append(dec.value)

        Dmat, d = est.delta_set(sys, x, u, x_next)
        prev = state
        state = est.update_membership(state, Dmat, d, cfg.slack, cfg.facet_cap)
        state = est.point_update(state, sys, x, u, x_next, Theta0, cfg.project_onto_membership)
        state = state.with_vertices()
        log.cumulative_sq_error.append(state.cumulative_sq_error)

        if check_invariants:
            if state.cumulative_sq_error > log.error_sum_bound + ERROR_SUM_TOL:
                flag(k, f"prediction error sum {state.cumulative_sq_error} exceeds {log.error_sum_bound}")
            if state.Theta_k is not prev.Theta_k and not all(
                    prev.Theta_k.contains_point(v, MEMBERSHIP_TOL) for v in state.vertices):
                flag(k, "membership set grew")
            if not state.Theta_k.contains_point(theta_star, MEMBERSHIP_TOL):
                flag(k, "true parameter left the membership set")
            if not Theta0.contains_point(state.theta_hat, MEMBERSHIP_TOL):
                flag(k, "point estimate left Theta0")

        x = x_next
        log.states.append(x.copy())
        log.estimates.append(state.theta_hat.copy())
        log.membership_sets.append(state.vertices)
        log.membership_polytopes.append(state.Theta_k)
    else:
        log.converged = bool(np.linalg.norm(x) < cfg.x_tol)
        log.truncated = not log.converged

    log.tail_cost = float(x @ tube.P @ x)
    return log


def certainty_equivalent_config(cfg: RunConfig, width: float = 1e-9) -> RunConfig:
    """Same problem with the estimate pinned to the true parameter."""
    ts = cfg.theta_star
    return cfg.with_updates(Theta0=box(ts - width / 2, ts + width / 2), theta_hat0=ts)


def v_infinity_upper(cfg: RunConfig, prep: Prepared | None = None, x0=None) -> float:
    """Cost of certainty-equivalent tube MPC from ``x0``: an upper bound on V_inf."""
    prep = prepare(cfg) if prep is None else prep
    ce = certainty_equivalent_config(cfg if x0 is None else cfg.with_updates(x0=np.asarray(x0, float)))
    if np.linalg.norm(ce.x0) == 0.0:
        return 0.0
    return simulate_closed_loop(ce, prep, check_invariants=False).cost


def dare(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100000) -> np.ndarray:
    """Stabilizing DARE solution by fixed-point iteration of the Riccati recursion."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            break
        if np.max(np.abs(Pn - P)) <= tol * max(1.0, np.max(np.abs(Pn))):
            return Pn
        P = Pn
    raise RiccatiDiverged("Riccati recursion did not reach a fixed point")


def v_infinity_lower(cfg: RunConfig, x0=None) -> float:
    """Unconstrained optimal cost ``x0' P_dare x0`` under the true parameter."""
    x0 = cfg.x0 if x0 is None else np.asarray(x0, dtype=float)
    A, B = cfg.system.assemble(cfg.theta_star)
    P = dare(A, B, cfg.Q, cfg.R)
    return float(x0 @ P @ x0)
