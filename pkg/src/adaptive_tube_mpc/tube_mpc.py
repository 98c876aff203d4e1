"""Homothetic tube MPC.

Tubes are ``X_l = {z_l} + alpha_l X0`` with a fixed cross-section
``X0 = {x : H0 x <= 1}``.  The optimal control problem is a convex QP over
the stacked decision ``(z, alpha, v, xhat)`` where ``xhat`` is the nominal
trajectory under the point estimate and ``u_l = K xhat_l + v_l``.

Because ``alpha_l >= 0``, every constraint that must hold for all vertices
``v^j`` of X0 reduces exactly to one row carrying the support value
``max_j row . v^j`` as the coefficient of ``alpha_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, OcpInfeasible, SynthesisFailed
from .geometry import (TOL, EmptyPolytope, HPolytope, UnboundedPolytope, chebyshev_center, contains,
                       enumerate_vertices, remove_redundant)
from .model import AffineParamSystem, ConstraintSet, StageCost
from .qp import QpSolution, QuadProgram, Status, solve_qp


@dataclass(frozen=True, eq=False)
class TubeConfig:
    N: int
    K: np.ndarray
    P: np.ndarray
    X0: HPolytope
    Xf: HPolytope

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if self.N < 1:
            raise ConfigurationError("horizon N must be positive")
        if np.max(np.abs(P - P.T)) > 1e-12 or np.linalg.eigvalsh(P)[0] <= 0:
            raise ConfigurationError("terminal weight P must be symmetric positive definite")
        X0 = normalize_cross_section(self.X0)
        if self.Xf.dim != X0.dim + 1:
            raise ConfigurationError("Xf must live in (z, alpha) space of dimension n + 1")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "X0", X0)
        object.__setattr__(self, "_X0_vertices", enumerate_vertices(X0))

    @property
    def X0_vertices(self) -> np.ndarray:
        return self._X0_vertices


def normalize_cross_section(X0: HPolytope) -> HPolytope:
    """Rewrite X0 as ``{x : H0 x <= 1}``; the origin must be interior."""
    if np.any(X0.h <= 0):
        raise ConfigurationError("cross-section X0 must contain the origin in its interior")
    return HPolytope(X0.H / X0.h[:, None], np.ones(X0.n_facets))


@dataclass
class TubeDecision:
    z: np.ndarray          # (N+1, n)
    alpha: np.ndarray      # (N+1,)
    v: np.ndarray          # (N, m)
    value: float
    nominal_states: np.ndarray  # (N+1, n)
    solution: QpSolution = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# set synthesis

def contraction_factor(sys: AffineParamSystem, K, X0: HPolytope, theta_vertices) -> float:
    """``max_i max_rows max_j H0 A_cl(theta^i) v^j`` for ``X0 = {H0 x <= 1}``."""
    X0 = normalize_cross_section(X0)
    V = enumerate_vertices(X0)
    return max(float(np.max(X0.H @ sys.closed_loop(t, K) @ V.T)) for t in theta_vertices)


def _violated_rows(S: HPolytope, rows: np.ndarray, rhs: np.ndarray):
    """Candidate rows that cut ``S``, or None when all are implied.

    The maximum of a linear form over a bounded polytope is attained at a
    vertex, so one vertex enumeration replaces a linear program per row.
    """
    try:
        V = enumerate_vertices(S)
    except EmptyPolytope as exc:
        raise SynthesisFailed("set iteration became empty") from exc
    except UnboundedPolytope as exc:
        raise SynthesisFailed("set iteration produced an unbounded set") from exc
    worst = np.max(rows @ V.T, axis=1)
    cut = worst > rhs + 1e-9 * np.maximum(1.0, np.abs(rhs))
    if not np.any(cut):
        return None
    return rows[cut], rhs[cut]


def synth_cross_section(sys: AffineParamSystem, K, lam_target: float = 0.9, max_iter: int = 100,
                        seed: HPolytope | None = None, theta_vertices=None) -> HPolytope:
    """A ``lam_target``-contractive polytope for every closed-loop vertex matrix.

    Iterates ``X <- X  intersect  {x : H A_cl(theta^i) x <= lam_target}`` from a seed
    box until the set stops changing.
    """
    if not 0.0 < lam_target < 1.0:
        raise ValueError("lam_target must lie in (0, 1)")
    n = sys.n
    if theta_vertices is None:
        theta_vertices = enumerate_vertices(sys.Theta)
    if seed is None:
        seed = HPolytope(np.vstack([np.eye(n), -np.eye(n)]), np.ones(2 * n))
    X = normalize_cross_section(seed)
    Acls = [sys.closed_loop(t, K) for t in theta_vertices]
    frontier = X.H
    for _ in range(max_iter):
        cand = np.vstack([frontier @ A for A in Acls]) / lam_target
        new = _violated_rows(X, cand, np.ones(len(cand)))
        if new is None:
            return X
        X = remove_redundant(X.add_halfspaces(new[0], new[1]))
        X = HPolytope(X.H / X.h[:, None], np.ones(X.n_facets))
        frontier = new[0]
        if X.n_facets > 200:
            break
    raise SynthesisFailed("no contractive cross-section found; supply X0 explicitly")


def _support_coefficients(rows: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.max(rows @ V.T, axis=1)


def tube_successor_data(sys: AffineParamSystem, K, X0: HPolytope, theta_vertices):
    """Per-vertex closed-loop data used both by the OCP and the terminal set.

    Returns ``(Acl, Bs, lam)`` where ``lam[i, r] = max_j H0_r A_cl(theta^i) v^j``.
    """
    V = enumerate_vertices(X0)
    Acl, Bs, lam = [], [], []
    for t in theta_vertices:
        A, B = sys.assemble(t)
        Ac = A + B @ K
        Acl.append(Ac)
        Bs.append(B)
        lam.append(_support_coefficients(X0.H @ Ac, V))
    return np.array(Acl), np.array(Bs), np.array(lam)


def _admissible_rows(zc: ConstraintSet, K, X0V):
    FK = zc.F + zc.G @ K
    c = _support_coefficients(FK, X0V)
    return np.hstack([FK, c[:, None]]), np.ones(FK.shape[0])


def synth_terminal_set(sys: AffineParamSystem, zc: ConstraintSet, K, X0: HPolytope,
                       max_iter: int = 200, theta_vertices=None, mode: str = "common") -> HPolytope:
    """Terminal set in ``(z, alpha)`` space.

    The result is the largest set (within ``max_iter`` pre-image steps) that is
    constraint admissible, has ``alpha >= 0`` and is invariant under a tube
    successor map:

    * ``mode="common"`` (default): one successor serves every theta in Theta,
      ``(z, a) -> (A_cl(theta_c) z, max_{r,i}[H0_r (A_cl(theta^i) - A_cl(theta_c)) z + lam_ri a])``
      with ``theta_c`` the vertex centroid.  The successor tube contains the
      image of the tube under every ``A_cl(theta)``, which is what recursive
      feasibility of the OCP needs.
    * ``mode="vertex"``: ``(z, a) -> (A_cl(theta^i) z, lam_i a)`` must stay in the
      set for each vertex separately.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    X0 = normalize_cross_section(X0)
    X0V = enumerate_vertices(X0)
    n = sys.n
    if theta_vertices is None:
        theta_vertices = enumerate_vertices(sys.Theta)
    theta_vertices = np.atleast_2d(theta_vertices)
    Acl, _, lam = tube_successor_data(sys, K, X0, theta_vertices)
    adm_H, adm_h = _admissible_rows(zc, K, X0V)
    # alpha >= 0
    S = HPolytope(np.vstack([adm_H, np.r_[np.zeros(n), -1.0]]), np.r_[adm_h, 0.0])

    if mode == "common":
        Ac = sys.closed_loop(theta_vertices.mean(axis=0), K)
        # pieces of the successor scale: a_ri . z + lam_ri * alpha
        pieces = np.array([np.r_[X0.H[r] @ (Acl[i] - Ac), lam[i, r]]
                           for i in range(len(Acl)) for r in range(X0.n_facets)])

        def pre(Hrows, hrows):
            out_H, out_h = [], []
            for row, b in zip(Hrows, hrows):
                hz, ha = row[:n], row[n]
                if ha < 0:
                    if np.any(hz) or b < 0:
                        raise SynthesisFailed("terminal set row with negative alpha weight unsupported")
                    continue  # alpha+ >= 0 holds automatically
                base = np.r_[hz @ Ac, 0.0]
                for piece in pieces:
                    out_H.append(base + ha * piece)
                    out_h.append(b)
            return np.array(out_H).reshape(-1, n + 1), np.array(out_h)
    elif mode == "vertex":
        lam_i = lam.max(axis=1)

        def pre(Hrows, hrows):
            out_H = [np.hstack([Hrows[:, :n] @ Acl[i], Hrows[:, n:] * lam_i[i]]) for i in range(len(Acl))]
            return np.vstack(out_H), np.tile(hrows, len(Acl))
    else:
        raise ValueError(f"unknown successor mode {mode!r}")

    frontier_H, frontier_h = S.H, S.h
    for _ in range(max_iter):
        cand_H, cand_h = pre(frontier_H, frontier_h)
        zero = ~np.any(cand_H, axis=1)
        if np.any(cand_h[zero] < -TOL):
            raise SynthesisFailed("terminal set is empty")
        new = _violated_rows(S, cand_H[~zero], cand_h[~zero])
        if new is None:
            _, radius = chebyshev_center(S)
            if radius <= 1e-9:
                raise SynthesisFailed("terminal set collapsed to measure zero")
            return S
        try:
            S = remove_redundant(S.add_halfspaces(*new))
        except EmptyPolytope as exc:
            raise SynthesisFailed("terminal set became empty") from exc
        frontier_H, frontier_h = new
    raise SynthesisFailed("terminal set iteration cap reached without a fixed point")


def terminal_sets_equal(A: HPolytope, B: HPolytope) -> bool:
    return contains(A, B) and contains(B, A)


# ---------------------------------------------------------------------------
# optimal control problem

@dataclass(frozen=True)
class OcpLayout:
    N: int
    n: int
    m: int

    @property
    def size(self) -> int:
        N, n, m = self.N, self.n, self.m
        return (N + 1) * n + (N + 1) + N * m + (N + 1) * n

    def z(self, l):
        return slice(l * self.n, (l + 1) * self.n)

    def alpha(self, l):
        return (self.N + 1) * self.n + l

    def v(self, l):
        o = (self.N + 1) * (self.n + 1)
        return slice(o + l * self.m, o + (l + 1) * self.m)

    def xh(self, l):
        o = (self.N + 1) * (self.n + 1) + self.N * self.m
        return slice(o + l * self.n, o + (l + 1) * self.n)

    def unpack(self, x):
        N, m = self.N, self.m
        z = np.array([x[self.z(l)] for l in range(N + 1)])
        alpha = np.array([x[self.alpha(l)] for l in range(N + 1)])
        v = np.array([x[self.v(l)] for l in range(N)]).reshape(N, m)
        xh = np.array([x[self.xh(l)] for l in range(N + 1)])
        return z, alpha, v, xh


def _theta_vertices(Theta_k) -> np.ndarray:
    if isinstance(Theta_k, HPolytope):
        return enumerate_vertices(Theta_k)
    return np.atleast_2d(np.asarray(Theta_k, dtype=float))


def build_ocp(sys: AffineParamSystem, zc: ConstraintSet, sc: StageCost, cfg: TubeConfig, x_k,
              theta_hat, Theta_k) -> QuadProgram:
    """Assemble the tube OCP as a QuadProgram (see module docstring).

    ``Theta_k`` is the membership set, either as an HPolytope or as an array
    of its vertices (rows).
    """
    N, n, m = cfg.N, sys.n, sys.m
    L = OcpLayout(N, n, m)
    nv = L.size
    K = cfg.K
    H0 = cfg.X0.H
    R0 = H0.shape[0]
    x_k = np.asarray(x_k, dtype=float).reshape(-1)
    theta_vertices = _theta_vertices(Theta_k)
    Acl, Bs, lam = tube_successor_data(sys, K, cfg.X0, theta_vertices)
    adm_H, _ = _admissible_rows(zc, K, cfg.X0_vertices)
    FK = adm_H[:, :n]
    c_adm = adm_H[:, n]
    nc = FK.shape[0]
    nth = len(theta_vertices)

    rows = []
    rhs = []

    # x_k in {z_0} + alpha_0 X0
    blk = np.zeros((R0, nv))
    blk[:, L.z(0)] = -H0
    blk[:, L.alpha(0)] = -1.0
    rows.append(blk)
    rhs.append(-H0 @ x_k)

    tube_rows = nth * R0
    HA = np.concatenate([H0 @ Acl[i] for i in range(nth)])
    HB = np.concatenate([H0 @ Bs[i] for i in range(nth)])
    lam_flat = lam.reshape(-1)
    negH0 = np.tile(-H0, (nth, 1))
    for l in range(N):
        blk = np.zeros((tube_rows, nv))
        blk[:, L.z(l)] = HA
        blk[:, L.alpha(l)] = lam_flat
        blk[:, L.v(l)] = HB
        blk[:, L.z(l + 1)] = negH0
        blk[:, L.alpha(l + 1)] = -1.0
        rows.append(blk)
        rhs.append(np.zeros(tube_rows))

        blk = np.zeros((nc, nv))
        blk[:, L.z(l)] = FK
        blk[:, L.alpha(l)] = c_adm
        blk[:, L.v(l)] = zc.G
        rows.append(blk)
        rhs.append(np.ones(nc))

    Xf = cfg.Xf
    blk = np.zeros((Xf.n_facets, nv))
    blk[:, L.z(N)] = Xf.H[:, :n]
    blk[:, L.alpha(N)] = Xf.H[:, n]
    rows.append(blk)
    rhs.append(Xf.h)

    blk = np.zeros((N + 1, nv))
    for l in range(N + 1):
        blk[l, L.alpha(l)] = -1.0
    rows.append(blk)
    rhs.append(np.zeros(N + 1))

    Aineq = np.vstack(rows)
    bineq = np.concatenate(rhs)

    # nominal dynamics under the point estimate
    Ah, Bh = sys.assemble(theta_hat)
    Aclh = Ah + Bh @ K
    Aeq = np.zeros(((N + 1) * n, nv))
    beq = np.zeros((N + 1) * n)
    Aeq[0:n, L.xh(0)] = np.eye(n)
    beq[0:n] = x_k
    for l in range(N):
        r = slice((l + 1) * n, (l + 2) * n)
        Aeq[r, L.xh(l + 1)] = np.eye(n)
        Aeq[r, L.xh(l)] = -Aclh
        Aeq[r, L.v(l)] = -Bh

    Q, R = sc.Q, sc.R
    Hq = np.zeros((nv, nv))
    QK = Q + K.T @ R @ K
    for l in range(N):
        xs, vs = L.xh(l), L.v(l)
        Hq[xs, xs] += QK
        Hq[xs, vs] += K.T @ R
        Hq[vs, xs] += R @ K
        Hq[vs, vs] += R
    Hq[L.xh(N), L.xh(N)] += cfg.P
    Hq = Hq + Hq.T  # factor 2 of the 0.5 x'Hx convention, symmetrized
    return QuadProgram(Hq, np.zeros(nv), Aineq, bineq, Aeq, beq)


def ocp_cost(sc: StageCost, cfg: TubeConfig, nominal_states, v) -> float:
    """Re-evaluate the finite-horizon cost from a nominal trajectory and v."""
    K = cfg.K
    total = 0.0
    for l in range(cfg.N):
        x = nominal_states[l]
        total += sc(x, K @ x + v[l])
    xN = nominal_states[cfg.N]
    return total + float(xN @ cfg.P @ xN)


def solve_ocp(sys: AffineParamSystem, zc: ConstraintSet, sc: StageCost, cfg: TubeConfig, x_k,
              theta_hat, Theta_k) -> TubeDecision:
    qp = build_ocp(sys, zc, sc, cfg, x_k, theta_hat, Theta_k)
    sol = solve_qp(qp)
    if sol.status is Status.INFEASIBLE:
        raise OcpInfeasible(f"tube OCP infeasible at x = {np.ravel(x_k)}")
    if not sol.optimal:
        raise OcpInfeasible(f"tube OCP returned {sol.status.value}")
    L = OcpLayout(cfg.N, sys.n, sys.m)
    z, alpha, v, xh = L.unpack(sol.x)
    return TubeDecision(z, alpha, v, max(sol.objective, 0.0), xh, sol)


def control_input(dec: TubeDecision, cfg: TubeConfig, x_k) -> np.ndarray:
    return cfg.K @ np.ravel(x_k) + dec.v[0]


def tube_violation(sys: AffineParamSystem, zc: ConstraintSet, cfg: TubeConfig, dec: TubeDecision,
                   x_k, Theta_k) -> dict:
    """Largest violation of each tube condition, checked vertex by vertex.

    This deliberately re-derives every condition from explicit tube vertices
    instead of the support-function rows used in ``build_ocp``.
    """
    K, H0, V0 = cfg.K, cfg.X0.H, cfg.X0_vertices
    out = {"initial": float(np.max(H0 @ (np.ravel(x_k) - dec.z[0]) - dec.alpha[0])),
           "propagation": -np.inf, "constraints": -np.inf, "alpha": float(np.max(-dec.alpha))}
    theta_vertices = _theta_vertices(Theta_k)
    for l in range(cfg.N):
        pts = dec.z[l] + dec.alpha[l] * V0
        us = pts @ K.T + dec.v[l]
        out["constraints"] = max(out["constraints"],
                                 float(np.max(pts @ zc.F.T + us @ zc.G.T - 1.0)))
        for t in theta_vertices:
            A, B = sys.assemble(t)
            succ = pts @ A.T + us @ B.T
            out["propagation"] = max(out["propagation"],
                                     float(np.max((succ - dec.z[l + 1]) @ H0.T - dec.alpha[l + 1])))
    zN = np.r_[dec.z[cfg.N], dec.alpha[cfg.N]]
    out["terminal"] = float(np.max(cfg.Xf.H @ zN - cfg.Xf.h))
    return out


def in_tube(cfg: TubeConfig, z, alpha, x, tol: float = 1e-6) -> bool:
    return bool(np.all(cfg.X0.H @ (np.ravel(x) - z) <= alpha + tol))
