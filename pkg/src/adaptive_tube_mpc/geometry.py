"""Halfspace polytopes and the small amount of polyhedral machinery the
controller needs: vertex enumeration (double description), support
functions, containment, redundancy removal and volume.

All routines target desk-scale dimensions (at most 4).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DimensionMismatch, DimensionTooHigh, EmptyPolytope, UnboundedPolytope
from .qp import Status, solve_lp

TOL = 1e-8
# Sets thinner than this (in normalized units) are treated as lying in
# their affine hull.
FLAT_TOL = 1e-6
MAX_DIM = 4


@dataclass(frozen=True, eq=False)
class HPolytope:
    """The set ``{y : H y <= h}``."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] != h.size:
            raise DimensionMismatch(f"H has {H.shape[0]} rows but h has {h.size} entries")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_facets(self) -> int:
        return self.H.shape[0]

    def contains_point(self, y, tol: float = TOL) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all(self.H @ y <= self.h + tol))

    def intersect(self, other: "HPolytope") -> "HPolytope":
        if other.dim != self.dim:
            raise DimensionMismatch("cannot intersect polytopes of different dimension")
        return HPolytope(np.vstack([self.H, other.H]), np.r_[self.h, other.h])

    def add_halfspaces(self, H, h) -> "HPolytope":
        return HPolytope(np.vstack([self.H, np.atleast_2d(H)]), np.r_[self.h, np.ravel(h)])

    def scaled(self, s: float) -> "HPolytope":
        """Homothet ``s * P`` about the origin (``s > 0``)."""
        return HPolytope(self.H, s * self.h)

    def translated(self, t) -> "HPolytope":
        return HPolytope(self.H, self.h + self.H @ np.asarray(t, dtype=float))

    def normalized(self) -> "HPolytope":
        """Rows scaled to unit norm; all-zero rows dropped (raises if one is violated)."""
        norms = np.linalg.norm(self.H, axis=1)
        zero = norms < 1e-14
        if np.any(self.h[zero] < -TOL):
            raise EmptyPolytope("a zero row has a negative offset")
        keep = ~zero
        return HPolytope(self.H[keep] / norms[keep, None], self.h[keep] / norms[keep])

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, facets={self.n_facets})"


def box(lower, upper) -> HPolytope:
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    d = lower.size
    return HPolytope(np.vstack([np.eye(d), -np.eye(d)]), np.r_[upper, -lower])


def support(P: HPolytope, c) -> float:
    """``max_{y in P} c'y``."""
    c = np.asarray(c, dtype=float)
    sol = solve_lp(-c, P.H, P.h)
    if sol.status is Status.INFEASIBLE:
        raise EmptyPolytope("support function of an empty polytope")
    if sol.status is Status.UNBOUNDED:
        raise UnboundedPolytope(f"polytope is unbounded in direction {c}")
    return -sol.objective


def contains(P: HPolytope, Q: HPolytope, tol: float = TOL) -> bool:
    """True iff ``Q`` is a subset of ``P`` (up to ``tol`` on normalized rows)."""
    Pn = P.normalized()
    for Hi, hi in zip(Pn.H, Pn.h):
        if support(Q, Hi) > hi + tol:
            return False
    return True


def chebyshev_center(P: HPolytope):
    """Center and radius of the largest inscribed ball (radius capped at 1e3)."""
    Pn = P.normalized()
    d = Pn.dim
    g = np.zeros(d + 1)
    g[-1] = -1.0
    A = np.hstack([Pn.H, np.ones((Pn.n_facets, 1))])
    A = np.vstack([A, np.r_[np.zeros(d), 1.0]])
    b = np.r_[Pn.h, 1e3]
    sol = solve_lp(g, A, b)
    if sol.status is not Status.OPTIMAL or sol.x[-1] < -TOL:
        raise EmptyPolytope("polytope is empty")
    return sol.x[:d], float(sol.x[-1])


def remove_redundant(P: HPolytope, tol: float = TOL) -> HPolytope:
    """Drop duplicate rows, then every facet that an LP shows to be implied by the rest."""
    Pn = P.normalized()
    # among rows with (numerically) identical normals keep only the tightest
    _, group = np.unique(np.round(Pn.H, 12), axis=0, return_inverse=True)
    group = group.reshape(-1)
    keep = sorted(int(np.flatnonzero(group == k)[np.argmin(Pn.h[group == k])])
                  for k in range(group.max() + 1))
    H, h = Pn.H[keep], Pn.h[keep]
    if H.shape[1] <= MAX_DIM and h.size > 2 * H.shape[1]:
        alive = _facet_rows_by_vertices(H, h)
        if alive is not None:
            return HPolytope(H[alive], h[alive])
    alive = np.ones(h.size, dtype=bool)
    for i in range(h.size):
        alive[i] = False
        A = np.vstack([H[alive], H[i]])
        b = np.r_[h[alive], h[i] + 1.0]
        sol = solve_lp(-H[i], A, b)
        if sol.status is Status.INFEASIBLE:
            raise EmptyPolytope("polytope is empty")
        if sol.status is Status.UNBOUNDED or -sol.objective > h[i] + tol:
            alive[i] = True
    return HPolytope(H[alive], h[alive])


def _facet_rows_by_vertices(H: np.ndarray, h: np.ndarray, tol: float = 1e-8):
    """Facet mask from the vertex set, or None when the shortcut does not apply.

    In a bounded full-dimensional polytope a row is a facet iff the vertices
    it touches span a hyperplane. Near-tight rows are kept, so the error
    direction is towards keeping redundant rows, never dropping facets.
    """
    try:
        _, radius = chebyshev_center(HPolytope(H, h))
        if radius <= FLAT_TOL:
            return None
        V = _double_description(H, h)
    except (UnboundedPolytope, EmptyPolytope):
        return None
    d = H.shape[1]
    gap = np.abs(V @ H.T - h) <= tol * (1.0 + np.abs(h))
    alive = np.zeros(h.size, dtype=bool)
    for i in range(h.size):
        Vi = V[gap[:, i]]
        if Vi.shape[0] >= d:
            alive[i] = d == 1 or np.linalg.matrix_rank(Vi[1:] - Vi[0], tol=1e-9) >= d - 1
    return alive


# ---------------------------------------------------------------------------
# vertex enumeration

def _double_description(H: np.ndarray, h: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Vertices of a bounded, full-dimensional ``{y : H y <= h}`` (rows normalized).

    Works on the homogenized cone ``{(y, t) : H y - h t <= 0, t >= 0}``; each
    constraint is added in turn and new extreme rays are formed from adjacent
    pairs straddling it (combinatorial adjacency test).
    """
    d = H.shape[1]
    rows = np.vstack([np.r_[np.zeros(d), -1.0], np.hstack([H, -h[:, None]])])
    m = rows.shape[0]
    D = d + 1
    # initial simplicial cone from D linearly independent rows, starting with t >= 0
    basis = [0]
    for i in range(1, m):
        if np.linalg.matrix_rank(rows[basis + [i]], tol=1e-9) == len(basis) + 1:
            basis.append(i)
            if len(basis) == D:
                break
    if len(basis) < D:
        raise UnboundedPolytope("constraint matrix is rank deficient (unbounded or lineality)")
    R = -np.linalg.inv(rows[basis]).T  # row j: ray tight on all basis rows except j
    R /= np.linalg.norm(R, axis=1, keepdims=True)
    tight = np.zeros((D, m), dtype=bool)
    for j in range(D):
        for jj, b in enumerate(basis):
            if jj != j:
                tight[j, b] = True
    done = np.zeros(m, dtype=bool)
    done[basis] = True
    for i in range(m):
        if done[i]:
            continue
        vals = R @ rows[i]
        pos = np.where(vals > tol)[0]
        neg = np.where(vals < -tol)[0]
        zer = np.where(np.abs(vals) <= tol)[0]
        new_R = []
        new_T = []
        if pos.size and neg.size:
            for p_ in pos:
                common_p = tight[p_]
                for n_ in neg:
                    Zs = common_p & tight[n_]
                    if Zs.sum() < D - 2:
                        continue
                    others = tight[:, Zs].all(axis=1)
                    others[p_] = others[n_] = False
                    if np.any(others):
                        continue
                    r = vals[p_] * R[n_] - vals[n_] * R[p_]
                    r /= np.linalg.norm(r)
                    new_R.append(r)
                    t = Zs.copy()
                    t[i] = True
                    new_T.append(t)
        keep = np.r_[neg, zer].astype(int)
        tight[zer, i] = True
        R = np.vstack([R[keep]] + ([np.array(new_R)] if new_R else []))
        tight = np.vstack([tight[keep]] + ([np.array(new_T)] if new_T else []))
        done[i] = True
    if np.any(R[:, -1] <= tol):
        raise UnboundedPolytope("polytope has a recession direction")
    V = R[:, :d] / R[:, -1:]
    return _unique_rows(V)


def _unique_rows(V: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    out = []
    for v in V:
        if not any(np.max(np.abs(v - w)) <= tol * max(1.0, np.max(np.abs(w))) for w in out):
            out.append(v)
    return np.array(out)


def enumerate_vertices(P: HPolytope) -> np.ndarray:
    """Minimal vertex set of a bounded, nonempty polytope as an array ``(k, dim)``.

    Lower-dimensional polytopes are handled in their affine hull: rows along
    which the set is thinner than ``FLAT_TOL`` are treated as equalities.
    """
    if P.dim > MAX_DIM:
        raise DimensionTooHigh(f"vertex enumeration supports dim <= {MAX_DIM}, got {P.dim}")
    Pn = P.normalized()
    if Pn.n_facets == 0:
        raise UnboundedPolytope("polytope has no facets")
    center, radius = chebyshev_center(Pn)
    if radius > FLAT_TOL:
        return _double_description(Pn.H, Pn.h)
    return _flat_vertices(Pn, center)


def _flat_vertices(Pn: HPolytope, center: np.ndarray) -> np.ndarray:
    flat = np.zeros(Pn.n_facets, dtype=bool)
    for i, (Hi, hi) in enumerate(zip(Pn.H, Pn.h)):
        sol = solve_lp(Hi, Pn.H, Pn.h)
        flat[i] = sol.optimal and hi - sol.objective <= FLAT_TOL
    if not np.any(flat):
        # thin but not aligned with any facet pair: enumerate directly
        return _double_description(Pn.H, Pn.h)
    E = Pn.H[flat]
    _, sv, Vt = np.linalg.svd(E)
    rank = int(np.sum(sv > 1e-9 * sv[0]))
    N = Vt[rank:].T
    if N.shape[1] == 0:
        return center[None, :]
    Hr = Pn.H[~flat] @ N
    hr = Pn.h[~flat] - Pn.H[~flat] @ center
    reduced = HPolytope(Hr, hr)
    if reduced.n_facets == 0:
        raise UnboundedPolytope("polytope is unbounded within its affine hull")
    if N.shape[1] == 1:
        # a segment: closed form avoids a degenerate DD call
        lo, hi = _interval(reduced)
        T = np.array([[lo], [hi]]) if hi - lo > 1e-12 else np.array([[0.5 * (lo + hi)]])
    else:
        T = enumerate_vertices(reduced)
    return _unique_rows(center + T @ N.T)


def _interval(P: HPolytope):
    a = P.H[:, 0]
    b = P.h
    ub = np.min(b[a > 1e-14] / a[a > 1e-14], initial=np.inf)
    lb = np.max(b[a < -1e-14] / a[a < -1e-14], initial=-np.inf)
    if np.any((np.abs(a) <= 1e-14) & (b < -TOL)):
        raise EmptyPolytope("polytope is empty")
    if not (np.isfinite(ub) and np.isfinite(lb)):
        raise UnboundedPolytope("unbounded interval")
    if lb > ub + TOL:
        raise EmptyPolytope("polytope is empty")
    return lb, max(lb, ub)


def volume(P: HPolytope, vertices: np.ndarray | None = None) -> float:
    """Lebesgue volume via a simplicial decomposition of the vertex hull.

    Lower-dimensional polytopes have volume 0.
    """
    if P.dim > MAX_DIM:
        raise DimensionTooHigh(f"volume supports dim <= {MAX_DIM}, got {P.dim}")
    V = enumerate_vertices(P) if vertices is None else np.asarray(vertices, dtype=float)
    d = P.dim
    if V.shape[0] <= d:
        return 0.0
    if d == 1:
        return float(V.max() - V.min())
    if np.linalg.matrix_rank(V[1:] - V[0], tol=1e-9) < d:
        return 0.0
    try:
        tri = Delaunay(V)
    except QhullError:
        return 0.0
    total = 0.0
    for simplex in tri.simplices:
        S = V[simplex[1:]] - V[simplex[0]]
        total += abs(np.linalg.det(S))
    return total / math.factorial(d)


# ---------------------------------------------------------------------------
# norms

def spectral_norm(M) -> float:
    """Largest singular value, from the eigenvalues of ``M'M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    G = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    return float(math.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))


def max_norm_over_vertices(fn: Callable[[np.ndarray], np.ndarray], Theta: HPolytope | np.ndarray,
                           squared: bool = False) -> float:
    """Maximum of ``||fn(theta)||`` over a polytope, for ``fn`` affine in theta.

    The induced 2-norm of an affine matrix family is convex in theta, so the
    maximum over the polytope is attained at a vertex.  ``Theta`` may also be
    given directly as an array of vertices.
    """
    V = Theta if isinstance(Theta, np.ndarray) else enumerate_vertices(Theta)
    best = max(spectral_norm(fn(v)) for v in V)
    return best ** 2 if squared else best


def box_vertices(lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    return np.array(list(itertools.product(*zip(lower, upper))), dtype=float)
