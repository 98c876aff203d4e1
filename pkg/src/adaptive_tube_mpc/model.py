"""Uncertain linear system with affine parameter dependence, the polytopic
constraint set ``{(x, u) : F x + G u <= 1}``, the quadratic stage cost and
the trajectory log produced by closed-loop simulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionMismatch, UnboundedPolytope
from .geometry import TOL, HPolytope, enumerate_vertices
from .qp import Status, solve_lp


def _vec(v, size: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != size:
        raise DimensionMismatch(f"{name} has length {v.size}, expected {size}")
    return v


@dataclass(frozen=True, eq=False)
class AffineParamSystem:
    """``x+ = A(theta) x + B(theta) u`` with ``(A, B)(theta) = (A0, B0) + sum_i (Ai, Bi) theta_i``.

    ``A`` and ``B`` hold ``p + 1`` matrices each; ``Theta`` is the polytope known
    to contain the true parameter.
    """

    A: tuple
    B: tuple
    Theta: HPolytope

    def __post_init__(self):
        A = tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A)
        B = tuple(np.asarray(b, dtype=float).reshape(A[0].shape[0], -1) for b in self.B)
        if len(A) != len(B) or len(A) < 1:
            raise DimensionMismatch("A and B must both hold p + 1 matrices")
        n = A[0].shape[0]
        m = B[0].shape[1]
        if any(a.shape != (n, n) for a in A):
            raise DimensionMismatch("all A_i must be n x n")
        if any(b.shape != (n, m) for b in B):
            raise DimensionMismatch("all B_i must be n x m")
        if self.Theta.dim != len(A) - 1:
            raise DimensionMismatch(f"Theta has dimension {self.Theta.dim}, expected p = {len(A) - 1}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "_Astack", np.stack(A[1:]) if len(A) > 1 else np.zeros((0, n, n)))
        object.__setattr__(self, "_Bstack", np.stack(B[1:]) if len(B) > 1 else np.zeros((0, n, m)))

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def p(self) -> int:
        return len(self.A) - 1

    def assemble(self, theta):
        theta = _vec(theta, self.p, "theta")
        A = self.A[0] + np.tensordot(theta, self._Astack, axes=1)
        B = self.B[0] + np.tensordot(theta, self._Bstack, axes=1)
        return A, B

    def closed_loop(self, theta, K) -> np.ndarray:
        A, B = self.assemble(theta)
        return A + B @ np.atleast_2d(K)

    def step(self, theta, x, u) -> np.ndarray:
        A, B = self.assemble(theta)
        return A @ _vec(x, self.n, "x") + B @ _vec(u, self.m, "u")

    def regressor(self, x, u) -> np.ndarray:
        """``D(x, u)``: column ``i`` is ``A_i x + B_i u``."""
        x = _vec(x, self.n, "x")
        u = _vec(u, self.m, "u")
        return (self._Astack @ x + self._Bstack @ u).T.reshape(self.n, self.p)

    def nominal_part(self, x, u) -> np.ndarray:
        return self.A[0] @ _vec(x, self.n, "x") + self.B[0] @ _vec(u, self.m, "u")


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """``Z = {(x, u) : F x + G u <= 1}``; must be bounded."""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        G = np.asarray(self.G, dtype=float).reshape(F.shape[0], -1)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        self._check_bounded()

    @property
    def n(self) -> int:
        return self.F.shape[1]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    def as_polytope(self) -> HPolytope:
        return HPolytope(np.hstack([self.F, self.G]), np.ones(self.F.shape[0]))

    def _check_bounded(self):
        P = self.as_polytope()
        for i in range(P.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(P.dim)
                c[i] = -sign
                sol = solve_lp(c, P.H, P.h)
                if sol.status is Status.UNBOUNDED:
                    raise ConfigurationError("constraint set Z is unbounded")
                if sol.status is Status.INFEASIBLE:
                    raise ConfigurationError("constraint set Z is empty")

    def contains(self, x, u, tol: float = TOL) -> bool:
        return bool(np.all(self.F @ np.ravel(x) + self.G @ np.ravel(u) <= 1.0 + tol))

    def vertices(self) -> np.ndarray:
        """Vertices of Z in stacked ``(x, u)`` coordinates."""
        try:
            return enumerate_vertices(self.as_polytope())
        except UnboundedPolytope as exc:  # pragma: no cover - excluded at construction
            raise ConfigurationError("constraint set Z is unbounded") from exc

    def scaled(self, s: float) -> "ConstraintSet":
        """``s * Z``."""
        return ConstraintSet(self.F / s, self.G / s)

    @classmethod
    def from_boxes(cls, x_lower, x_upper, u_lower, u_upper) -> "ConstraintSet":
        """Box constraints; every bound must be nonzero with the origin strictly inside."""
        rows_F, rows_G = [], []
        n, m = len(x_lower), len(u_lower)
        for i, (lo, hi) in enumerate(zip(x_lower, x_upper)):
            e = np.zeros(n)
            e[i] = 1.0
            rows_F += [e / hi, e / lo]
            rows_G += [np.zeros(m), np.zeros(m)]
        for j, (lo, hi) in enumerate(zip(u_lower, u_upper)):
            e = np.zeros(m)
            e[j] = 1.0
            rows_F += [np.zeros(n), np.zeros(n)]
            rows_G += [e / hi, e / lo]
        return cls(np.array(rows_F), np.array(rows_G))


@dataclass(frozen=True, eq=False)
class StageCost:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if np.max(np.abs(M - M.T)) > 1e-12:
                raise ConfigurationError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M)[0] <= 1e-10:
                raise ConfigurationError(f"{name} must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    def __call__(self, x, u) -> float:
        x = np.ravel(x)
        u = np.ravel(u)
        return float(x @ self.Q @ x + u @ self.R @ u)


@dataclass
class TrajectoryLog:
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    stage_costs: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    membership_sets: list = field(default_factory=list)
    # exact half-space form; the vertex lists above flatten sets thinner than FLAT_TOL
    membership_polytopes: list = field(default_factory=list)
    values_VN: list = field(default_factory=list)
    # per-step diagnostics
    cumulative_sq_error: list = field(default_factory=list)
    error_sum_bound: float = float("nan")
    tail_cost: float = 0.0
    converged: bool = False
    truncated: bool = False
    violations: list = field(default_factory=list)

    @property
    def cost(self) -> float:
        """Truncated sum of stage costs plus the terminal tail bound."""
        return float(np.sum(self.stage_costs) + self.tail_cost)

    def xy(self) -> np.ndarray:
        return np.array(self.states)

    def check_consistency(self, cost: StageCost) -> None:
        if len(self.states) != len(self.inputs) + 1:
            raise AssertionError("states must have one more entry than inputs")
        for x, u, c in zip(self.states, self.inputs, self.stage_costs):
            if abs(cost(x, u) - c) > 1e-10 * max(1.0, abs(c)):
                raise AssertionError("logged stage cost does not match the state/input pair")
