"""Problem builders shared by the test modules."""

import numpy as np
import scipy.linalg

from adaptive_tube_mpc.certify import verify_P
from adaptive_tube_mpc.errors import AtmpcError
from adaptive_tube_mpc.geometry import box
from adaptive_tube_mpc.harness.config import RunConfig, prepare
from adaptive_tube_mpc.harness.simulate import certainty_equivalent_config
from adaptive_tube_mpc.model import AffineParamSystem
from adaptive_tube_mpc.tube_mpc import solve_ocp


def scalar_config(a_range=(0.2, 0.8), **kw) -> RunConfig:
    """``x+ = theta x + u`` with ``theta`` in ``a_range`` and box constraints."""
    lo, hi = a_range
    d = dict(A=(np.zeros((1, 1)), np.ones((1, 1))), B=(np.ones((1, 1)), np.zeros((1, 1))),
             Theta0=box([lo], [hi]), theta_star=[0.5 * (lo + hi)], theta_hat0=[lo], x0=[1.0],
             F=np.array([[0.2], [-0.2], [0.0], [0.0]]), G=np.array([[0.0], [0.0], [0.5], [-0.5]]),
             N=3, Q=[[1.0]], R=[[1.0]], K=[[0.0]], P=[[10.0]])
    d.update(kw)
    return RunConfig(**d)


def _random_candidate(rng, p):
    n = 2
    A0 = rng.normal(size=(n, n))
    A0 *= rng.uniform(0.6, 1.1) / max(abs(np.linalg.eigvals(A0)))
    B0 = rng.normal(size=(n, 1))
    scale = rng.uniform(0.02, 0.08)
    A = [A0] + [scale * rng.normal(size=(n, n)) for _ in range(p)]
    B = [B0] + [scale * rng.normal(size=(n, 1)) for _ in range(p)]
    Theta0 = box(np.zeros(p), np.ones(p))
    center = np.full(p, 0.5)
    Ac = A0 + sum(A[i + 1] * center[i] for i in range(p))
    Bc = B0 + sum(B[i + 1] * center[i] for i in range(p))
    Q, R = np.eye(n), np.eye(1)
    Pd = scipy.linalg.solve_discrete_are(Ac, Bc, Q, R)
    K = -np.linalg.solve(R + Bc.T @ Pd @ Bc, Bc.T @ Pd @ Ac)
    return A, B, Theta0, K, Q, R, Pd


def random_config(seed: int, p: int | None = None, max_tries: int = 50) -> RunConfig:
    """A random certified second-order problem that is feasible from its ``x0``.

    K is the nominal LQR gain, P a scaled nominal Riccati matrix that passes
    the vertex Lyapunov certificate, and ``x0`` is shrunk until the tube OCP
    is feasible.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        pp = int(rng.integers(1, 4)) if p is None else p
        A, B, Theta0, K, Q, R, Pd = _random_candidate(rng, pp)
        sys = AffineParamSystem(tuple(A), tuple(B), Theta0)
        P = None
        for c in (1.0, 1.2, 1.5, 2.0, 3.0, 5.0):
            if verify_P(sys, K, c * Pd, Q, R).passed:
                P = c * Pd
                break
        if P is None:
            continue
        theta_star = rng.uniform(0, 1, size=pp)
        theta_hat0 = rng.uniform(0, 1, size=pp)
        d = rng.normal(size=2)
        x0 = 3.0 * d / np.linalg.norm(d)
        try:
            cfg = RunConfig(A=tuple(A), B=tuple(B), Theta0=Theta0, theta_star=theta_star,
                            theta_hat0=theta_hat0, x0=x0,
                            F=np.array([[0.2, 0], [-0.2, 0], [0, 0.2], [0, -0.2], [0, 0], [0, 0]]),
                            G=np.array([[0.0], [0], [0], [0], [1 / 3], [-1 / 3]]),
                            N=6, Q=Q, R=R, K=K, P=P, lambda_target=0.95, T_max=300)
            prep = prepare(cfg)
        except AtmpcError:
            continue
        for _ in range(6):
            try:
                solve_ocp(cfg.system, cfg.constraints, cfg.cost, prep.tube, cfg.x0, cfg.theta_hat0,
                          prep.theta_vertices)
                return cfg.with_updates(X0=prep.tube.X0, Xf=prep.tube.Xf, mu=prep.mu)
            except AtmpcError:
                cfg = cfg.with_updates(x0=0.5 * cfg.x0)
    raise RuntimeError("could not generate a feasible random configuration")


def lqr_regime_config(cfg: RunConfig, scale: float = 100.0) -> RunConfig:
    """Constraints inflated by ``scale`` and a membership box of width 1e-9 at the truth."""
    ce = certainty_equivalent_config(cfg)
    return ce.with_updates(F=cfg.F / scale, G=cfg.G / scale, X0=None, Xf=None, mu=None)
