"""Vertex eigenvalue certificates for the feedback gain and terminal weight."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NonPositiveP, NotSymmetric
from .geometry import HPolytope, enumerate_vertices
from .model import AffineParamSystem

PASS_TOL = -1e-8
MARGINAL_TOL = -1e-4


class CertificateKind(str, Enum):
    ROBUST_STABILITY = "RobustStability"
    LYAPUNOV_BOUND = "LyapunovBound"


@dataclass(frozen=True)
class Certificate:
    kind: CertificateKind
    min_eigenvalue: float
    vertex_reports: list = field(default_factory=list)  # (theta vertex, margin)
    strict: bool = False  # margin must be positive, not merely nonnegative

    @property
    def passed(self) -> bool:
        if self.strict:
            return self.min_eigenvalue > -PASS_TOL
        return self.min_eigenvalue >= PASS_TOL

    @property
    def status(self) -> str:
        """``"pass"``, ``"marginal"`` (margin in [-1e-4, -1e-8)) or ``"fail"``."""
        if self.passed:
            return "pass"
        if self.min_eigenvalue >= MARGINAL_TOL:
            return "marginal"
        return "fail"

    def worst_vertex(self) -> np.ndarray:
        return min(self.vertex_reports, key=lambda r: r[1])[0]


def _vertices(Theta) -> np.ndarray:
    if isinstance(Theta, HPolytope):
        return enumerate_vertices(Theta)
    return np.atleast_2d(np.asarray(Theta, dtype=float))


def lyapunov_block(Acl: np.ndarray, P: np.ndarray, Qbar: np.ndarray) -> np.ndarray:
    """Schur form of ``Acl' P Acl + Qbar <= P``; affine in ``Acl``."""
    return np.block([[P - Qbar, Acl.T @ P], [P @ Acl, P]])


def verify_P(sys: AffineParamSystem, K, P, Q, R, Theta=None) -> Certificate:
    """Check ``A_cl(theta)' P A_cl(theta) + Q + K'RK <= P`` on all of Theta.

    The Schur block is affine in theta, so positive semidefiniteness at the
    vertices of Theta extends to the whole set by convexity.  A pass also
    certifies robust Schur stability through the common Lyapunov function.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if P.shape[0] != P.shape[1] or np.max(np.abs(P - P.T)) > 1e-12 * max(1.0, np.max(np.abs(P))):
        raise NotSymmetric("P must be symmetric")
    if np.linalg.eigvalsh(P)[0] < 0:
        raise NonPositiveP("P must be positive semidefinite")
    Qbar = Q + K.T @ R @ K
    reports = []
    for t in _vertices(sys.Theta if Theta is None else Theta):
        M = lyapunov_block(sys.closed_loop(t, K), P, Qbar)
        reports.append((t, float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])))
    return Certificate(CertificateKind.LYAPUNOV_BOUND, min(r[1] for r in reports), reports)


def spectral_radius_report(sys: AffineParamSystem, K, Theta=None) -> list:
    """Spectral radius of the closed loop at each vertex of Theta.

    Informational only: stability at every vertex does not imply stability
    on the whole set.  Use ``verify_P`` as the certificate.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return [(t, float(np.max(np.abs(np.linalg.eigvals(sys.closed_loop(t, K))))))
            for t in _vertices(sys.Theta if Theta is None else Theta)]


def robust_stability_certificate(sys: AffineParamSystem, K, Theta=None) -> Certificate:
    """Vertex spectral radii packaged as a certificate with margin ``1 - rho``.

    Passing needs ``rho < 1 - 1e-8`` at every vertex; ``rho`` within ``1e-4``
    of one is marginal.
    """
    reports = [(t, 1.0 - rho) for t, rho in spectral_radius_report(sys, K, Theta)]
    return Certificate(CertificateKind.ROBUST_STABILITY, min(r[1] for r in reports), reports, strict=True)
