"""JSON run configuration and sweep specifications.

Matrices are row-major nested lists.  A minimal document::

    {
      "system": {"A": [A0, A1, ...], "B": [B0, B1, ...]},
      "Theta0": {"lower": [...], "upper": [...]}      # or {"H": ..., "h": ...}
      "theta_star": [...], "theta_hat0": [...], "x0": [...],
      "constraints": {"x_lower": ..., "x_upper": ..., "u_lower": ..., "u_upper": ...}
                                                      # or {"F": ..., "G": ...}
      "N": 10, "Q": ..., "R": ..., "K": ..., "P": ...
    }

Optional keys: ``X0`` and ``Xf`` (``{"H", "h"}``), ``mu``, ``mu_safety``,
``seed``, ``T_max``, ``x_tol``, ``epsilons``, ``lambda_weight``,
``c_theta_override``, ``dtheta_mu_exponent``, ``slack``, ``facet_cap``,
``project_onto_membership``, ``lambda_target``, ``terminal_mode``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, DimensionMismatch
from ..estimator import compute_mu
from ..geometry import HPolytope, box, enumerate_vertices
from ..model import AffineParamSystem, ConstraintSet, StageCost
from ..perf_bound import terminal_cost_bound
from ..tube_mpc import TubeConfig, synth_cross_section, synth_terminal_set

_OPTIONAL = {
    "X0": None, "Xf": None, "mu": None, "mu_safety": 0.99, "seed": 0, "T_max": 200,
    "x_tol": 1e-6, "epsilons": None, "lambda_weight": 1.0, "c_theta_override": None,
    "dtheta_mu_exponent": 2, "slack": 1e-8, "facet_cap": 64, "project_onto_membership": False,
    "lambda_target": 0.9, "terminal_mode": "common",
}


def _poly(spec) -> HPolytope:
    if isinstance(spec, HPolytope):
        return spec
    if "lower" in spec:
        return box(spec["lower"], spec["upper"])
    return HPolytope(spec["H"], spec["h"])


def _poly_dict(P: HPolytope) -> dict:
    return {"H": P.H.tolist(), "h": P.h.tolist()}


def _matrix(v) -> np.ndarray:
    return np.atleast_2d(np.asarray(v, dtype=float))


@dataclass(frozen=True, eq=False)
class RunConfig:
    A: tuple
    B: tuple
    Theta0: HPolytope
    theta_star: np.ndarray
    theta_hat0: np.ndarray
    x0: np.ndarray
    F: np.ndarray
    G: np.ndarray
    N: int
    Q: np.ndarray
    R: np.ndarray
    K: np.ndarray
    P: np.ndarray
    X0: HPolytope | None = None
    Xf: HPolytope | None = None
    mu: float | None = None
    mu_safety: float = 0.99
    seed: int = 0
    T_max: int = 200
    x_tol: float = 1e-6
    epsilons: tuple | None = None
    lambda_weight: float = 1.0
    c_theta_override: float | None = None
    dtheta_mu_exponent: int = 2
    slack: float = 1e-8
    facet_cap: int = 64
    project_onto_membership: bool = False
    lambda_target: float = 0.9
    terminal_mode: str = "common"
    system: AffineParamSystem = field(init=False, repr=False)
    constraints: ConstraintSet = field(init=False, repr=False)
    cost: StageCost = field(init=False, repr=False)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        try:
            sys = AffineParamSystem(tuple(self.A), tuple(self.B), self.Theta0)
            zc = ConstraintSet(self.F, self.G)
            sc = StageCost(self.Q, self.R)
        except (ValueError, IndexError) as exc:
            raise ConfigurationError(str(exc)) from exc
        n, m, p = sys.n, sys.m, sys.p
        set_("system", sys)
        set_("constraints", zc)
        set_("cost", sc)
        for name, size in (("theta_star", p), ("theta_hat0", p), ("x0", n)):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size != size:
                raise DimensionMismatch(f"{name} must have length {size}")
            set_(name, v)
        if zc.n != n or zc.m != m:
            raise DimensionMismatch("constraint matrices do not match the system dimensions")
        K, P = _matrix(self.K), _matrix(self.P)
        if K.shape != (m, n):
            raise DimensionMismatch(f"K must be {m} x {n}")
        if P.shape != (n, n):
            raise DimensionMismatch(f"P must be {n} x {n}")
        if sc.Q.shape != (n, n) or sc.R.shape != (m, m):
            raise DimensionMismatch("Q and R must match the state and input dimensions")
        set_("K", K)
        set_("P", P)
        set_("Q", sc.Q)
        set_("R", sc.R)
        if int(self.N) < 1:
            raise ConfigurationError("N must be positive")
        set_("N", int(self.N))
        for name in ("theta_star", "theta_hat0"):
            if not self.Theta0.contains_point(getattr(self, name), tol=1e-9):
                raise ConfigurationError(f"{name} must lie in Theta0")
        if self.mu is not None and self.mu <= 0:
            raise ConfigurationError("mu must be positive")
        if self.epsilons is not None:
            eps = tuple(float(e) for e in self.epsilons)
            if len(eps) != 3 or min(eps) <= 0:
                raise ConfigurationError("epsilons must be three positive numbers")
            set_("epsilons", eps)
        if self.T_max < 1 or self.x_tol <= 0:
            raise ConfigurationError("T_max must be positive and x_tol > 0")
        if self.terminal_mode not in ("common", "vertex"):
            raise ConfigurationError("terminal_mode must be 'common' or 'vertex'")

    @property
    def n(self) -> int:
        return self.system.n

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            s = d["system"]
            c = d["constraints"]
            if "F" in c:
                F, G = c["F"], c["G"]
            else:
                tmp = ConstraintSet.from_boxes(c["x_lower"], c["x_upper"], c["u_lower"], c["u_upper"])
                F, G = tmp.F, tmp.G
            kw = dict(
                A=tuple(_matrix(a) for a in s["A"]),
                B=tuple(np.asarray(b, dtype=float) for b in s["B"]),
                Theta0=_poly(d["Theta0"]), theta_star=d["theta_star"], theta_hat0=d["theta_hat0"],
                x0=d["x0"], F=F, G=G, N=d["N"], Q=d["Q"], R=d["R"], K=d["K"], P=d["P"])
        except KeyError as exc:
            raise ConfigurationError(f"missing configuration key {exc}") from exc
        unknown = set(d) - set(_OPTIONAL) - {"system", "constraints", "Theta0", "theta_star",
                                             "theta_hat0", "x0", "N", "Q", "R", "K", "P", "comment"}
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        for k, default in _OPTIONAL.items():
            v = d.get(k, default)
            if k in ("X0", "Xf") and v is not None:
                v = _poly(v)
            kw[k] = v
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"configuration {path} is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        d = {
            "system": {"A": [a.tolist() for a in self.system.A], "B": [b.tolist() for b in self.system.B]},
            "Theta0": _poly_dict(self.Theta0),
            "theta_star": self.theta_star.tolist(), "theta_hat0": self.theta_hat0.tolist(),
            "x0": self.x0.tolist(),
            "constraints": {"F": self.constraints.F.tolist(), "G": self.constraints.G.tolist()},
            "N": self.N, "Q": self.Q.tolist(), "R": self.R.tolist(), "K": self.K.tolist(),
            "P": self.P.tolist(),
        }
        for k in _OPTIONAL:
            v = getattr(self, k)
            if isinstance(v, HPolytope):
                v = _poly_dict(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[k] = v
        return d

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class Prepared:
    """Offline artifacts derived from a configuration."""

    tube: TubeConfig
    mu: float
    theta_vertices: np.ndarray
    c_f: float


def prepare(cfg: RunConfig) -> Prepared:
    """Synthesize missing tube sets and the estimator gain."""
    sys, zc = cfg.system, cfg.constraints
    tv = enumerate_vertices(cfg.Theta0)
    X0 = cfg.X0 if cfg.X0 is not None else synth_cross_section(sys, cfg.K, cfg.lambda_target,
                                                                theta_vertices=tv)
    Xf = cfg.Xf if cfg.Xf is not None else synth_terminal_set(sys, zc, cfg.K, X0, theta_vertices=tv,
                                                               mode=cfg.terminal_mode)
    mu = cfg.mu if cfg.mu is not None else compute_mu(sys, zc, cfg.mu_safety)
    tube = TubeConfig(cfg.N, cfg.K, cfg.P, X0, Xf)
    return Prepared(tube, float(mu), tv, terminal_cost_bound(tube))


SWEEP_KINDS = ("theta_set_volume", "theta_error_norm")


@dataclass(frozen=True)
class SweepSpec:
    kind: str
    levels: tuple
    samples_per_level: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ConfigurationError(f"sweep kind must be one of {SWEEP_KINDS}")
        levels = tuple(float(v) for v in self.levels)
        if not levels or any(b < a for a, b in zip(levels, levels[1:])):
            raise ConfigurationError("sweep levels must be nonempty and sorted ascending")
        if self.samples_per_level < 1:
            raise ConfigurationError("samples_per_level must be at least 1")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        try:
            return cls(d["kind"], tuple(d["levels"]), int(d.get("samples_per_level", 1)), int(d.get("seed", 0)))
        except KeyError as exc:
            raise ConfigurationError(f"missing sweep key {exc}") from exc

    @classmethod
    def load(cls, path) -> "SweepSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read sweep spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"sweep spec {path} is not valid JSON: {exc}") from exc


# volumes of the initial membership boxes used for the set-size study
VOLUME_LEVELS = (1.35e-2, 1.24e-1, 1.98e-1, 2.34e-1, 3.29e-1, 3.56e-1, 0.421875)
ERROR_NORM_LEVELS = (0.0, 0.125, 0.25, 0.375, 0.5)
TRAJECTORY_ERROR_NORMS = (0.0, 0.25, 0.5, 0.75, 1.0)


def bundled_config_path() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "paper_sec4.json"


def load_bundled() -> RunConfig:
    return RunConfig.load(bundled_config_path())
