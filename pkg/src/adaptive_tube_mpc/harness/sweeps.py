"""Seeded experiment sweeps over the initial membership set and the initial estimate error."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import AtmpcError
from ..estimator import project
from ..geometry import HPolytope, box
from ..model import TrajectoryLog
from .config import Prepared, RunConfig, SweepSpec, prepare
from .simulate import simulate_closed_loop


@dataclass
class RunRecord:
    level_index: int
    level: float
    sample: int
    theta_hat0: np.ndarray
    theta_err_norm: float
    cost: float
    steps: int
    converged: bool
    status: str = "ok"
    reason: str = ""
    violations: list = field(default_factory=list)
    states: np.ndarray | None = None
    inputs: np.ndarray | None = None
    log: TrajectoryLog | None = None


@dataclass
class SweepResult:
    kind: str
    levels: tuple
    records: list

    def costs(self, level_index: int) -> np.ndarray:
        return np.array([r.cost for r in self.records if r.level_index == level_index])

    def worst_cost(self, level_index: int) -> float:
        c = self.costs(level_index)
        c = c[np.isfinite(c)]
        return float(np.max(c)) if c.size else float("nan")

    def median_cost(self, level_index: int) -> float:
        c = self.costs(level_index)
        c = c[np.isfinite(c)]
        return float(np.median(c)) if c.size else float("nan")

    def failures(self) -> list:
        return [r for r in self.records if r.status != "ok" or r.violations]


def run_seed(seed: int, level_index: int, sample_index: int) -> int:
    return int(seed) ^ int(level_index) ^ int(sample_index)


def shrunk_box(Theta0: HPolytope, center, vol: float) -> HPolytope:
    """Homothetic copy of a box about ``center`` with the requested volume.

    Shrinking about the true parameter keeps it inside the box and keeps the
    box inside ``Theta0`` even when the parameter sits on the boundary.
    """
    if not _is_box(Theta0):
        raise ValueError("volume sweep needs a box Theta0 in lower/upper form")
    p = Theta0.dim
    lo, hi = -Theta0.h[p:], Theta0.h[:p]
    v0 = float(np.prod(hi - lo))
    if not 0 < vol <= v0 * (1 + 1e-12):
        raise ValueError(f"volume {vol} outside (0, {v0}]")
    s = min(1.0, (vol / v0) ** (1.0 / p))
    c = np.asarray(center, dtype=float)
    return box(c + s * (lo - c), c + s * (hi - c))


def _run(cfg: RunConfig, prep: Prepared, level_index, level, sample, keep_trajectory) -> RunRecord:
    err = float(np.linalg.norm(cfg.theta_star - cfg.theta_hat0))
    try:
        log = simulate_closed_loop(cfg, prep)
    except AtmpcError as exc:
        return RunRecord(level_index, level, sample, cfg.theta_hat0, err, float("nan"), 0, False,
                         type(exc).__name__, str(exc))
    rec = RunRecord(level_index, level, sample, cfg.theta_hat0, err, log.cost, len(log.inputs),
                    log.converged, violations=list(log.violations))
    if log.violations:
        rec.status, rec.reason = "InvariantViolated", log.violations[0]
    elif not log.converged:
        rec.status, rec.reason = "Truncated", f"not converged after {cfg.T_max} steps"
    if keep_trajectory:
        rec.states = np.array(log.states)
        rec.inputs = np.array(log.inputs)
        rec.log = log
    return rec


def sweep_theta_set(cfg: RunConfig, spec: SweepSpec, prep: Prepared | None = None,
                    keep_trajectories: bool = False) -> SweepResult:
    """Closed-loop cost for random initial estimates in shrinking membership boxes.

    ``prep`` (tube sets and gain) is synthesized once for the full ``Theta0``
    and reused for every level: each level box is a subset, so the same
    cross-section and terminal set remain valid.
    """
    if spec.kind != "theta_set_volume":
        raise ValueError("spec kind must be theta_set_volume")
    prep = prepare(cfg) if prep is None else prep
    records = []
    for li, vol in enumerate(spec.levels):
        Th = shrunk_box(cfg.Theta0, cfg.theta_star, vol)
        p = Th.dim
        lo, hi = -Th.h[p:], Th.h[:p]
        for si in range(spec.samples_per_level):
            rng = np.random.default_rng(run_seed(spec.seed, li, si))
            th0 = np.clip(lo + (hi - lo) * rng.uniform(size=p), lo, hi)
            run_cfg = cfg.with_updates(Theta0=Th, theta_hat0=th0)
            records.append(_run(run_cfg, prep, li, vol, si, keep_trajectories or si == 0))
    return SweepResult(spec.kind, spec.levels, records)


def error_directions(theta_star, count: int, rng) -> np.ndarray:
    """Unit directions; the first is the direction of the true parameter."""
    ts = np.asarray(theta_star, dtype=float)
    first = ts / np.linalg.norm(ts) if np.linalg.norm(ts) > 0 else np.eye(ts.size)[0]
    if count <= 1:
        return first[None, :]
    rest = rng.normal(size=(max(count - 1, 0), ts.size))
    rest /= np.linalg.norm(rest, axis=1, keepdims=True)
    return np.vstack([first, rest])


def sweep_theta_error(cfg: RunConfig, spec: SweepSpec, prep: Prepared | None = None,
                      keep_trajectories: bool = False) -> SweepResult:
    """Worst closed-loop cost over initial errors of prescribed norm.

    The initial estimate is ``theta_star - r d`` projected onto ``Theta0``; the
    recorded ``theta_err_norm`` is the error after projection (never larger
    than ``r``).
    """
    if spec.kind != "theta_error_norm":
        raise ValueError("spec kind must be theta_error_norm")
    prep = prepare(cfg) if prep is None else prep
    records = []
    for li, r in enumerate(spec.levels):
        rng = np.random.default_rng(run_seed(spec.seed, li, 0))
        dirs = error_directions(cfg.theta_star, 1 if r == 0 else spec.samples_per_level, rng)
        for si, d in enumerate(dirs):
            th0 = _project_into(cfg.theta_star - r * d, cfg.Theta0)
            run_cfg = cfg.with_updates(theta_hat0=th0)
            records.append(_run(run_cfg, prep, li, r, si, keep_trajectories or si == 0))
    return SweepResult(spec.kind, spec.levels, records)


def _is_box(P: HPolytope) -> bool:
    p = P.dim
    return P.n_facets == 2 * p and np.allclose(P.H, np.vstack([np.eye(p), -np.eye(p)]))


def _project_into(theta, Theta: HPolytope) -> np.ndarray:
    if _is_box(Theta):
        p = Theta.dim
        return np.clip(theta, -Theta.h[p:], Theta.h[:p])
    return project(theta, Theta)


def trajectories_along_truth(cfg: RunConfig, norms, prep: Prepared | None = None) -> list:
    """Closed-loop runs with ``theta_hat0 = theta_star - r theta_star/||theta_star||``."""
    prep = prepare(cfg) if prep is None else prep
    d = error_directions(cfg.theta_star, 1, None)[0]
    out = []
    for i, r in enumerate(norms):
        th0 = _project_into(cfg.theta_star - r * d, cfg.Theta0)
        out.append(_run(cfg.with_updates(theta_hat0=th0), prep, i, float(r), 0, True))
    return out


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_xy(path, xs, ys) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for a, b in zip(xs, ys):
            w.writerow([_fmt(a), _fmt(b)])


def write_trajectory(path, states) -> None:
    states = np.asarray(states, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"] if states.shape[1] == 2 else [f"x{i + 1}" for i in range(states.shape[1])])
        for row in states:
            w.writerow([_fmt(v) for v in row])


def records_table(result: SweepResult) -> list:
    rows = []
    for r in result.records:
        rows.append({"level_index": r.level_index, "level": r.level, "sample": r.sample,
                     "theta_hat0": " ".join(_fmt(v) for v in r.theta_hat0),
                     "theta_err_norm": r.theta_err_norm, "J": r.cost, "steps": r.steps,
                     "converged": r.converged, "status": r.status, "reason": r.reason})
    return rows


def write_sweep(result: SweepResult, out_dir, fmt: str = "csv") -> list:
    """Write sweep tables; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = records_table(result)
    written = []
    tag = "set" if result.kind == "theta_set_volume" else "error"
    if fmt == "json":
        path = out / f"sweep_{tag}.json"
        payload = {"kind": result.kind, "levels": list(result.levels),
                   "runs": [{k: (float(v) if isinstance(v, np.floating) else v) for k, v in row.items()}
                            for row in rows]}
        path.write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")
        return [path]
    path = out / f"sweep_{tag}_runs.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    written.append(path)
    if result.kind == "theta_set_volume":
        # one column per volume level: box-plot source data
        path = out / "sweep_set_costs.csv"
        cols = [result.costs(i) for i in range(len(result.levels))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([_fmt(v) for v in result.levels])
            for j in range(max(len(c) for c in cols)):
                w.writerow([_fmt(c[j]) if j < len(c) else "" for c in cols])
        written.append(path)
        for i, vol in enumerate(result.levels):
            rec = next((r for r in result.records if r.level_index == i and r.states is not None), None)
            if rec is not None:
                path = out / f"trajectory_volume_{i}.csv"
                write_trajectory(path, rec.states)
                written.append(path)
    else:
        path = out / "sweep_error_worst.csv"
        write_xy(path, result.levels, [result.worst_cost(i) for i in range(len(result.levels))])
        written.append(path)
    return written
