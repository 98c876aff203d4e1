"""Command line entry point ``atmpc``.

Exit codes: 0 success, 1 configuration error, 2 infeasible problem,
3 violated invariant.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..certify import robust_stability_certificate, spectral_radius_report, verify_P
from ..errors import (AtmpcError, ConfigurationError, InitiallyInfeasible, InvariantViolated,
                      OcpInfeasible, RecursiveFeasibilityViolated, SynthesisFailed)
from ..perf_bound import BoundReport, bound_inputs, optimize_epsilons, thm1_bound
from .config import Prepared, RunConfig, SweepSpec, prepare
from .simulate import simulate_closed_loop, v_infinity_lower, v_infinity_upper
from .sweeps import sweep_theta_error, sweep_theta_set, write_sweep, write_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 1, 2, 3


def _emit(text: str) -> None:
    print(text)


def compute_bound(cfg: RunConfig, prep: Prepared) -> BoundReport:
    err = float(np.linalg.norm(cfg.theta_star - cfg.theta_hat0))
    inp = bound_inputs(cfg.system, cfg.constraints, cfg.cost, prep.tube, prep.mu, theta_err_norm=err,
                       c_theta=cfg.c_theta_override, dtheta_mu_exponent=cfg.dtheta_mu_exponent)
    eps = cfg.epsilons or optimize_epsilons(inp, cfg.lambda_weight)
    return thm1_bound(inp, *eps)


def _write_table(path: Path, mapping: dict, fmt: str) -> Path:
    if fmt == "json":
        path = path.with_suffix(".json")
        path.write_text(json.dumps(mapping, indent=2) + "\n")
    else:
        path = path.with_suffix(".csv")
        lines = ["key,value"] + [f"{k},{v!r}" for k, v in mapping.items()]
        path.write_text("\n".join(lines) + "\n")
    return path


def _certificates(cfg: RunConfig) -> dict:
    cert = verify_P(cfg.system, cfg.K, cfg.P, cfg.Q, cfg.R)
    rob = robust_stability_certificate(cfg.system, cfg.K)
    out = {"lyapunov_status": cert.status, "lyapunov_min_eigenvalue": cert.min_eigenvalue,
           "robust_stability_status": rob.status, "max_spectral_radius": 1.0 - rob.min_eigenvalue}
    for i, ((t, margin), (_, rho)) in enumerate(zip(cert.vertex_reports,
                                                    spectral_radius_report(cfg.system, cfg.K))):
        out[f"vertex_{i}"] = " ".join(repr(float(v)) for v in t)
        out[f"vertex_{i}_margin"] = margin
        out[f"vertex_{i}_spectral_radius"] = rho
    return out


def cmd_verify(cfg: RunConfig, args) -> int:
    certs = _certificates(cfg)
    for k, v in certs.items():
        _emit(f"{k} = {v}")
    if args.out:
        _write_table(Path(args.out) / "certificates", certs, args.format)
    if args.strict and certs["lyapunov_status"] == "fail":
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_bound(cfg: RunConfig, args) -> int:
    report = compute_bound(cfg, prepare(cfg))
    d = report.as_dict()
    for k, v in d.items():
        _emit(f"{k} = {v}")
    if args.out:
        _write_table(Path(args.out) / "bound_report", d, args.format)
    return EXIT_OK


def _simulate(cfg: RunConfig, prep: Prepared, args):
    log = simulate_closed_loop(cfg, prep)
    if args.out:
        out = Path(args.out)
        if args.format == "json":
            payload = {"states": np.array(log.states).tolist(), "inputs": np.array(log.inputs).tolist(),
                       "stage_costs": log.stage_costs, "cost": log.cost, "converged": log.converged,
                       "violations": log.violations}
            (out / "trajectory.json").write_text(json.dumps(payload, indent=2) + "\n")
        else:
            write_trajectory(out / "trajectory.csv", log.states)
    return log


def cmd_simulate(cfg: RunConfig, args) -> int:
    log = _simulate(cfg, prepare(cfg), args)
    _emit(f"J = {log.cost!r}")
    _emit(f"steps = {len(log.inputs)}")
    _emit(f"converged = {log.converged}")
    for v in log.violations:
        _emit(f"violation: {v}")
    return EXIT_INVARIANT if log.violations else EXIT_OK


def _sweep(cfg: RunConfig, args, kind: str) -> int:
    spec = SweepSpec.load(args.spec)
    if args.seed is not None:
        spec = SweepSpec(spec.kind, spec.levels, spec.samples_per_level, args.seed)
    if spec.kind != kind:
        raise ConfigurationError(f"sweep spec kind {spec.kind!r} does not match this subcommand")
    prep = prepare(cfg)
    fn = sweep_theta_set if kind == "theta_set_volume" else sweep_theta_error
    result = fn(cfg, spec, prep)
    for i, level in enumerate(result.levels):
        _emit(f"level {level!r}: median J = {result.median_cost(i)!r}, worst J = {result.worst_cost(i)!r}")
    if args.out:
        for path in write_sweep(result, args.out, args.format):
            _emit(f"wrote {path}")
    bad = result.failures()
    for r in bad:
        _emit(f"run level={r.level!r} sample={r.sample}: {r.status} {r.reason}")
    if any(r.status in ("InvariantViolated", "RecursiveFeasibilityViolated") for r in bad):
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    prep = prepare(cfg)
    certs = _certificates(cfg)
    report = compute_bound(cfg, prep)
    log = _simulate(cfg, prep, args)
    v_up = v_infinity_upper(cfg, prep)
    v_lo = v_infinity_lower(cfg)
    bound = report.total_bound(v_up)
    lines = ["== certificates =="] + [f"{k} = {v}" for k, v in certs.items()]
    lines += ["== bound =="] + [f"{k} = {v}" for k, v in report.as_dict().items()]
    lines += ["== simulation ==", f"J = {log.cost!r}", f"steps = {len(log.inputs)}",
              f"converged = {log.converged}", f"V_inf lower = {v_lo!r}", f"V_inf upper = {v_up!r}",
              f"bound at V_inf upper = {bound!r}", f"bound holds = {log.cost <= bound}"]
    lines += [f"violation: {v}" for v in log.violations]
    text = "\n".join(lines)
    _emit(text)
    if args.out:
        out = Path(args.out)
        _write_table(out / "certificates", certs, args.format)
        _write_table(out / "bound_report", report.as_dict(), args.format)
        (out / "report.txt").write_text(text + "\n")
    return EXIT_INVARIANT if log.violations or log.cost > bound else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="atmpc", description="Adaptive homothetic tube MPC toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="JSON run configuration")
    common.add_argument("--out", help="output directory for CSV/JSON files")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="one closed-loop run")
    sub.add_parser("bound", parents=[common], help="a priori performance bound")
    p = sub.add_parser("verify", parents=[common], help="certificates for K and P")
    p.add_argument("--strict", action="store_true", help="exit 3 when the Lyapunov certificate fails")
    for name in ("sweep-set", "sweep-error"):
        p = sub.add_parser(name, parents=[common], help=f"{name.split('-')[1]} sweep")
        p.add_argument("spec", help="JSON sweep specification")
    sub.add_parser("report", parents=[common], help="verify, bound and simulate")
    return ap


COMMANDS = {
    "simulate": cmd_simulate,
    "bound": cmd_bound,
    "verify": cmd_verify,
    "sweep-set": lambda cfg, a: _sweep(cfg, a, "theta_set_volume"),
    "sweep-error": lambda cfg, a: _sweep(cfg, a, "theta_error_norm"),
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_updates(seed=args.seed)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InitiallyInfeasible, OcpInfeasible, SynthesisFailed) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RecursiveFeasibilityViolated, InvariantViolated) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except AtmpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
