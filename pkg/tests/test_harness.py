import csv
import json

import numpy as np
import pytest

from adaptive_tube_mpc.errors import ConfigurationError, DimensionMismatch, InitiallyInfeasible
from adaptive_tube_mpc.harness import cli
from adaptive_tube_mpc.harness.config import (ERROR_NORM_LEVELS, VOLUME_LEVELS, RunConfig, SweepSpec,
                                              bundled_config_path, load_bundled, prepare)
from adaptive_tube_mpc.harness.simulate import (dare, simulate_closed_loop, v_infinity_lower,
                                                v_infinity_upper)
from adaptive_tube_mpc.harness.sweeps import (error_directions, run_seed, shrunk_box, sweep_theta_error,
                                              sweep_theta_set, write_sweep)
from adaptive_tube_mpc.geometry import box, volume

from helpers import lqr_regime_config, scalar_config
from oracles import scalar_dare


def bundled_dict():
    return json.loads(bundled_config_path().read_text())


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_bundled_matches_example(self, example_cfg):
        assert example_cfg.N == 10
        np.testing.assert_array_equal(example_cfg.x0, [-3.0, -1.0])
        np.testing.assert_array_equal(example_cfg.theta_star, [0.5, 0.5, 0.75])
        assert volume(example_cfg.Theta0) == pytest.approx(0.421875)

    def test_round_trip(self, example_cfg):
        again = RunConfig.from_dict(json.loads(json.dumps(example_cfg.to_dict())))
        for name in ("x0", "theta_star", "K", "P", "F", "G"):
            np.testing.assert_array_equal(getattr(again, name), getattr(example_cfg, name))
        np.testing.assert_array_equal(again.Theta0.H, example_cfg.Theta0.H)

    def test_polytope_forms(self):
        d = bundled_dict()
        d["Theta0"] = {"H": box([0] * 3, [0.75] * 3).H.tolist(), "h": box([0] * 3, [0.75] * 3).h.tolist()}
        ref = load_bundled()
        d["constraints"] = {"F": ref.F.tolist(), "G": ref.G.tolist()}
        cfg = RunConfig.from_dict(d)
        assert cfg.constraints.contains([5.0, 1.5], [6.0])

    def test_missing_key(self):
        d = bundled_dict()
        del d["theta_star"]
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict(d)

    def test_truth_outside_initial_set(self):
        d = bundled_dict()
        d["theta_star"] = [0.5, 0.5, 0.8]
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict(d)

    def test_dimension_mismatch(self):
        d = bundled_dict()
        d["x0"] = [1.0, 2.0, 3.0]
        with pytest.raises(DimensionMismatch):
            RunConfig.from_dict(d)
        d = bundled_dict()
        d["K"] = [[1.0, 2.0, 3.0]]
        with pytest.raises(DimensionMismatch):
            RunConfig.from_dict(d)

    def test_bad_optional_values(self):
        for key, val in (("epsilons", [1.0, -1.0, 1.0]), ("T_max", 0), ("terminal_mode", "other"), ("mu", -1)):
            d = bundled_dict()
            d[key] = val
            with pytest.raises(ConfigurationError):
                RunConfig.from_dict(d)

    def test_sweep_spec_validation(self):
        with pytest.raises(ConfigurationError):
            SweepSpec("theta_error_norm", (0.5, 0.25))
        with pytest.raises(ConfigurationError):
            SweepSpec("theta_error_norm", (0.0,), 0)
        with pytest.raises(ConfigurationError):
            SweepSpec("other", (0.0,))
        with pytest.raises(ConfigurationError):
            SweepSpec.from_dict({"levels": [0.0]})


class TestSimulation:
    def test_certainty_equivalent_run_converges(self, example_cfg, example_prep):
        cfg = example_cfg.with_updates(Theta0=box(example_cfg.theta_star - 1e-6, example_cfg.theta_star + 1e-6))
        log = simulate_closed_loop(cfg, prepare(cfg))
        assert log.converged and np.isfinite(log.cost)
        assert not log.violations

    def test_accounting(self, example_log, example_cfg):
        example_log.check_consistency(example_cfg.cost)
        recomputed = sum(float(x @ example_cfg.Q @ x + u @ example_cfg.R @ u)
                         for x, u in zip(example_log.states, example_log.inputs))
        xT = example_log.states[-1]
        recomputed += float(xT @ example_cfg.P @ xT)
        assert example_log.cost == pytest.approx(recomputed, rel=1e-9)
        assert np.linalg.norm(xT) < example_cfg.x_tol

    def test_initially_infeasible(self, example_cfg, example_prep):
        with pytest.raises(InitiallyInfeasible):
            simulate_closed_loop(example_cfg.with_updates(x0=100 * example_cfg.x0), example_prep)

    def test_truncation_flag(self, example_cfg, example_prep):
        log = simulate_closed_loop(example_cfg.with_updates(T_max=3), example_prep)
        assert log.truncated and not log.converged
        assert len(log.inputs) == 3


class TestValueOracles:
    def test_zero_state(self, example_cfg, example_prep):
        assert v_infinity_upper(example_cfg, example_prep, x0=[0.0, 0.0]) == 0.0
        assert v_infinity_lower(example_cfg, x0=[0.0, 0.0]) == 0.0

    def test_scalar_dare(self):
        P = dare([[0.5]], [[1.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(scalar_dare(0.5, 1.0, 1.0, 1.0), rel=1e-12)

    def test_sandwich(self, example_cfg, example_v_upper):
        assert v_infinity_lower(example_cfg) <= example_v_upper + 1e-9

    def test_lqr_regime(self, example_cfg):
        cfg = lqr_regime_config(example_cfg)
        assert v_infinity_upper(cfg) == pytest.approx(v_infinity_lower(cfg), rel=1e-2)

    def test_scalar_sandwich(self):
        cfg = scalar_config(theta_hat0=[0.5])
        assert v_infinity_lower(cfg) <= v_infinity_upper(cfg) + 1e-9


class TestSweeps:
    def test_run_seed(self):
        assert run_seed(7, 0, 0) == 7
        assert run_seed(7, 1, 2) == 7 ^ 1 ^ 2

    def test_bundled_volume_levels(self):
        for v in (1.35e-2, 1.24e-1, 1.98e-1, 2.34e-1, 3.29e-1, 3.56e-1):
            assert v in VOLUME_LEVELS
        assert max(VOLUME_LEVELS) == pytest.approx(4.22e-1, rel=1e-3)
        assert {0.0, 0.25, 0.5} <= set(ERROR_NORM_LEVELS)

    @pytest.mark.parametrize("vol", VOLUME_LEVELS)
    def test_shrunk_boxes(self, example_cfg, vol):
        B = shrunk_box(example_cfg.Theta0, example_cfg.theta_star, vol)
        assert volume(B) == pytest.approx(vol, rel=1e-9)
        assert B.contains_point(example_cfg.theta_star, 1e-12)
        assert np.all(B.h[:3] <= 0.75 + 1e-12) and np.all(-B.h[3:] >= -1e-12)

    def test_point_level_gives_identical_costs(self, example_cfg, example_prep):
        res = sweep_theta_set(example_cfg, SweepSpec("theta_set_volume", (1e-27,), 3, 5), example_prep)
        c = res.costs(0)
        assert np.all(np.isfinite(c))
        np.testing.assert_allclose(c, c[0], rtol=1e-7)

    def test_zero_error_level_is_certainty_equivalent(self, error_sweep, example_v_upper):
        zero = [r for r in error_sweep.records if r.level == 0.0]
        assert len(zero) == 1
        assert zero[0].cost == pytest.approx(example_v_upper, rel=1e-6)

    def test_error_levels_respect_norms(self, error_sweep):
        for r in error_sweep.records:
            assert r.theta_err_norm <= r.level + 1e-12
            assert np.all(r.theta_hat0 >= -1e-12) and np.all(r.theta_hat0 <= 0.75 + 1e-12)

    def test_first_direction_is_truth(self, example_cfg):
        d = error_directions(example_cfg.theta_star, 4, np.random.default_rng(0))
        np.testing.assert_allclose(d[0], example_cfg.theta_star / np.linalg.norm(example_cfg.theta_star))
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)

    def test_failed_runs_become_nan_rows(self, example_cfg, example_prep, tmp_path):
        bad = example_cfg.with_updates(x0=100 * example_cfg.x0)
        res = sweep_theta_error(bad, SweepSpec("theta_error_norm", (0.0,), 1), example_prep)
        assert np.isnan(res.records[0].cost)
        assert res.records[0].status == "InitiallyInfeasible"
        paths = write_sweep(res, tmp_path)
        rows = read_rows(paths[0])
        assert rows[1][rows[0].index("J")] == "nan"

    def test_written_tables(self, volume_sweep, error_sweep, tmp_path):
        paths = write_sweep(volume_sweep, tmp_path / "set")
        names = {p.name for p in paths}
        assert {"sweep_set_runs.csv", "sweep_set_costs.csv"} <= names
        assert sum(n.startswith("trajectory_volume_") for n in names) == len(VOLUME_LEVELS)
        cols = read_rows(tmp_path / "set" / "sweep_set_costs.csv")
        assert len(cols[0]) == len(VOLUME_LEVELS) and len(cols) == 41
        traj = read_rows(tmp_path / "set" / "trajectory_volume_0.csv")
        assert traj[0] == ["x", "y"]
        # emitted trajectories re-validated against the state constraints
        for p in paths:
            if p.name.startswith("trajectory_"):
                for x, y in read_rows(p)[1:]:
                    assert abs(float(x)) <= 5 + 1e-9 and -5 - 1e-9 <= float(y) <= 1.5 + 1e-9
        (path,) = [p for p in write_sweep(error_sweep, tmp_path / "err") if p.name == "sweep_error_worst.csv"]
        rows = read_rows(path)
        assert rows[0] == ["x", "y"] and len(rows) == len(ERROR_NORM_LEVELS) + 1
        (jpath,) = write_sweep(error_sweep, tmp_path / "json", "json")
        assert len(json.loads(jpath.read_text())["runs"]) == len(error_sweep.records)


class TestCli:
    def test_report(self, tmp_path, capsys):
        code = cli.main(["report", str(bundled_config_path()), "--out", str(tmp_path)])
        assert code == 0
        for name in ("bound_report.csv", "certificates.csv", "trajectory.csv", "report.txt"):
            assert (tmp_path / name).exists()
        out = capsys.readouterr().out
        assert "bound holds = True" in out
        # every emitted state satisfies the state constraints
        rows = read_rows(tmp_path / "trajectory.csv")
        assert rows[0] == ["x", "y"]
        for x, y in rows[1:]:
            assert abs(float(x)) <= 5 + 1e-9 and -5 - 1e-9 <= float(y) <= 1.5 + 1e-9

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["simulate", str(tmp_path / "nope.json")]) == 1
        assert "configuration error" in capsys.readouterr().err

    def test_infeasible_start(self, tmp_path):
        d = bundled_dict()
        d["x0"] = [-300.0, -100.0]
        path = tmp_path / "far.json"
        path.write_text(json.dumps(d))
        assert cli.main(["simulate", str(path)]) == 2

    def test_verify(self, tmp_path, capsys):
        assert cli.main(["verify", str(bundled_config_path()), "--out", str(tmp_path), "--format", "json"]) == 0
        certs = json.loads((tmp_path / "certificates.json").read_text())
        assert certs["robust_stability_status"] == "pass"
        assert cli.main(["verify", str(bundled_config_path()), "--strict"]) == 3

    def test_simulate_json(self, tmp_path):
        assert cli.main(["simulate", str(bundled_config_path()), "--out", str(tmp_path), "--format", "json"]) == 0
        payload = json.loads((tmp_path / "trajectory.json").read_text())
        assert payload["converged"] and not payload["violations"]

    def test_bound(self, tmp_path):
        assert cli.main(["bound", str(bundled_config_path()), "--out", str(tmp_path)]) == 0
        rows = dict(read_rows(tmp_path / "bound_report.csv")[1:])
        assert float(rows["gamma"]) > 0

    def test_sweep_kind_mismatch(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"kind": "theta_set_volume", "levels": [0.1]}))
        assert cli.main(["sweep-error", str(bundled_config_path()), str(spec)]) == 1

    def test_sweeps_are_bit_identical(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"kind": "theta_error_norm", "levels": [0.0, 0.25], "samples_per_level": 2,
                                    "seed": 11}))
        vspec = tmp_path / "vspec.json"
        vspec.write_text(json.dumps({"kind": "theta_set_volume", "levels": [0.0135, 0.421875],
                                     "samples_per_level": 2, "seed": 11}))
        for run in ("a", "b"):
            assert cli.main(["sweep-error", str(bundled_config_path()), str(spec), "--out", str(tmp_path / run)]) == 0
            assert cli.main(["sweep-set", str(bundled_config_path()), str(vspec), "--out", str(tmp_path / run)]) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "sweep_error_worst.csv" in files and "sweep_set_costs.csv" in files
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_flag_changes_samples(self, tmp_path):
        vspec = tmp_path / "vspec.json"
        vspec.write_text(json.dumps({"kind": "theta_set_volume", "levels": [0.421875], "samples_per_level": 1}))
        cli.main(["sweep-set", str(bundled_config_path()), str(vspec), "--out", str(tmp_path / "s0")])
        cli.main(["sweep-set", str(bundled_config_path()), str(vspec), "--out", str(tmp_path / "s1"), "--seed", "1"])
        a = (tmp_path / "s0" / "sweep_set_runs.csv").read_text()
        b = (tmp_path / "s1" / "sweep_set_runs.csv").read_text()
        assert a != b
