"""Session fixtures: the bundled example, its sweeps and random problem instances.

Expensive artifacts (tube sets, sweeps, ``c_theta``) are built once per session
and shared by the module tests and the acceptance suite.
"""

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from adaptive_tube_mpc.harness.config import (ERROR_NORM_LEVELS, TRAJECTORY_ERROR_NORMS,  # noqa: E402
                                              VOLUME_LEVELS, SweepSpec, load_bundled, prepare)
from adaptive_tube_mpc.harness.simulate import simulate_closed_loop, v_infinity_upper  # noqa: E402
from adaptive_tube_mpc.harness.sweeps import (sweep_theta_error, sweep_theta_set,  # noqa: E402
                                              trajectories_along_truth)
from adaptive_tube_mpc.perf_bound import bound_inputs  # noqa: E402

from acceptance_log import RESULTS  # noqa: E402
from helpers import random_config  # noqa: E402

VOLUME_SAMPLES = 40
ERROR_SAMPLES = 8
N_RANDOM = 10


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        name, passed, detail = RESULTS[number]
        line = f"[{'PASS' if passed else 'FAIL'}] {number:2d} {name}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))


@pytest.fixture(scope="session")
def example_cfg():
    return load_bundled()


@pytest.fixture(scope="session")
def example_prep(example_cfg):
    return prepare(example_cfg)


@pytest.fixture(scope="session")
def example_log(example_cfg, example_prep):
    return simulate_closed_loop(example_cfg, example_prep)


@pytest.fixture(scope="session")
def example_v_upper(example_cfg, example_prep):
    return v_infinity_upper(example_cfg, example_prep)


@pytest.fixture(scope="session")
def example_bound_inputs(example_cfg, example_prep):
    """Weight-independent bound constants with a sampled ``c_theta`` over the full Theta0."""
    cfg = example_cfg
    return bound_inputs(cfg.system, cfg.constraints, cfg.cost, example_prep.tube, example_prep.mu)


@pytest.fixture(scope="session")
def volume_sweep(example_cfg, example_prep):
    spec = SweepSpec("theta_set_volume", VOLUME_LEVELS, VOLUME_SAMPLES, example_cfg.seed)
    t0 = time.perf_counter()
    res = sweep_theta_set(example_cfg, spec, example_prep, keep_trajectories=True)
    res.elapsed = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def error_sweep(example_cfg, example_prep):
    spec = SweepSpec("theta_error_norm", ERROR_NORM_LEVELS, ERROR_SAMPLES, example_cfg.seed)
    return sweep_theta_error(example_cfg, spec, example_prep, keep_trajectories=True)


@pytest.fixture(scope="session")
def truth_direction_runs(example_cfg, example_prep):
    return trajectories_along_truth(example_cfg, TRAJECTORY_ERROR_NORMS, example_prep)


@pytest.fixture(scope="session")
def random_runs():
    """``(cfg, log)`` for ten random certified problems with ``n = 2``, ``p <= 3``."""
    out = []
    for seed in range(N_RANDOM):
        cfg = random_config(seed)
        out.append((cfg, simulate_closed_loop(cfg)))
    return out

