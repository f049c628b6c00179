import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from boundtv import cli  # noqa: E402
from boundtv.config import default_config_path, load_config  # noqa: E402
from boundtv.solver import match_tikhonov_beta, run  # noqa: E402
from boundtv.diagnostics import data_misfit  # noqa: E402

# acceptance lines collected by test_acceptance.py, printed at the end
ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def default_cfg():
    return load_config(default_config_path())


def solve_experiment(cfg, snapshot_stride=1):
    """All four variants on the configured problem, timed as one unit."""
    t0 = time.perf_counter()
    prob = cli.prepare_problem(cfg)
    results = {}
    bc = run(cfg.solvers["bound_constrained"], prob.F, prob.noisy, prob.bounds,
             snapshot_stride=snapshot_stride)
    results["bound_constrained"] = bc
    for v in ("unconstrained_tv", "naive_projection"):
        results[v] = run(cfg.solvers[v], prob.F, prob.noisy, prob.bounds)
    tcfg = cfg.solvers["tikhonov"]
    beta = cfg.tikhonov_beta
    if beta is None:
        target = data_misfit(bc.y, prob.F, prob.noisy)
        beta = match_tikhonov_beta(prob.F, prob.noisy, target, tcfg.cg_steps, tcfg.spacing)
    results["tikhonov"] = run(replace(tcfg, tikhonov_beta=beta), prob.F, prob.noisy, prob.bounds)
    return prob, results, time.perf_counter() - t0


@pytest.fixture(scope="session")
def reference_experiment(default_cfg):
    """The default experiment, seed 0, every bound-constrained iterate kept."""
    return solve_experiment(default_cfg)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
