"""Shared fixtures and the acceptance-criteria summary hook."""

from __future__ import annotations

import numpy as np
import pytest

# one line per acceptance criterion, printed after the run so the
# pass/fail verdicts survive output capture
_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_log() -> list[str]:
    return _CRITERION_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile every jit kernel once so timed tests never pay compile cost."""
    from kaczvol import ReferenceSolution, SolverConfig, solve

    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 3))
    x_star = rng.standard_normal(3)
    x_star /= np.linalg.norm(x_star)
    b = a @ x_star
    ref = ReferenceSolution.planted(x_star)
    for method, extra in (
        ("RK", {}),
        ("RBK", {"p": 2}),
        ("GTRK", {}),
        ("RBKVS", {"s": 2}),
        ("RBKVS", {"s": 3}),
        ("mRBKVS", {"s": 2, "beta": 0.3}),
    ):
        cfg = SolverConfig(method=method, max_iters=2000, rse_tol=1e-8, seed=1, **extra)
        solve(a, b, cfg, ref=ref)
    return True
