import sys
import numpy as np
import pytest

from sketchsel import kernels


def spd(gen, n, ridge=0.1):
    A = gen.standard_normal((n, n))
    return A @ A.T / n + ridge * np.eye(n)


def random_problem_data(seed, n, m, noise=0.1, rank=None):
    """(H, R_x, R_w) with R_x of the given rank and R_w = noise * SPD."""
    gen = np.random.default_rng(seed)
    r = n if rank is None else rank
    F = gen.standard_normal((n, r))
    R_x = F @ F.T / r
    R_w = noise * spd(gen, n, 0.5)
    H = gen.standard_normal((m, n))
    return H, R_x, R_w


JIT_PATHS = [pytest.param(True, id="numba"), pytest.param(False, id="numpy")]
if kernels.numba is None:  # pragma: no cover
    JIT_PATHS = [pytest.param(False, id="numpy")]


@pytest.fixture(params=JIT_PATHS)
def jit(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
