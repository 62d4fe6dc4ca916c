import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fldelay.delay import CommCoeffs, ComputeProfile
from fldelay.optimizer import ConvergenceCoeffs, FeasibleSets, Fleet

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

SMALL_SETS = FeasibleSets(H=tuple(range(1, 41)), q_g=(2, 4, 8, 16, 32), q_w=(4, 8, 16, 32))


def random_fleet(seed, n=None, dimension=1000):
    """Small random fleet and coefficients whose optimum needs thousands of iterations."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5)) if n is None else n
    computes = [ComputeProfile.from_betas(rng.uniform(1e-4, 1e-3), rng.uniform(1e-3, 2e-2))
                for _ in range(n)]
    fleet = Fleet(computes, rng.uniform(1e5, 1e6, n), CommCoeffs(dimension),
                  rng.dirichlet(np.full(n, 3.0)))
    coeffs = ConvergenceCoeffs(A1=rng.uniform(5, 40), A0=rng.uniform(0.01, 0.5),
                               B0=rng.uniform(1e-4, 1e-2), C0=rng.uniform(0.01, 0.1),
                               epsilon=rng.uniform(0.15, 0.6))
    return fleet, coeffs


@pytest.fixture
def small_sets():
    return SMALL_SETS


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one part of an acceptance criterion: ``criterion(number, passed, detail)``."""
    def record(number, passed, detail):
        ok, notes = ACCEPTANCE.get(number, (True, []))
        ACCEPTANCE[number] = (ok and bool(passed), notes + [detail])
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, notes = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {'; '.join(notes)}")
