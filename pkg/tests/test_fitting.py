import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fldelay.errors import InvalidArgumentError, NeedMoreSamplesError
from fldelay.optimizer import ConvergenceCoeffs, Run, fit_coefficients, synthetic_runs
from fldelay.optimizer.model import deltas

TRUE = ConvergenceCoeffs(A1=32.3, A0=0.35, B0=0.001, C0=0.06, epsilon=0.5)
D = 1000


def design(d=D):
    return [(H, deltas(g, d), deltas(w, d))
            for H in (1, 5, 20, 50) for g in (2, 4, 8, 32) for w in (4, 5, 8, 32)]


def test_noiseless_round_trip():
    runs = synthetic_runs(TRUE, design(), np.full(4, 0.25))
    fit = fit_coefficients(runs, TRUE.epsilon, n_devices=4)
    for name in ("A1", "A0", "B0", "C0"):
        assert getattr(fit.coeffs, name) == pytest.approx(getattr(TRUE, name), rel=1e-6)
    assert fit.rel_residual < 1e-8 and fit.n_runs == len(runs)


@pytest.mark.parametrize("seed", range(5))
def test_noisy_recovery_within_fifteen_percent(seed):
    runs = synthetic_runs(TRUE, design(270_000), np.full(4, 0.25), noise=0.05, seed=seed)
    fit = fit_coefficients(runs, TRUE.epsilon, n_devices=4)
    for name in ("A1", "A0", "B0", "C0"):
        assert getattr(fit.coeffs, name) == pytest.approx(getattr(TRUE, name), rel=0.15)


def test_small_dimension_leaves_floor_terms_weakly_identified():
    # at d = 1000 the C0 term moves K by only a few percent, below 5% noise
    errs = []
    for seed in range(5):
        runs = synthetic_runs(TRUE, design(1000), np.full(4, 0.25), noise=0.05, seed=seed)
        errs.append(abs(fit_coefficients(runs, 0.5, n_devices=4).coeffs.C0 / TRUE.C0 - 1))
    assert max(errs) > 0.15


def test_zero_deltas_unidentifiable():
    runs = [Run(H, (0.0,), (0.0,), 100.0 + H) for H in (1, 2, 5, 10, 20)]
    with pytest.raises(NeedMoreSamplesError):
        fit_coefficients(runs, 0.5)


def test_too_few_runs():
    runs = synthetic_runs(TRUE, design()[:3], np.full(4, 0.25))
    with pytest.raises(NeedMoreSamplesError):
        fit_coefficients(runs, 0.5, n_devices=4)


def test_rejects_inconsistent_data():
    rng = np.random.default_rng(0)
    runs = [Run(H, (deltas(g, D),), (deltas(w, D),), float(rng.uniform(10, 1e5)))
            for H, g, w in [(h, g, w) for h in (1, 5, 20) for g in (2, 8, 32) for w in (4, 32)]]
    with pytest.raises(NeedMoreSamplesError):
        fit_coefficients(runs, 0.5)


def test_invalid_inputs():
    runs = synthetic_runs(TRUE, design(), np.full(4, 0.25))
    with pytest.raises(InvalidArgumentError):
        fit_coefficients(runs, 0.0, n_devices=4)
    with pytest.raises(InvalidArgumentError):
        fit_coefficients([Run(1, (0.1,), (0.1,), -1.0)] * 4, 0.5)


def test_synthetic_runs_skip_unreachable():
    hard = ConvergenceCoeffs(A1=1.0, A0=0.0, B0=0.0, C0=10.0, epsilon=0.5)
    runs = synthetic_runs(hard, [(1, 0.0, 0.01), (1, 0.0, 1.0)], np.array([1.0]))
    assert len(runs) == 1


@settings(max_examples=25)
@given(st.floats(5, 50), st.floats(0.05, 1), st.floats(1e-4, 1e-2), st.floats(0.01, 0.1))
def test_round_trip_property(A1, A0, B0, C0):
    true = ConvergenceCoeffs(A1, A0, B0, C0, epsilon=0.5)
    runs = synthetic_runs(true, design(), np.full(4, 0.25))
    fit = fit_coefficients(runs, 0.5, n_devices=4)
    got = np.array([fit.coeffs.A1, fit.coeffs.A0, fit.coeffs.B0, fit.coeffs.C0])
    assert np.allclose(got, [A1, A0, B0, C0], rtol=1e-6)
