import itertools
import math

import numpy as np
import pytest

from fldelay.delay import CommCoeffs, ComputeProfile, service_delay
from fldelay.errors import BudgetExceededError, InfeasibleError
from fldelay.optimizer import (
    ConvergenceCoeffs,
    FeasibleSets,
    Fleet,
    RelaxedSolution,
    brute_force,
    default_groups,
    evaluate_strategy,
    required_iterations,
    round_and_repair,
)
from fldelay.optimizer.search import pick_best, repair, settle_ties
from fldelay.quantization import delta_coefficient

from conftest import SMALL_SETS, random_fleet


def hand_scan(fleet, coeffs, sets):
    """Plain-loop enumeration for a one-device fleet using the delay module directly."""
    best = None
    prof, rate = fleet.computes[0], fleet.rates[0]
    for H in sets.H:
        for qg in sets.q_g:
            for qw in sets.q_w:
                dg = delta_coefficient(qg, fleet.dimension)
                dw = delta_coefficient(qw, fleet.dimension)
                margin = coeffs.epsilon - coeffs.B0 * H * dg * dw - coeffs.C0 * dw
                if margin <= 0:
                    continue
                K = math.ceil((coeffs.A1 + coeffs.A0 * H * dg) ** 2 / margin**2 - 1e-9)
                T = service_delay([(prof, rate, qw, qg)], H, K, fleet.comm).total
                key = (T, H, -qg, -qw)
                if best is None or key < best:
                    best = key
    return best


def test_singleton_sets():
    fleet, coeffs = random_fleet(0, n=2)
    sets = FeasibleSets(H=(4,), q_g=(16,), q_w=(32,))
    s = brute_force(fleet, coeffs, sets)
    assert (s.H, s.q_g, s.q_w) == (4, (16, 16), (32, 32))


@pytest.mark.parametrize("seed", range(4))
def test_single_device_matches_hand_scan(seed):
    fleet, coeffs = random_fleet(seed, n=1)
    sets = FeasibleSets(H=tuple(range(1, 21)), q_g=(8, 16, 32), q_w=(8, 16, 32))
    s = brute_force(fleet, coeffs, sets)
    T, H, nqg, nqw = hand_scan(fleet, coeffs, sets)
    assert s.T_tot == pytest.approx(T, rel=1e-12)
    assert (s.H, s.q_g[0], s.q_w[0]) == (H, -nqg, -nqw)


def test_exhaustive_two_device_oracle():
    fleet, coeffs = random_fleet(11, n=2)
    sets = FeasibleSets(H=(1, 2, 5, 10, 20), q_g=(4, 8, 32), q_w=(8, 32))
    cands = []
    for H in sets.H:
        for qg in itertools.product(sets.q_g, repeat=2):
            for qw in itertools.product(sets.q_w, repeat=2):
                try:
                    cands.append(evaluate_strategy(fleet, coeffs, H, qg, qw))
                except InfeasibleError:
                    pass
    assert brute_force(fleet, coeffs, sets).T_tot == pytest.approx(min(c.T_tot for c in cands))


def test_budget_exceeded():
    fleet, coeffs = random_fleet(1, n=4)
    with pytest.raises(BudgetExceededError):
        brute_force(fleet, coeffs, FeasibleSets(), budget=1000)


def test_threads_do_not_change_result():
    fleet, coeffs = random_fleet(2, n=3)
    a = brute_force(fleet, coeffs, SMALL_SETS)
    b = brute_force(fleet, coeffs, SMALL_SETS, threads=4)
    assert a.key() == b.key() and a.T_tot == b.T_tot


def test_symmetric_fleet_gives_symmetric_assignment():
    p = ComputeProfile.from_betas(5e-4, 1e-2)
    fleet = Fleet([p, p, p], [3e5] * 3, CommCoeffs(1000), np.full(3, 1 / 3))
    coeffs = ConvergenceCoeffs(A1=20, A0=0.2, B0=0.001, C0=0.05, epsilon=0.3)
    s = brute_force(fleet, coeffs, SMALL_SETS)
    assert len(set(s.q_g)) == 1 and len(set(s.q_w)) == 1


def test_default_groups():
    fleet, _ = random_fleet(3, n=3)
    assert default_groups(fleet).tolist() == [0, 1, 2]
    p = ComputeProfile.from_betas(1e-3, 1e-2)
    big = Fleet([p.scaled(1 + i) for i in range(8)], np.full(8, 1e5), CommCoeffs(100), np.full(8, 1 / 8))
    g = default_groups(big)
    assert np.bincount(g).tolist() == [2, 2, 2, 2]
    assert g.tolist() == sorted(g.tolist())


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("qg,qw", [(4, 32), (8, 16), (32, 32)])
def test_doubling_compute_cost_lowers_optimal_H(seed, qg, qw):
    # at fixed bit widths log(c + H b) has increasing differences in (H, b)
    fleet, coeffs = random_fleet(100 + seed)
    slow = Fleet([c.scaled(2.0) for c in fleet.computes], fleet.rates, fleet.comm, fleet.weights)
    sets = FeasibleSets(H=tuple(range(1, 51)), q_g=(qg,), q_w=(qw,))
    assert brute_force(fleet, coeffs, sets).H >= brute_force(slow, coeffs, sets).H


def test_joint_bits_can_raise_H_when_compute_slows():
    # cheaper relative upload lets the optimum buy precise gradients and run longer rounds
    fleet, coeffs = random_fleet(101)
    slow = Fleet([c.scaled(2.0) for c in fleet.computes], fleet.rates, fleet.comm, fleet.weights)
    sets = FeasibleSets(H=tuple(range(1, 51)), q_g=(4, 8, 32), q_w=(8, 32))
    fast, slowed = brute_force(fleet, coeffs, sets), brute_force(slow, coeffs, sets)
    assert slowed.H > fast.H and sum(slowed.q_g) > sum(fast.q_g)


def test_pick_best_tie_rules():
    fleet, coeffs = random_fleet(4, n=2)
    a = evaluate_strategy(fleet, coeffs, 3, (8, 8), (32, 32))
    b = evaluate_strategy(fleet, coeffs, 3, (16, 8), (32, 32))
    c = evaluate_strategy(fleet, coeffs, 2, (8, 8), (32, 32))
    for s in (a, b, c):
        s.T_tot = 1.0
    assert pick_best([a, b, c]) is c
    assert pick_best([a, b]) is b
    assert pick_best([None]) is None


def test_repair_restores_feasibility():
    fleet, coeffs = random_fleet(5, n=3)
    tight = ConvergenceCoeffs(coeffs.A1, coeffs.A0, coeffs.B0, 5.0, 0.05)
    H, qg, qw, steps = repair(fleet, tight, SMALL_SETS, 20, [2, 2, 2], [4, 4, 4])
    assert steps > 0
    s = evaluate_strategy(fleet, tight, H, qg, qw)
    assert np.isfinite(s.T_tot)


def test_repair_reports_infeasible():
    fleet, coeffs = random_fleet(5, n=2)
    hopeless = ConvergenceCoeffs(1.0, 0.0, 0.0, 1e9, 1e-6)
    with pytest.raises(InfeasibleError):
        repair(fleet, hopeless, SMALL_SETS, 1, [32, 32], [4, 4])


def _relaxed(H, qg, qw):
    v = lambda q: 1.0 / (2.0 ** np.asarray(q, dtype=float) - 1.0)
    return RelaxedSolution(H=H, v_g=v(qg), v_w=v(qw), phi=1.0, psi=1.0)


def test_round_integral_feasible_unchanged():
    fleet, coeffs = random_fleet(6, n=2)
    s = round_and_repair(_relaxed(7, [8, 16], [32, 32]), SMALL_SETS, coeffs, fleet, polish_result=False)
    assert (s.H, s.q_g, s.q_w) == (7, (8, 16), (32, 32))
    assert s.diagnostics["repair_steps"] == 0


def test_round_nearest_H():
    fleet, coeffs = random_fleet(6, n=2)
    s = round_and_repair(_relaxed(7.4, [8.2, 15.7], [31.9, 32]), SMALL_SETS, coeffs, fleet,
                         polish_result=False)
    assert s.H == 7 and s.q_g == (8, 16)
    margin = coeffs.epsilon - s.K_real  # K_real finite means the target is reachable
    assert math.isfinite(margin)


@pytest.mark.parametrize("seed", range(6))
def test_round_and_repair_satisfies_target(seed):
    from fldelay.optimizer import solve_relaxed

    fleet, coeffs = random_fleet(200 + seed)
    relaxed = solve_relaxed(fleet, coeffs, SMALL_SETS)
    s = round_and_repair(relaxed, SMALL_SETS, coeffs, fleet)
    dg = [delta_coefficient(q, fleet.dimension) for q in s.q_g]
    dw = [delta_coefficient(q, fleet.dimension) for q in s.q_w]
    K = required_iterations(s.H, dg, dw, coeffs, fleet.weights)
    assert K <= s.K and s.label == "optimized"
    bf = brute_force(fleet, coeffs, SMALL_SETS)
    assert s.T_tot <= 1.05 * bf.T_tot
    assert relaxed.psi <= bf.T_tot * (1 + 1e-9)


def test_settle_ties_prefers_smaller_H():
    fleet, coeffs = random_fleet(7, n=1)
    s = brute_force(fleet, coeffs, SMALL_SETS)
    assert settle_ties(fleet, coeffs, SMALL_SETS, s).key() == s.key()
