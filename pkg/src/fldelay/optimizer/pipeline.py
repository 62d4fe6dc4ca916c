"""End-to-end strategy selection: relax, round, repair, polish."""

from __future__ import annotations

from ..errors import InfeasibleError
from .baselines import baseline
from .model import ConvergenceCoeffs, FeasibleSets, Fleet, Strategy
from .relaxed import solve_relaxed
from .search import pick_best, polish, round_and_repair, settle_ties


def optimize(fleet: Fleet, coeffs: ConvergenceCoeffs, sets: FeasibleSets = FeasibleSets(),
             method: str = "exact") -> Strategy:
    """Choose ``H`` and per-device bit widths minimizing predicted total delay.

    The rounded relaxed solution is compared with the polished optimum of
    each static baseline's search space, so the result is never worse than
    any of them.
    """
    relaxed = solve_relaxed(fleet, coeffs, sets, method=method)
    cands = [round_and_repair(relaxed, sets, coeffs, fleet)]
    for kind in ("ifedavg", "fedpaq", "quwg_pro"):
        try:
            start = baseline(kind, fleet, coeffs, sets)
        except InfeasibleError:
            continue
        if set(start.q_g) <= set(sets.q_g) and set(start.q_w) <= set(sets.q_w):
            cands.append(polish(fleet, coeffs, sets, start))
    best = settle_ties(fleet, coeffs, sets, pick_best(cands))
    best.label = "optimized"
    best.diagnostics = {
        "method": relaxed.diagnostics.get("method", method),
        "relaxed_H": relaxed.H,
        "relaxed_psi": relaxed.psi,
        "bound_gap": best.T_tot / relaxed.psi - 1.0,
        **{k: v for k, v in relaxed.diagnostics.items() if k != "method"},
    }
    return best
