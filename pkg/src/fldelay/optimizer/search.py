"""Integer strategy search: exhaustive oracle and rounding of relaxed solutions."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import BudgetExceededError, InfeasibleError
from .model import (
    ConvergenceCoeffs,
    FeasibleSets,
    Fleet,
    Strategy,
    check_attainable,
    convergence_margin,
    deltas,
    evaluate_strategy,
)

SEARCH_BUDGET = 10_000_000
_TIE_RTOL = 1e-12


def default_groups(fleet: Fleet, n_classes: int = 4) -> np.ndarray:
    """Capability classes: given groups, one per device for small fleets, else delay quartiles."""
    if fleet.groups is not None:
        return fleet.groups
    if fleet.size <= n_classes:
        return np.arange(fleet.size)
    t = fleet.round_delays(1, 32, 32)
    order = np.argsort(t, kind="stable")
    groups = np.empty(fleet.size, dtype=int)
    for g, chunk in enumerate(np.array_split(order, n_classes)):
        groups[chunk] = g
    return groups


def _tie_key(s: Strategy):
    return (s.H, -sum(s.q_g), tuple(-q for q in s.q_g), tuple(-q for q in s.q_w))


def pick_best(candidates):
    """Smallest T_tot; ties broken by smaller H, larger q_g total, then device order."""
    candidates = [c for c in candidates if c is not None]
    if not candidates:
        return None
    best = min(c.T_tot for c in candidates)
    ties = [c for c in candidates if c.T_tot <= best * (1 + _TIE_RTOL)]
    return min(ties, key=_tie_key)


def brute_force(fleet: Fleet, coeffs: ConvergenceCoeffs, sets: FeasibleSets = FeasibleSets(),
                groups=None, budget: int = SEARCH_BUDGET, threads: int = 1) -> Strategy:
    """Globally optimal integer strategy by enumerating every grid point.

    Devices in the same group share ``(q_g, q_w)``.  Every point is scored with
    the same integer objective as :func:`evaluate_strategy`.
    """
    groups = default_groups(fleet) if groups is None else np.asarray(groups, dtype=int)
    labels = np.unique(groups)
    G = labels.size
    choices = [(g, w) for g in sets.q_g for w in sets.q_w]
    C = len(choices)
    points = len(sets.H) * C**G
    if points > budget:
        raise BudgetExceededError(
            f"search space has {points:.3g} points (budget {budget:.3g}); "
            "group devices into fewer capability classes or shrink the feasible sets"
        )
    check_attainable(fleet, coeffs, sets)
    qg = np.array([c[0] for c in choices], dtype=np.float64)
    qw = np.array([c[1] for c in choices], dtype=np.float64)
    dg = deltas(qg, fleet.dimension, coeffs.halved)
    dw = deltas(qw, fleet.dimension, coeffs.halved)
    p2 = fleet.weights**2
    members = [np.flatnonzero(groups == g) for g in labels]
    wsum = np.array([p2[m].sum() for m in members])
    N = fleet.size

    def expand(vecs, combine):
        out = vecs[0]
        for v in vecs[1:]:
            out = combine(out[..., None], v)
        return out

    S_g = expand([wsum[i] * dg for i in range(G)], np.add)
    S_w = expand([wsum[i] * dw for i in range(G)], np.add)
    S_gw = expand([wsum[i] * dg * dw for i in range(G)], np.add)

    def scan(H):
        t = [np.max(fleet.round_delays(H, qg[:, None], qw[:, None])[:, m], axis=1) for m in members]
        T = expand(t, np.maximum)
        margin = coeffs.epsilon - coeffs.B0 * H * S_gw - coeffs.C0 * S_w
        with np.errstate(divide="ignore", invalid="ignore"):
            K = (coeffs.A1 + coeffs.A0 * H * S_g) ** 2 / (N * margin**2)
            K = np.ceil(K - 1e-9 * K)
            rounds = np.ceil(K / H - 1e-9)
            total = np.where(margin > 0, rounds * T, np.inf)
        best = total.min()
        if not np.isfinite(best):
            return []
        out = []
        for flat in np.flatnonzero(total.ravel() <= best * (1 + _TIE_RTOL)):
            idx = np.unravel_index(flat, total.shape) if G > 1 else (flat,)
            q_g = [0] * N
            q_w = [0] * N
            for gi, ci in enumerate(idx):
                for n in members[gi]:
                    q_g[n], q_w[n] = choices[ci]
            out.append(evaluate_strategy(fleet, coeffs, H, q_g, q_w, label="brute_force"))
        return out

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_h = list(pool.map(scan, sets.H))
    else:
        per_h = [scan(H) for H in sets.H]
    best = pick_best([s for group in per_h for s in group])
    if best is None:
        raise InfeasibleError("no grid point reaches epsilon", constraint="convergence")
    best.diagnostics = {"points": points, "groups": G}
    return best


def _nearest(value, options, prefer_high=True):
    options = np.asarray(options, dtype=np.float64)
    dist = np.abs(options - value)
    hits = np.flatnonzero(dist <= dist.min() + 1e-12)
    return int(options[hits[-1] if prefer_high else hits[0]])


def _level_up(value, options):
    higher = [o for o in options if o > value]
    return higher[0] if higher else None


def _level_down(value, options):
    lower = [o for o in options if o < value]
    return lower[-1] if lower else None


def _objective(fleet, coeffs, H, q_g, q_w):
    try:
        return evaluate_strategy(fleet, coeffs, H, q_g, q_w, label="rounded")
    except InfeasibleError:
        return None


def repair(fleet, coeffs, sets, H, q_g, q_w):
    """Greedily raise precision (or lower H) until the convergence target is reachable."""
    q_g, q_w = list(q_g), list(q_w)
    n = fleet.size

    def margin(H, qg, qw):
        return convergence_margin(H, deltas(qg, fleet.dimension, coeffs.halved),
                                  deltas(qw, fleet.dimension, coeffs.halved), coeffs, fleet.weights)

    steps = 0
    while margin(H, q_g, q_w) <= 0:
        base_m = margin(H, q_g, q_w)
        base_t = fleet.round_delays(H, q_g, q_w).max() / H
        moves = []
        lower_h = _level_down(H, sets.H)
        if lower_h is not None:
            moves.append(("H", None, lower_h))
        for i in range(n):
            up = _level_up(q_g[i], sets.q_g)
            if up is not None:
                moves.append(("q_g", i, up))
            up = _level_up(q_w[i], sets.q_w)
            if up is not None:
                moves.append(("q_w", i, up))
        if not moves:
            raise InfeasibleError("no integer strategy reaches epsilon", constraint="convergence")
        scored = []
        for kind, i, val in moves:
            h, qg, qw = H, list(q_g), list(q_w)
            if kind == "H":
                h = val
            elif kind == "q_g":
                qg[i] = val
            else:
                qw[i] = val
            gain = margin(h, qg, qw) - base_m
            cost = fleet.round_delays(h, qg, qw).max() / h - base_t
            scored.append((gain / max(cost, 1e-15), kind, i, val, h, qg, qw))
        scored.sort(key=lambda s: -s[0])
        _, _, _, _, H, q_g, q_w = scored[0]
        steps += 1
    return H, q_g, q_w, steps


def _score_rows(fleet, coeffs, H, QG, QW):
    """Integer total delay of each row of per-device bit widths at a fixed ``H`` (inf if infeasible)."""
    dg = deltas(QG, fleet.dimension, coeffs.halved)
    dw = deltas(QW, fleet.dimension, coeffs.halved)
    p2 = fleet.weights**2
    margin = coeffs.epsilon - coeffs.B0 * H * ((dg * dw) @ p2) - coeffs.C0 * (dw @ p2)
    with np.errstate(divide="ignore", invalid="ignore"):
        K = (coeffs.A1 + coeffs.A0 * H * (dg @ p2)) ** 2 / (fleet.size * margin**2)
        K = np.ceil(K - 1e-9 * K)
        rounds = np.ceil(K / H - 1e-9)
        T = np.max(fleet.u1 * QG + fleet.u2 + H * (fleet.beta1 * QW + fleet.beta0), axis=-1)
        return np.where(margin > 0, rounds * T, np.inf)


def _descend(fleet, coeffs, sets, H, q_g, q_w):
    """Per-device joint ``(q_g, q_w)`` coordinate descent at a fixed ``H``."""
    pairs = np.array([(g, w) for g in sets.q_g for w in sets.q_w], dtype=np.float64)
    qg = np.array(q_g, dtype=np.float64)
    qw = np.array(q_w, dtype=np.float64)
    cur = _score_rows(fleet, coeffs, H, qg, qw)
    improved = True
    while improved:
        improved = False
        for i in range(fleet.size):
            QG = np.repeat(qg[None], len(pairs), axis=0)
            QW = np.repeat(qw[None], len(pairs), axis=0)
            QG[:, i], QW[:, i] = pairs[:, 0], pairs[:, 1]
            scores = _score_rows(fleet, coeffs, H, QG, QW)
            j = int(np.argmin(scores))
            if scores[j] < cur * (1 - _TIE_RTOL):
                qg, qw, cur = QG[j], QW[j], scores[j]
                improved = True
    return cur, qg, qw


def polish(fleet, coeffs, sets, start: Strategy) -> Strategy:
    """Sweep every ``H``; at each, run per-device coordinate descent from the incumbent bit widths."""
    best = start
    improved = True
    while improved:
        improved = False
        for H in sets.H:
            score, qg, qw = _descend(fleet, coeffs, sets, H, best.q_g, best.q_w)
            if np.isfinite(score) and score < best.T_tot * (1 - _TIE_RTOL):
                cand = _objective(fleet, coeffs, H, qg, qw)
                if cand is not None and cand.T_tot < best.T_tot * (1 - _TIE_RTOL):
                    best, improved = cand, True
    return best


def settle_ties(fleet, coeffs, sets, strat: Strategy) -> Strategy:
    """Move to equal-delay neighbours preferred by the tie-breaking rule.

    Neighbours lower ``H`` by one level or raise one device's bit width; the
    walk only visits points whose delay ties with the starting one.
    """
    limit = strat.T_tot * (1 + _TIE_RTOL)
    best = strat
    while True:
        moves = []
        down = _level_down(best.H, sets.H)
        if down is not None:
            moves.append((down, best.q_g, best.q_w))
        for i in range(fleet.size):
            for v in sets.q_g:
                if v > best.q_g[i]:
                    moves.append((best.H, best.q_g[:i] + (v,) + best.q_g[i + 1:], best.q_w))
            for v in sets.q_w:
                if v > best.q_w[i]:
                    moves.append((best.H, best.q_g, best.q_w[:i] + (v,) + best.q_w[i + 1:]))
        ties = [c for c in (_objective(fleet, coeffs, *m) for m in moves)
                if c is not None and c.T_tot <= limit]
        cand = min(ties, key=_tie_key, default=None)
        if cand is None or _tie_key(cand) >= _tie_key(best):
            return best
        best = cand


def round_and_repair(relaxed, sets: FeasibleSets, coeffs: ConvergenceCoeffs, fleet: Fleet,
                     polish_result: bool = True) -> Strategy:
    """Integer strategy from a relaxed solution.

    ``H`` goes to the nearest member of the feasible set, each ``v`` to
    ``q = log2(1 + 1/v)`` and then the nearest bit width.  An unreachable
    target is repaired greedily by the move with the best margin gain per
    unit of added per-iteration delay.  With ``polish_result`` the same
    rounding is also applied to the relaxed optimum at every integer ``H``
    (``relaxed.slices``), each candidate is improved by per-device
    coordinate descent, and the best is swept over ``H`` once more.
    """
    H = _nearest(relaxed.H, sets.H, prefer_high=False)
    q_g = [_nearest(math.log2(1 + 1 / v), sets.q_g) for v in relaxed.v_g]
    q_w = [_nearest(math.log2(1 + 1 / v), sets.q_w) for v in relaxed.v_w]
    H, q_g, q_w, steps = repair(fleet, coeffs, sets, H, q_g, q_w)
    strat = evaluate_strategy(fleet, coeffs, H, q_g, q_w, label="rounded")
    if polish_result:
        candidates = [strat]
        starts = [(H, q_g, q_w)]
        for h, (sg, sw) in sorted(getattr(relaxed, "slices", {}).items()):
            if h in sets.H:
                starts.append((h, [_nearest(q, sets.q_g) for q in sg],
                               [_nearest(q, sets.q_w) for q in sw]))
        for h, sg, sw in starts:
            score, qg, qw = _descend(fleet, coeffs, sets, h, sg, sw)
            if np.isfinite(score):
                candidates.append(evaluate_strategy(fleet, coeffs, h, qg, qw, label="rounded"))
        strat = settle_ties(fleet, coeffs, sets, polish(fleet, coeffs, sets, pick_best(candidates)))
    strat.label = "optimized"
    strat.diagnostics = {"repair_steps": steps, "relaxed_psi": relaxed.psi}
    return strat
