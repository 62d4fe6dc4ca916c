"""Reference strategies the optimized one is compared against."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InfeasibleError, InvalidArgumentError
from .model import ConvergenceCoeffs, FeasibleSets, Fleet, evaluate_strategy
from .search import _score_rows, pick_best

BASELINES = ("ifedavg", "fedpaq", "quwg_pro", "adah")


@dataclass(frozen=True)
class AdaHSchedule:
    """Local-step schedule ``H_t = round(sqrt(F_t / F_0) * H0)``, at least ``min_H``."""

    H0: int = 30
    min_H: int = 1

    def __call__(self, round_idx: int, loss_ratio: float) -> int:
        ratio = max(float(loss_ratio), 0.0)
        return max(self.min_H, int(math.floor(math.sqrt(ratio) * self.H0 + 0.5)))


def _snap(value, options):
    options = np.asarray(options, dtype=np.float64)
    dist = np.abs(options - value)
    return int(options[np.flatnonzero(dist <= dist.min() + 1e-12)[-1]])


def scan(fleet: Fleet, coeffs: ConvergenceCoeffs, H_values, assignments, label: str):
    """Best strategy over every ``H`` and every ``(q_g, q_w)`` per-device assignment listed."""
    QG = np.array([a[0] for a in assignments], dtype=np.float64)
    QW = np.array([a[1] for a in assignments], dtype=np.float64)
    cands = []
    for H in H_values:
        scores = _score_rows(fleet, coeffs, H, QG, QW)
        best = scores.min()
        if not np.isfinite(best):
            continue
        for j in np.flatnonzero(scores <= best * (1 + 1e-12)):
            cands.append(evaluate_strategy(fleet, coeffs, H, QG[j], QW[j], label=label))
    best = pick_best(cands)
    if best is None:
        raise InfeasibleError(f"{label}: no strategy in its search space reaches epsilon",
                              constraint="convergence")
    return best


def proportional_levels(fleet: Fleet, level, sets: FeasibleSets):
    """Gradient bits proportional to bandwidth share, scaled so the best-served device gets ``level``."""
    shares = fleet.shares / fleet.shares.max()
    return [_snap(level * s, sets.q_g) for s in shares]


def baseline_assignments(kind: str, fleet: Fleet, sets: FeasibleSets):
    n = fleet.size
    if kind == "ifedavg":
        return [([32] * n, [32] * n)]
    if kind == "fedpaq":
        return [([g] * n, [32] * n) for g in sets.q_g]
    if kind == "quwg_pro":
        seen, out = set(), []
        for level in sets.q_g:
            qg = tuple(proportional_levels(fleet, level, sets))
            if qg not in seen:
                seen.add(qg)
                out.append((list(qg), [16] * n))
        return out
    raise InvalidArgumentError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


def baseline(kind: str, fleet: Fleet, coeffs: ConvergenceCoeffs, sets: FeasibleSets = FeasibleSets()):
    """Strategy for ``ifedavg``, ``fedpaq`` or ``quwg_pro``; an :class:`AdaHSchedule` for ``adah``.

    ``ifedavg`` keeps full precision and scans ``H``; ``fedpaq`` keeps
    full-precision weights with one shared gradient level; ``quwg_pro``
    uses 16-bit weights and bandwidth-proportional gradient levels.
    """
    if kind == "adah":
        return AdaHSchedule()
    return scan(fleet, coeffs, sets.H, baseline_assignments(kind, fleet, sets), kind)
