"""Problem data shared by the strategy solvers: fleets, coefficients, strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..delay import CommCoeffs, ComputeProfile, DelayReport, _rate_of, n_rounds, service_delay
from ..errors import InfeasibleError, InvalidArgumentError
from ..quantization import delta_numerator


@dataclass(frozen=True)
class FeasibleSets:
    H: tuple = tuple(range(1, 51))
    q_g: tuple = (2, 3, 4, 8, 16, 32)
    q_w: tuple = (4, 8, 16, 32)

    def __post_init__(self):
        for name, limit in (("H", None), ("q_g", 32), ("q_w", 32)):
            vals = tuple(sorted(int(v) for v in getattr(self, name)))
            if not vals:
                raise InvalidArgumentError(f"feasible set {name} is empty")
            if vals[0] < 1 or (limit and vals[-1] > limit):
                raise InvalidArgumentError(f"feasible set {name} has out-of-range entries")
            object.__setattr__(self, name, vals)

    @property
    def size(self) -> int:
        return len(self.H) * len(self.q_g) * len(self.q_w)


@dataclass(frozen=True)
class ConvergenceCoeffs:
    """Coefficients of the convergence surrogate and the target ``epsilon``.

    After ``K`` iterations the surrogate is
    ``(A1 + A0 H dg) / sqrt(N K) + C0 dw + B0 H dgw`` with the ``p_n^2``
    weighted moments ``dg = sum p^2 delta_g``, ``dw = sum p^2 delta_w`` and
    ``dgw = sum p^2 delta_g delta_w``.
    """

    A1: float
    A0: float
    B0: float
    C0: float
    epsilon: float
    halved: bool = True

    def __post_init__(self):
        if min(self.A1, self.A0, self.B0, self.C0) < 0:
            raise InvalidArgumentError("convergence coefficients must be nonnegative")
        if self.A1 <= 0:
            raise InvalidArgumentError("A1 must be positive")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")


def deltas(bits, dimension: int, halved: bool = True) -> np.ndarray:
    """Vectorized variance coefficient; accepts real-valued bit widths."""
    bits = np.asarray(bits, dtype=np.float64)
    return delta_numerator(dimension, halved) / (np.exp2(bits) - 1.0)


def moments(weights, delta_g, delta_w):
    p2 = np.asarray(weights, dtype=np.float64) ** 2
    dg = np.asarray(delta_g, dtype=np.float64)
    dw = np.asarray(delta_w, dtype=np.float64)
    return float(p2 @ dg), float(p2 @ dw), float(p2 @ (dg * dw))


def convergence_margin(H, delta_g, delta_w, coeffs: ConvergenceCoeffs, weights) -> float:
    """``epsilon - B0 H dgw - C0 dw``; the target is reachable iff this is positive."""
    _, dw, dgw = moments(weights, delta_g, delta_w)
    return coeffs.epsilon - coeffs.B0 * H * dgw - coeffs.C0 * dw


def required_iterations(H, delta_g, delta_w, coeffs: ConvergenceCoeffs, weights) -> float:
    """Iterations at which the convergence surrogate meets ``epsilon`` exactly (real-valued)."""
    weights = np.asarray(weights, dtype=np.float64)
    dg, dw, dgw = moments(weights, delta_g, delta_w)
    margin = coeffs.epsilon - coeffs.B0 * H * dgw - coeffs.C0 * dw
    if not margin > 0:
        raise InfeasibleError(
            f"epsilon={coeffs.epsilon:g} unreachable: quantization floor "
            f"B0*H*dgw + C0*dw = {coeffs.epsilon - margin:g}",
            constraint="convergence",
        )
    return (coeffs.A1 + coeffs.A0 * H * dg) ** 2 / (weights.size * margin**2)


def convergence_surrogate(K, H, delta_g, delta_w, coeffs: ConvergenceCoeffs, weights) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    dg, dw, dgw = moments(weights, delta_g, delta_w)
    return ((coeffs.A1 + coeffs.A0 * H * dg) / math.sqrt(weights.size * K)
            + coeffs.C0 * dw + coeffs.B0 * H * dgw)


@dataclass
class Fleet:
    """Delay and weighting data for the devices a strategy is chosen for.

    Compute profiles are held in simplified ``H (beta1 q_w + beta0)`` form,
    uplinks as rates; ``shares`` are the bandwidth allocations used by the
    proportional baseline.
    """

    computes: list
    rates: np.ndarray
    comm: CommCoeffs
    weights: np.ndarray
    shares: np.ndarray | None = None
    groups: np.ndarray | None = None
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.computes = [c if c.simplified_only else c.simplified() for c in self.computes]
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = len(self.computes)
        if n == 0 or self.rates.shape != (n,) or self.weights.shape != (n,):
            raise InvalidArgumentError("fleet needs one compute profile, rate and weight per device")
        if np.any(self.rates <= 0):
            raise InvalidArgumentError("rates must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights <= 0):
            raise InvalidArgumentError("device weights must be positive and sum to 1")
        if self.shares is None:
            self.shares = self.rates / self.rates.sum()
        self.shares = np.asarray(self.shares, dtype=np.float64)
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=int)
        if not self.names:
            self.names = [f"device{i}" for i in range(n)]
        b = np.array([c.betas() for c in self.computes])
        self.beta1, self.beta0 = b[:, 0], b[:, 1]
        self.u1 = self.comm.s1 * self.comm.dimension / self.rates
        self.u2 = self.comm.s0 / self.rates

    @classmethod
    def from_profiles(cls, computes: Sequence[ComputeProfile], links, comm: CommCoeffs,
                      weights=None, groups=None, mc_samples: int = 100_000, names=None):
        rates = np.array([_rate_of(l, mc_samples) for l in links])
        shares = None
        if all(getattr(l, "measured_rate", 0) is None for l in links):
            shares = np.array([l.share for l in links])
        n = len(computes)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
        return cls(list(computes), rates, comm, w, shares, groups, list(names or []))

    @property
    def size(self) -> int:
        return len(self.computes)

    @property
    def dimension(self) -> int:
        return self.comm.dimension

    def round_delays(self, H, q_g, q_w) -> np.ndarray:
        q_g = np.asarray(q_g, dtype=np.float64)
        q_w = np.asarray(q_w, dtype=np.float64)
        return self.u1 * q_g + self.u2 + H * (self.beta1 * q_w + self.beta0)

    def delay_report(self, H, q_g, q_w, K, continuous=False) -> DelayReport:
        entries = [(c, r, int(a), int(b)) for c, r, a, b in zip(self.computes, self.rates, q_w, q_g)]
        return service_delay(entries, H, K, self.comm, continuous=continuous)

    def cumulative_delay(self, round_H, q_g, q_w) -> np.ndarray:
        """Wall-clock time at the end of each round when round ``r`` runs ``round_H[r]`` local steps."""
        per = [float(np.max(self.round_delays(h, q_g, q_w))) for h in round_H]
        return np.cumsum(per)

    def rho(self) -> np.ndarray:
        """Per-device full-precision compute/communication ratio."""
        return (32 * self.beta1 + self.beta0) / (32 * self.u1 + self.u2)

    def subset(self, idx) -> "Fleet":
        idx = list(idx)
        w = self.weights[idx] / self.weights[idx].sum()
        return Fleet([self.computes[i] for i in idx], self.rates[idx], self.comm, w,
                     self.shares[idx], None if self.groups is None else self.groups[idx],
                     [self.names[i] for i in idx])


@dataclass
class Strategy:
    H: int
    q_g: tuple
    q_w: tuple
    K: int
    K_real: float
    rounds: float
    round_delay: float
    T_tot: float
    straggler: int
    label: str = ""
    diagnostics: dict = field(default_factory=dict)

    def key(self):
        return (self.H, tuple(self.q_g), tuple(self.q_w))


def evaluate_strategy(fleet: Fleet, coeffs: ConvergenceCoeffs, H, q_g, q_w,
                      integer: bool = True, label: str = "") -> Strategy:
    """Score one assignment: required iterations times the straggler round delay.

    With ``integer=True`` the iteration count is rounded up and the number
    of rounds is ``ceil(K / H)``; otherwise both stay real.
    """
    n = fleet.size
    q_g = tuple(int(v) for v in np.broadcast_to(q_g, (n,))) if integer else tuple(np.broadcast_to(q_g, (n,)))
    q_w = tuple(int(v) for v in np.broadcast_to(q_w, (n,))) if integer else tuple(np.broadcast_to(q_w, (n,)))
    dg = deltas(q_g, fleet.dimension, coeffs.halved)
    dw = deltas(q_w, fleet.dimension, coeffs.halved)
    K_real = required_iterations(H, dg, dw, coeffs, fleet.weights)
    K = int(math.ceil(K_real - 1e-9 * K_real)) if integer else K_real
    rounds = n_rounds(K, H, continuous=not integer)
    t = fleet.round_delays(H, q_g, q_w)
    s = int(np.argmax(t))
    return Strategy(H=int(H) if integer else H, q_g=q_g, q_w=q_w, K=int(math.ceil(K_real - 1e-9 * K_real)),
                    K_real=K_real, rounds=rounds, round_delay=float(t[s]),
                    T_tot=float(rounds * t[s]), straggler=s, label=label)


def check_attainable(fleet: Fleet, coeffs: ConvergenceCoeffs, sets: FeasibleSets):
    """Raise :class:`InfeasibleError` unless the most precise corner reaches ``epsilon``."""
    dg = deltas(np.full(fleet.size, sets.q_g[-1]), fleet.dimension, coeffs.halved)
    dw = deltas(np.full(fleet.size, sets.q_w[-1]), fleet.dimension, coeffs.halved)
    margin = convergence_margin(sets.H[0], dg, dw, coeffs, fleet.weights)
    if margin <= 0:
        raise InfeasibleError(
            f"epsilon={coeffs.epsilon:g} is below the quantization floor "
            f"{coeffs.epsilon - margin:g} even at q_g={sets.q_g[-1]}, q_w={sets.q_w[-1]}, "
            f"H={sets.H[0]}",
            constraint="convergence",
        )


SHARE_OFFSETS = (-0.05, -0.03, 0.03, 0.05)


def heterogeneous_fleet(compute: ComputeProfile, rate: float, comm: CommCoeffs, n_devices: int = 10,
                        gamma_cp: int = 1, gamma_cm: float = 0.0, mode_step: float = 0.5,
                        weights=None) -> Fleet:
    """Four capability groups with tunable computing and bandwidth diversity.

    Group ``g`` gets bandwidth ``rate * (1 + SHARE_OFFSETS[g] * gamma_cm)``.
    ``gamma_cp`` is the number of distinct working modes; group ``g`` runs
    mode ``g mod gamma_cp``, which is ``1 + mode_step * mode`` times slower.
    """
    if gamma_cp < 1 or gamma_cm < 0 or n_devices < len(SHARE_OFFSETS):
        raise InvalidArgumentError("need gamma_cp >= 1, gamma_cm >= 0 and at least 4 devices")
    scales = [1.0 + o * gamma_cm for o in SHARE_OFFSETS]
    if min(scales) <= 0:
        raise InvalidArgumentError(f"gamma_cm={gamma_cm} drives a bandwidth share to zero")
    groups = np.empty(n_devices, dtype=int)
    for g, chunk in enumerate(np.array_split(np.arange(n_devices), len(SHARE_OFFSETS))):
        groups[chunk] = g
    computes = [compute.scaled(1.0 + mode_step * (g % gamma_cp)) for g in groups]
    rates = np.array([rate * scales[g] for g in groups])
    w = np.full(n_devices, 1.0 / n_devices) if weights is None else weights
    return Fleet(computes, rates, comm, w, groups=groups,
                 names=[f"group{g}-{i}" for i, g in enumerate(groups)])
