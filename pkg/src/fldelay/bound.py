"""Convergence bound for quantized local SGD and an empirical checker.

For ``K`` iterations with ``H`` local steps, batch size ``M`` and ``N``
devices the mean squared gradient norm is bounded by

    4 dF / sqrt(MNK)
    + 2 L sigma^2 (2 H dg + pbar) / sqrt(MNK)
    + 12 M L H dg G^2 / sqrt(MNK)
    + 2 L sqrt(d) tau sum_n p_n^2 (delta_g,n + 1) delta_w,n

with ``dg = sum p_n^2 delta_g,n`` and ``pbar = sum p_n^2``.  The last term
does not vanish with ``K``: it is the error floor of weight quantization.
The bound assumes the constant step size ``sqrt(MN/K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError
from .quantization import delta_coefficient


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    sigma2: float
    tau2: float
    G2: float
    d: int
    M: int
    N: int
    weights: tuple
    delta_F: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.N,):
            raise InvalidArgumentError("need one weight per device")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise InvalidArgumentError("weights must be nonnegative and sum to 1")
        for name in ("L", "sigma2", "tau2", "G2", "delta_F"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")
        if self.d < 1 or self.M < 1 or self.N < 1:
            raise InvalidArgumentError("d, M and N must be positive")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @property
    def p2(self) -> np.ndarray:
        return np.asarray(self.weights) ** 2

    @property
    def tau(self) -> float:
        return math.sqrt(self.tau2)


@dataclass(frozen=True)
class BoundTerms:
    optimality: float
    variance: float
    heterogeneity: float
    quantization_floor: float

    @property
    def total(self) -> float:
        return self.optimality + self.variance + self.heterogeneity + self.quantization_floor

    def as_tuple(self):
        return (self.optimality, self.variance, self.heterogeneity, self.quantization_floor)


def theorem1_terms(c: ProblemConstants, K, H, delta_g, delta_w) -> BoundTerms:
    """The four terms of the bound, for per-device (or scalar) deltas."""
    if K < 1 or H < 1:
        raise InvalidArgumentError("K and H must be at least 1")
    p2 = c.p2
    dg = np.broadcast_to(np.asarray(delta_g, dtype=np.float64), p2.shape)
    dw = np.broadcast_to(np.asarray(delta_w, dtype=np.float64), p2.shape)
    if np.any(dg < 0) or np.any(dw < 0):
        raise InvalidArgumentError("deltas must be nonnegative")
    root = math.sqrt(c.M * c.N * K)
    dbar_g = float(p2 @ dg)
    pbar = float(p2.sum())
    return BoundTerms(
        optimality=4.0 * c.delta_F / root,
        variance=2.0 * c.L * c.sigma2 * (2.0 * H * dbar_g + pbar) / root,
        heterogeneity=12.0 * c.M * c.L * H * dbar_g * c.G2 / root,
        quantization_floor=2.0 * c.L * math.sqrt(c.d) * c.tau * float(p2 @ ((dg + 1.0) * dw)),
    )


def theorem1_rhs(c: ProblemConstants, K, H, delta_g, delta_w) -> float:
    return theorem1_terms(c, K, H, delta_g, delta_w).total


def validity_warnings(c: ProblemConstants, K, H, lr: float | None = None) -> list[str]:
    """Conditions the bound's derivation assumes, reported when violated."""
    eta = math.sqrt(c.M * c.N / K) if lr is None else lr
    out = []
    if eta * c.L > 1.0:
        out.append(f"eta*L={eta * c.L:.4g}>1")
    if 1.0 - 3.0 * eta**2 * c.L**2 * H**2 <= 0.0:
        out.append(f"1-3*eta^2*L^2*H^2={1.0 - 3.0 * eta**2 * c.L**2 * H**2:.4g}<=0")
    return out


@dataclass
class BoundReport:
    K: int
    H: int
    lhs: float
    rhs: float
    terms: BoundTerms
    holds: bool
    warnings: list

    def row(self) -> dict:
        t = self.terms.as_tuple()
        return {
            "K": self.K, "H": self.H, "lhs": self.lhs, "rhs": self.rhs,
            "term1": t[0], "term2": t[1], "term3": t[2], "term4": t[3],
            "holds": self.holds, "validity_warnings": ";".join(self.warnings),
        }


def check_bound(trace, constants: ProblemConstants, H: int, q_g, q_w,
                halved: bool = True) -> BoundReport:
    """Compare a trace's mean squared gradient norm with the bound.

    ``q_g`` and ``q_w`` are the bit widths the trace was run with (scalars or
    per device).  The trace must use the constant ``sqrt(MN/K)`` step size.
    """
    if trace.schedule != "theorem1":
        raise ConfigurationError(
            f"trace used the {trace.schedule!r} learning-rate schedule; the bound needs 'theorem1'"
        )
    if trace.n_devices != constants.N or trace.batch_size != constants.M:
        raise ConfigurationError("trace device count or batch size differs from the constants")
    n = constants.N
    qg = np.broadcast_to(np.asarray(q_g), (n,))
    qw = np.broadcast_to(np.asarray(q_w), (n,))
    dg = np.array([delta_coefficient(int(q), constants.d, halved) for q in qg])
    dw = np.array([delta_coefficient(int(q), constants.d, halved) for q in qw])
    K = trace.iterations
    terms = theorem1_terms(constants, K, H, dg, dw)
    lhs = trace.mean_grad_norm_sq()
    return BoundReport(K=K, H=H, lhs=lhs, rhs=terms.total, terms=terms,
                       holds=bool(lhs <= terms.total),
                       warnings=validity_warnings(constants, K, H, trace.round_lr[0]))
