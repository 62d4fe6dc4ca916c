"""Per-device computing and uplink delay, and the straggler-bound service delay."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidArgumentError
from .quantization import FULL_PRECISION


def _check_q(q):
    if not 1 <= q <= FULL_PRECISION:
        raise InvalidArgumentError(f"bit width must lie in [1, 32], got {q}")


def alpha1(q_w, m: float) -> float:
    """Tensor-core time factor: the accelerable fraction ``m`` runs ``32/q_w`` times faster."""
    _check_q(q_w)
    if not 0.0 <= m <= 1.0:
        raise InvalidArgumentError(f"accelerable fraction must lie in [0, 1], got {m}")
    return (1.0 - m) + m / (32.0 / q_w)


@dataclass(frozen=True)
class ComputeProfile:
    """Time model for one local SGD iteration.

    Full form: ``H * (alpha1(q) t_core + alpha2(q) mem_time) + t0`` with
    ``alpha2(q) = mem_slope * q + mem_intercept`` (default ``q / 32``) and
    ``mem_time = theta_mem / f_mem``.  A profile built with only
    ``beta1``/``beta0`` uses the simplified form ``H * (beta1 q + beta0)``.
    """

    t_core: float = 0.0
    theta_mem: float = 0.0
    f_mem: float = 1.0
    t0: float = 0.0
    m: float = 0.0
    mem_slope: float = 1.0 / 32.0
    mem_intercept: float = 0.0
    beta1: float | None = None
    beta0: float | None = None

    def __post_init__(self):
        for name in ("t_core", "theta_mem", "t0"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")
        if self.f_mem <= 0:
            raise InvalidArgumentError("memory frequency must be positive")
        if not 0.0 <= self.m <= 1.0:
            raise InvalidArgumentError("accelerable fraction m must lie in [0, 1]")
        if (self.beta1 is None) != (self.beta0 is None):
            raise InvalidArgumentError("beta1 and beta0 must be given together")
        if self.beta1 is not None and (self.beta1 < 0 or self.beta0 < 0):
            raise InvalidArgumentError("beta coefficients must be nonnegative")

    @classmethod
    def from_betas(cls, beta1: float, beta0: float) -> "ComputeProfile":
        return cls(beta1=beta1, beta0=beta0)

    @property
    def simplified_only(self) -> bool:
        return self.beta1 is not None and self.t_core == 0 and self.theta_mem == 0 and self.t0 == 0

    @property
    def mem_time(self) -> float:
        return self.theta_mem / self.f_mem

    def alpha2(self, q_w) -> float:
        return self.mem_slope * q_w + self.mem_intercept

    def per_iteration(self, q_w) -> float:
        return alpha1(q_w, self.m) * self.t_core + self.alpha2(q_w) * self.mem_time

    def betas(self) -> tuple[float, float]:
        """``(beta1, beta0)`` of the simplified model.

        When not given explicitly they are derived so that both forms agree
        exactly for ``H = 1``: ``beta1 = mem_slope * mem_time + m t_core / 32``
        and ``beta0 = t0 + (1 - m) t_core + mem_intercept * mem_time``.  For
        ``H > 1`` the simplified form charges ``t0`` every iteration.
        """
        if self.beta1 is not None:
            return self.beta1, self.beta0
        b1 = self.mem_slope * self.mem_time + self.m * self.t_core / 32.0
        b0 = self.t0 + (1.0 - self.m) * self.t_core + self.mem_intercept * self.mem_time
        return b1, b0

    def simplified(self) -> "ComputeProfile":
        return ComputeProfile.from_betas(*self.betas())

    def scaled(self, factor: float) -> "ComputeProfile":
        """The same device running ``factor`` times slower."""
        b = None if self.beta1 is None else (self.beta1 * factor, self.beta0 * factor)
        return ComputeProfile(
            t_core=self.t_core * factor,
            theta_mem=self.theta_mem * factor,
            f_mem=self.f_mem,
            t0=self.t0 * factor,
            m=self.m,
            mem_slope=self.mem_slope,
            mem_intercept=self.mem_intercept,
            beta1=None if b is None else b[0],
            beta0=None if b is None else b[1],
        )


def compute_delay(profile: ComputeProfile, q_w, H, simplified: bool | None = None) -> float:
    """Seconds of local computing for one round of ``H`` iterations at ``q_w`` bits.

    ``simplified=None`` uses the simplified form only for beta-only profiles.
    """
    _check_q(q_w)
    if H < 1:
        raise InvalidArgumentError("H must be at least 1")
    if simplified is None:
        simplified = profile.simplified_only
    if simplified:
        b1, b0 = profile.betas()
        return H * (b1 * q_w + b0)
    return H * profile.per_iteration(q_w) + profile.t0


def fit_compute_profile(observations, m: float, mem_slope: float = 1.0 / 32.0,
                        mem_intercept: float = 0.0) -> ComputeProfile:
    """Nonnegative least-squares fit of ``(t_core, mem_time, t0)``.

    ``observations`` are ``(q_w, H, seconds)`` triples.  With fewer than three
    distinct design rows the split between the terms is not identifiable and
    NNLS returns one of the exact fits.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != 3 or obs.shape[0] < 1:
        raise InvalidArgumentError("observations must be (q_w, H, seconds) triples")
    A = np.column_stack(
        [
            obs[:, 1] * [alpha1(q, m) for q in obs[:, 0]],
            obs[:, 1] * (mem_slope * obs[:, 0] + mem_intercept),
            np.ones(len(obs)),
        ]
    )
    coef, _ = nnls(A, obs[:, 2])
    return ComputeProfile(t_core=coef[0], theta_mem=coef[1], f_mem=1.0, t0=coef[2], m=m,
                          mem_slope=mem_slope, mem_intercept=mem_intercept)


# Estimated one-pass (q_w = 32, H = 1) computing delays, in seconds.
ONE_PASS_ESTIMATES = {
    ("xavier", "resnet20"): 0.0773,
    ("xavier", "mobilenetv2"): 0.4013,
    ("rtx8000", "resnet20"): 0.0152,
    ("rtx8000", "mobilenetv2"): 0.1446,
}
ONE_PASS_MEASURED = {
    ("xavier", "resnet20"): 0.0746,
    ("xavier", "mobilenetv2"): 0.375,
    ("rtx8000", "resnet20"): 0.014,
    ("rtx8000", "mobilenetv2"): 0.131,
}
MODEL_DIMENSIONS = {"resnet20": 270_000, "mobilenetv2": 3_400_000}
TENSOR_CORE_FRACTION = 0.75


def preset_profile(device: str, model: str, m: float = TENSOR_CORE_FRACTION) -> ComputeProfile:
    """Compute profile fitted to the estimated one-pass delay of a device/model pair."""
    key = (device.lower(), model.lower())
    if key not in ONE_PASS_ESTIMATES:
        raise InvalidArgumentError(f"no preset for {device}/{model}")
    return fit_compute_profile([(32, 1, ONE_PASS_ESTIMATES[key])], m=m)


@dataclass(frozen=True)
class ChannelProfile:
    """OFDMA uplink share of one device.

    ``fading`` is ``"deterministic"`` (fixed ``gain`` = |h|^2) or
    ``"rayleigh"`` (|h|^2 exponential with mean ``gain``).  ``measured_rate``
    in bits/s bypasses the channel model entirely.
    """

    share: float = 1.0
    bandwidth: float = 1e6
    tx_power: float = 1.0
    noise_power: float = 1.0
    fading: str = "rayleigh"
    gain: float = 1.0
    seed: int = 0
    measured_rate: float | None = None

    def __post_init__(self):
        if self.measured_rate is not None:
            if self.measured_rate <= 0:
                raise InvalidArgumentError("measured rate must be positive")
            return
        if not 0.0 < self.share <= 1.0:
            raise InvalidArgumentError("bandwidth share must lie in (0, 1]")
        if self.bandwidth <= 0 or self.tx_power <= 0 or self.noise_power <= 0 or self.gain <= 0:
            raise InvalidArgumentError("bandwidth, power, noise and gain must be positive")
        if self.fading not in ("deterministic", "rayleigh"):
            raise InvalidArgumentError(f"unknown fading model {self.fading!r}")

    @property
    def snr(self) -> float:
        return self.tx_power * self.gain / self.noise_power


@lru_cache(maxsize=4096)
def _spectral_efficiency(fading, snr, seed, mc_samples):
    if fading == "deterministic":
        return math.log2(1.0 + snr)
    rng = np.random.default_rng(seed)
    g = rng.exponential(1.0, size=mc_samples)
    return float(np.mean(np.log2(1.0 + snr * g)))


def expected_rate(channel: ChannelProfile, mc_samples: int = 100_000) -> float:
    """Expected uplink rate in bits/s: ``share * W * E[log2(1 + P |h|^2 / N0)]``."""
    if channel.measured_rate is not None:
        return float(channel.measured_rate)
    if channel.fading == "rayleigh" and mc_samples < 1:
        raise InvalidArgumentError("need at least one Monte-Carlo sample")
    eff = _spectral_efficiency(channel.fading, channel.snr, channel.seed, int(mc_samples))
    return channel.share * channel.bandwidth * eff


@dataclass(frozen=True)
class CommCoeffs:
    dimension: int
    s1: float = 1.0
    s0: float = 0.0

    def __post_init__(self):
        if self.s1 <= 0 or self.s0 < 0 or self.dimension < 1:
            raise InvalidArgumentError("need s1 > 0, s0 >= 0 and dimension >= 1")

    def payload_bits(self, q_g) -> float:
        return self.s1 * self.dimension * q_g + self.s0


def comm_delay(q_g, rate: float, coeffs: CommCoeffs) -> float:
    """Seconds to upload one ``q_g``-bit model difference at ``rate`` bits/s."""
    _check_q(q_g)
    if not rate > 0:
        raise InvalidArgumentError(f"rate must be positive, got {rate}")
    return coeffs.payload_bits(q_g) / rate


def _rate_of(link, mc_samples):
    if isinstance(link, ChannelProfile):
        return expected_rate(link, mc_samples)
    return float(link)


@dataclass
class DelayReport:
    t_cp: np.ndarray
    t_cm: np.ndarray
    H: int
    K: float
    rounds: float

    @property
    def t_n(self) -> np.ndarray:
        return self.t_cp + self.t_cm

    @property
    def straggler(self) -> int:
        return int(np.argmax(self.t_n))

    @property
    def round_delay(self) -> float:
        return float(np.max(self.t_n))

    @property
    def total(self) -> float:
        return self.rounds * self.round_delay

    def rows(self):
        s = self.straggler
        for i, (a, b) in enumerate(zip(self.t_cp, self.t_cm)):
            yield i, float(a), float(b), float(a + b), i == s


def n_rounds(K, H, continuous: bool = False) -> float:
    if continuous:
        return K / H
    return float(math.ceil(K / H - 1e-9))


def service_delay(devices: Sequence[tuple], H: int, K, coeffs: CommCoeffs,
                  mc_samples: int = 100_000, continuous: bool = False) -> DelayReport:
    """Per-device and straggler delay for ``(compute, link, q_w, q_g)`` tuples.

    ``link`` is a :class:`ChannelProfile` or a rate in bits/s.  The round
    count is ``ceil(K / H)`` (``K / H`` with ``continuous=True``).
    """
    if not devices:
        raise InvalidArgumentError("service_delay needs at least one device")
    t_cp = np.array([compute_delay(c, qw, H) for c, _, qw, _ in devices])
    t_cm = np.array([comm_delay(qg, _rate_of(l, mc_samples), coeffs) for _, l, _, qg in devices])
    return DelayReport(t_cp=t_cp, t_cm=t_cm, H=H, K=K, rounds=n_rounds(K, H, continuous))


def rho(profile: ComputeProfile, link, coeffs: CommCoeffs, mc_samples: int = 100_000) -> float:
    """Full-precision single-iteration compute delay over full-precision upload delay."""
    t_cm = comm_delay(FULL_PRECISION, _rate_of(link, mc_samples), coeffs)
    if t_cm == 0:
        raise InvalidArgumentError("communication delay is zero")
    return compute_delay(profile, FULL_PRECISION, 1) / t_cm
