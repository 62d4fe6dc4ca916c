"""Empirical estimates of the smoothness, noise and heterogeneity constants.

Every estimate is a maximum over a finite probe set, so it lower-bounds the
true constant.  Bound checks built on them are necessary-condition tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bound import ProblemConstants
from .errors import InvalidArgumentError
from .training import global_loss_grad, minibatch


@dataclass(frozen=True)
class ProbeConfig:
    """Where and how densely to probe.

    Probe points lie on the segment from the start model to the best known
    model, each perturbed by Gaussian noise of scale ``radius`` times the
    segment length (or ``radius`` if that is zero).  ``points`` overrides the
    automatic probes.
    """

    n_points: int = 8
    radius: float = 0.5
    n_batches: int = 64
    batch_size: int = 32
    power_iters: int = 30
    gd_steps: int = 2000
    seed: int = 0
    points: tuple | None = None


@dataclass
class EstimatedConstants:
    L: float
    sigma2: float
    tau2: float
    G2: float
    delta_F: float
    F_start: float
    F_best: float
    w_best: np.ndarray

    def problem(self, d: int, M: int, weights) -> ProblemConstants:
        return ProblemConstants(L=self.L, sigma2=self.sigma2, tau2=self.tau2, G2=self.G2, d=d, M=M,
                                N=len(weights), weights=tuple(weights), delta_F=self.delta_F)


def _best_model(task, devices, w0, L, steps):
    if task.kind == "quadratic":
        return task.optimum([d.shard for d in devices], [d.weight for d in devices])
    w = np.array(w0, dtype=np.float64)
    step = 1.0 / max(L, 1e-12)
    for _ in range(steps):
        _, g = global_loss_grad(task, devices, w)
        w = w - step * g
    return w


def _top_curvature(task, shard, x, iters, rng):
    """Largest gradient-difference ratio along a power-iterated direction at ``x``."""
    g0 = task.grad(x, shard)
    v = rng.normal(size=x.size)
    v /= np.linalg.norm(v)
    h = 1e-4 * max(1.0, np.linalg.norm(x))
    best = 0.0
    for _ in range(iters):
        hv = (task.grad(x + h * v, shard) - g0) / h
        norm = np.linalg.norm(hv)
        best = max(best, norm)
        if norm == 0:
            break
        v = hv / norm
    return best


def estimate_constants(task, devices, w0=None, probe: ProbeConfig = ProbeConfig()) -> EstimatedConstants:
    """Probe-based ``(L, sigma^2, tau^2, G^2, F(w0) - F_best)``.

    * ``L``: largest ``|grad F_n(x) - grad F_n(y)| / |x - y|`` over probe pairs
      and power-iterated finite-difference pairs.
    * ``sigma^2``: ``M`` times the largest minibatch-gradient variance, so it
      is a per-sample variance.
    * ``tau^2``: largest minibatch-gradient second moment.
    * ``G^2``: largest ``|grad F_n - grad F|^2``.
    """
    if probe.n_points < 2 and probe.points is None:
        raise InvalidArgumentError("need at least two probe points")
    if probe.n_batches < 2 or probe.batch_size < 1:
        raise InvalidArgumentError("need at least two probe batches of positive size")
    rng = np.random.default_rng(probe.seed)
    w0 = task.initial_params(probe.seed) if w0 is None else np.asarray(w0, dtype=np.float64)
    shards = [d.shard for d in devices]

    # rough L at the start fixes the gradient-descent step for the best model
    L0 = max(_top_curvature(task, s, w0, probe.power_iters, rng) for s in shards)
    w_best = _best_model(task, devices, w0, L0, probe.gd_steps)

    if probe.points is not None:
        points = [np.asarray(p, dtype=np.float64) for p in probe.points]
        if len(points) < 2:
            raise InvalidArgumentError("need at least two probe points")
    else:
        span = float(np.linalg.norm(w_best - w0)) or 1.0
        points = []
        for t in np.linspace(0.0, 1.0, probe.n_points):
            base = (1 - t) * w0 + t * w_best
            points.append(base + probe.radius * span / math.sqrt(base.size) * rng.normal(size=base.size))
        points[0] = w0.copy()
        points[-1] = w_best.copy()

    L = 0.0
    sigma2 = tau2 = G2 = 0.0
    grads = []
    for x in points:
        _, g_full = global_loss_grad(task, devices, x)
        row = []
        for s in shards:
            g_n = task.grad(x, s)
            row.append(g_n)
            diff = g_n - g_full
            G2 = max(G2, float(diff @ diff))
            batch = np.array([task.grad(x, minibatch(rng, s, probe.batch_size))
                              for _ in range(probe.n_batches)])
            dev = batch - g_n
            sigma2 = max(sigma2, float(np.mean(np.sum(dev**2, axis=1))) * min(probe.batch_size, s.size))
            tau2 = max(tau2, float(np.mean(np.sum(batch**2, axis=1))))
        grads.append(row)
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dx = np.linalg.norm(points[i] - points[j])
            if dx == 0:
                continue
            for n in range(len(shards)):
                L = max(L, float(np.linalg.norm(grads[i][n] - grads[j][n]) / dx))
    for x in (points[0], points[-1]):
        for s in shards:
            L = max(L, _top_curvature(task, s, x, probe.power_iters, rng))
    if L == 0.0:
        raise InvalidArgumentError("probe set is degenerate: every gradient difference is zero")

    F_start, _ = global_loss_grad(task, devices, w0)
    F_best, _ = global_loss_grad(task, devices, w_best)
    return EstimatedConstants(L=L, sigma2=sigma2, tau2=tau2, G2=G2,
                              delta_F=max(F_start - F_best, 0.0), F_start=F_start,
                              F_best=F_best, w_best=w_best)


def weight_residual_fraction(trace, delta_w, dimension: int, tau: float) -> float:
    """Share of (step, device) weight-quantization residuals within ``eta sqrt(d) delta_w tau``."""
    resid = np.asarray(trace.weight_residuals)
    if resid.size == 0:
        raise InvalidArgumentError("trace has no recorded residuals")
    eta = np.asarray(trace.round_lr)[np.asarray(trace.iteration_round)]
    dw = np.broadcast_to(np.asarray(delta_w, dtype=np.float64), (resid.shape[1],))
    limit = eta[:, None] * math.sqrt(dimension) * dw[None, :] * tau
    return float(np.mean(resid <= limit))
