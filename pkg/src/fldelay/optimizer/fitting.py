"""Fit convergence coefficients to observed iterations-to-target."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares, nnls

from ..errors import InvalidArgumentError, NeedMoreSamplesError
from .model import ConvergenceCoeffs


@dataclass(frozen=True)
class Run:
    """One training run: local steps ``H``, per-device deltas, iterations ``K`` to reach epsilon."""

    H: float
    delta_g: tuple
    delta_w: tuple
    K: float


@dataclass
class FitResult:
    coeffs: ConvergenceCoeffs
    rel_residual: float
    linear_solution: np.ndarray
    n_runs: int


def _features(runs, weights):
    p2 = weights**2
    rows = []
    for r in runs:
        dg = np.broadcast_to(np.asarray(r.delta_g, dtype=np.float64), p2.shape)
        dw = np.broadcast_to(np.asarray(r.delta_w, dtype=np.float64), p2.shape)
        rows.append((r.H, p2 @ dg, p2 @ dw, p2 @ (dg * dw), r.K))
    return np.array(rows)


def predict_iterations(theta, feats, epsilon, n):
    A1, A0, B0, C0 = theta
    H, sg, sw, sgw = feats[:, 0], feats[:, 1], feats[:, 2], feats[:, 3]
    margin = epsilon - B0 * H * sgw - C0 * sw
    with np.errstate(divide="ignore"):
        return np.where(margin > 0, (A1 + A0 * H * sg) ** 2 / (n * margin**2), np.inf)


def fit_coefficients(runs, epsilon: float, weights=None, n_devices: int | None = None,
                     max_rel_residual: float = 0.25, refine: bool = True,
                     halved: bool = True) -> FitResult:
    """Nonnegative fit of ``(A1, A0, B0, C0)`` from runs that each reached ``epsilon``.

    Squaring out the iteration formula gives the identity
    ``sqrt(N K) eps = A1 + A0 H dg + B0 H dgw sqrt(N K) + C0 dw sqrt(N K)``,
    which is linear in the coefficients and solved by NNLS.  With ``refine``
    the result seeds a bounded least-squares fit on ``log K``, which weighs
    multiplicative noise evenly across runs.

    The reported residual is the RMS relative error of the predicted ``K``.
    """
    runs = list(runs)
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be positive")
    if weights is None:
        if n_devices is None:
            n_devices = len(np.atleast_1d(runs[0].delta_g)) if runs else 1
        weights = np.full(n_devices, 1.0 / n_devices)
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.size
    if len(runs) < 4:
        raise NeedMoreSamplesError(f"need at least 4 runs, got {len(runs)}")
    if any(r.K <= 0 or r.H < 1 for r in runs):
        raise InvalidArgumentError("runs need K > 0 and H >= 1")
    feats = _features(runs, weights)
    H, sg, sw, sgw, K = feats.T
    root = np.sqrt(n * K)
    design = np.column_stack([np.ones_like(H), H * sg, H * sgw * root, sw * root])
    rhs = epsilon * root
    scale = np.linalg.norm(design, axis=0)
    if np.any(scale == 0) or np.linalg.matrix_rank(design / scale) < 4:
        raise NeedMoreSamplesError(
            "runs do not identify all four coefficients; vary H and the quantization levels"
        )
    sol, _ = nnls(design / scale, rhs)
    theta = sol / scale
    linear = theta.copy()

    if refine:
        logk = np.log(K)

        def resid(x):
            pred = predict_iterations(x, feats, epsilon, n)
            return np.where(np.isfinite(pred), np.log(np.maximum(pred, 1e-300)) - logk, 1e3)

        x0 = np.maximum(theta, 1e-12 * max(theta.max(), 1.0))
        if np.all(np.isfinite(predict_iterations(x0, feats, epsilon, n))):
            res = least_squares(resid, x0, bounds=(0.0, np.inf), x_scale="jac",
                                xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if res.success and np.sum(res.fun**2) <= np.sum(resid(theta) ** 2):
                theta = res.x

    pred = predict_iterations(theta, feats, epsilon, n)
    rel = float(np.sqrt(np.mean(((pred - K) / K) ** 2)))
    if not np.isfinite(rel) or rel > max_rel_residual:
        raise NeedMoreSamplesError(
            f"fit rejected: relative residual {rel:.3g} exceeds {max_rel_residual:g}"
        )
    if theta[0] <= 0:
        raise NeedMoreSamplesError("fit gave A1 = 0; runs are inconsistent with the model")
    coeffs = ConvergenceCoeffs(*map(float, theta), epsilon=epsilon, halved=halved)
    return FitResult(coeffs=coeffs, rel_residual=rel, linear_solution=linear, n_runs=len(runs))


def synthetic_runs(coeffs: ConvergenceCoeffs, designs, weights, noise: float = 0.0, seed: int = 0):
    """Runs whose ``K`` follows the iteration formula, optionally with multiplicative noise.

    Designs for which ``epsilon`` is unreachable are skipped.
    """
    rng = np.random.default_rng(seed)
    weights = np.asarray(weights, dtype=np.float64)
    theta = (coeffs.A1, coeffs.A0, coeffs.B0, coeffs.C0)
    out = []
    for H, dg, dw in designs:
        feats = _features([Run(H, dg, dw, 1.0)], weights)
        k = float(predict_iterations(theta, feats, coeffs.epsilon, weights.size)[0])
        if not np.isfinite(k):
            continue
        if noise:
            k *= float(np.exp(rng.normal(0.0, noise)))
        out.append(Run(H, tuple(np.broadcast_to(dg, weights.shape)),
                       tuple(np.broadcast_to(dw, weights.shape)), k))
    return out
