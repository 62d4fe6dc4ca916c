"""Continuous relaxation of the strategy problem.

Variables are a shared real ``H`` and per-device real bit widths, written
through ``v = 1 / (2**q - 1)`` so that ``delta = c v``.  With ``phi`` bounding
``(A1 + A0 H dg) / (eps - B0 H dgw - C0 dw)`` the relaxed objective is
``Psi = phi**2 / (H N) * max_n T_n`` where ``T_n`` is the per-round delay.

For fixed ``H`` and a per-round budget ``T`` the smallest ``phi`` is a
quasiconvex ratio over a product of per-device budget segments.  Dinkelbach
iterations split it into independent one-dimensional convex problems, one
per device, solved by vectorized golden-section search.  ``T`` and ``H`` are
then searched on a grid with golden refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InfeasibleError, SolverError
from ..quantization import delta_numerator
from .model import ConvergenceCoeffs, FeasibleSets, Fleet, check_attainable

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class RelaxedSolution:
    H: float
    v_g: np.ndarray
    v_w: np.ndarray
    phi: float
    psi: float
    diagnostics: dict = field(default_factory=dict)
    slices: dict = field(default_factory=dict)

    @property
    def q_g(self) -> np.ndarray:
        return np.log2(1.0 + 1.0 / self.v_g)

    @property
    def q_w(self) -> np.ndarray:
        return np.log2(1.0 + 1.0 / self.v_w)

    @property
    def K(self) -> float:
        return self.phi**2 / self.v_g.size


def delay_residual(sol: RelaxedSolution, fleet: Fleet) -> float:
    """Largest relative violation of ``phi^2/(HN) * T_n <= Psi`` over devices."""
    t = fleet.round_delays(sol.H, sol.q_g, sol.q_w)
    lhs = sol.phi**2 / (sol.H * fleet.size) * t
    return float(np.max((lhs - sol.psi) / sol.psi))


def convergence_residual(sol: RelaxedSolution, fleet: Fleet, coeffs: ConvergenceCoeffs) -> float:
    """Relative violation of the auxiliary-variable convergence constraint (<= 1 when feasible)."""
    c = delta_numerator(fleet.dimension, coeffs.halved)
    p2 = fleet.weights**2
    lhs = (coeffs.A1 + coeffs.A0 * c * sol.H * (p2 @ sol.v_g)) / (sol.phi * coeffs.epsilon)
    lhs += (p2 @ (sol.v_w * (coeffs.B0 * c * c * sol.H * sol.v_g + coeffs.C0 * c))) / coeffs.epsilon
    return float(lhs - 1.0)


class _Problem:
    def __init__(self, fleet: Fleet, coeffs: ConvergenceCoeffs, sets: FeasibleSets, golden_iters):
        self.f = fleet
        self.c = coeffs
        self.kappa = delta_numerator(fleet.dimension, coeffs.halved)
        self.p2 = fleet.weights**2
        self.gl, self.gh = float(sets.q_g[0]), float(sets.q_g[-1])
        self.wl, self.wh = float(sets.q_w[0]), float(sets.q_w[-1])
        self.Hl, self.Hh = float(sets.H[0]), float(sets.H[-1])
        self.iters = golden_iters
        self.evals = 0

    def delta(self, q):
        return self.kappa / (np.exp2(q) - 1.0)

    def t_range(self, H):
        f = self.f
        lo = np.max(f.u1 * self.gl + f.u2 + H * (f.beta1 * self.wl + f.beta0))
        hi = np.max(f.u1 * self.gh + f.u2 + H * (f.beta1 * self.wh + f.beta0))
        return lo, hi

    def _segments(self, H, T):
        f = self.f
        b = T[:, None] - f.u2 - H[:, None] * f.beta0
        hb = H[:, None] * f.beta1
        u1 = np.broadcast_to(f.u1, b.shape)
        feasible = np.all(u1 * self.gl + hb * self.wl <= b * (1 + 1e-12) + 1e-300, axis=1)
        full = u1 * self.gh + hb * self.wh <= b
        with np.errstate(divide="ignore", invalid="ignore"):
            xa = np.where(u1 > 0, (b - hb * self.wh) / u1, self.gh)
            xb = np.where(u1 > 0, (b - hb * self.wl) / u1, self.gh)
        x_lo = np.clip(np.where(full, self.gh, xa), self.gl, self.gh)
        x_hi = np.clip(np.where(full, self.gh, xb), self.gl, self.gh)
        x_lo = np.minimum(x_lo, x_hi)
        return b, hb, u1, full, x_lo, x_hi, feasible

    def _y(self, x, b, hb, u1, full):
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.where(hb > 0, (b - u1 * x) / hb, self.wh)
        return np.where(full, self.wh, np.clip(y, self.wl, self.wh))

    def best_bits(self, H, T):
        """Per point, bit widths minimizing phi under budget ``T``; ``phi = inf`` if infeasible."""
        H = np.asarray(H, dtype=np.float64)
        T = np.asarray(T, dtype=np.float64)
        self.evals += H.size
        b, hb, u1, full, x_lo, x_hi, feasible = self._segments(H, T)
        c = self.c

        def argmin(a, bb, cc):
            lo, hi = x_lo.copy(), x_hi.copy()

            def h(x):
                dg = self.delta(x)
                dw = self.delta(self._y(x, b, hb, u1, full))
                return a[:, None] * dg + bb[:, None] * dg * dw + cc[:, None] * dw

            x1 = hi - _INVPHI * (hi - lo)
            x2 = lo + _INVPHI * (hi - lo)
            f1, f2 = h(x1), h(x2)
            for _ in range(self.iters):
                left = f1 <= f2
                hi = np.where(left, x2, hi)
                lo = np.where(left, lo, x1)
                x2n = np.where(left, x1, lo + _INVPHI * (hi - lo))
                x1n = np.where(left, hi - _INVPHI * (hi - lo), x2)
                x1, x2 = x1n, x2n
                f1, f2 = h(x1), h(x2)
            cand = [x_lo, x_hi, 0.5 * (lo + hi)]
            vals = [h(x) for x in cand]
            pick = np.argmin(np.stack(vals), axis=0)
            x = np.choose(pick, cand)
            return x, self._y(x, b, hb, u1, full)

        zeros = np.zeros_like(H)
        qg, qw = argmin(zeros, c.B0 * H, np.full_like(H, c.C0))
        num, den = self._ratio_rows(H, qg, qw)
        ok = feasible & (den > 0)
        t = np.where(ok, num / np.where(ok, den, 1.0), np.inf)
        gap = np.zeros_like(H)
        for _ in range(50):
            if not np.any(ok):
                break
            ts = np.where(ok, t, 0.0)
            ng, nw = argmin(c.A0 * H, ts * c.B0 * H, ts * c.C0)
            num, den = self._ratio_rows(H, ng, nw)
            good = ok & (den > 0)
            t_new = np.where(good, num / np.where(good, den, 1.0), np.inf)
            better = good & (t_new < t)
            qg = np.where(better[:, None], ng, qg)
            qw = np.where(better[:, None], nw, qw)
            with np.errstate(invalid="ignore"):
                gap = np.where(ok, (t - np.minimum(t, t_new)) / np.maximum(t, 1e-300), 0.0)
            t = np.where(better, t_new, t)
            if np.all(gap[ok] <= 1e-13):
                break
        t_round = np.max(self.f.u1 * qg + self.f.u2 + H[:, None] * (self.f.beta1 * qw + self.f.beta0), axis=1)
        psi = np.where(ok, t**2 * t_round / (H * self.f.size), np.inf)
        return psi, t, qg, qw, gap

    def _ratio_rows(self, H, qg, qw):
        dg, dw = self.delta(qg), self.delta(qw)
        num = self.c.A1 + self.c.A0 * H * (dg @ self.p2)
        den = self.c.epsilon - self.c.B0 * H * ((dg * dw) @ self.p2) - self.c.C0 * (dw @ self.p2)
        return num, den

    def search_budget(self, Hs, n_grid, refine_iters):
        """For each H, minimize psi over the per-round budget; returns (psi, T) arrays."""
        Hs = np.asarray(Hs, dtype=np.float64)
        m = Hs.size
        lo, hi = zip(*(self.t_range(h) for h in Hs))
        lo = np.log(np.asarray(lo))
        hi = np.log(np.maximum(np.asarray(hi), np.asarray(np.exp(lo))))
        frac = np.linspace(0.0, 1.0, n_grid)
        grid = lo[:, None] + (hi - lo)[:, None] * frac
        psi = self.best_bits(np.repeat(Hs, n_grid), np.exp(grid.ravel()))[0].reshape(m, n_grid)
        i = np.argmin(psi, axis=1)
        rows = np.arange(m)
        best_psi = psi[rows, i]
        best_x = grid[rows, i]
        a = grid[rows, np.maximum(i - 1, 0)]
        z = grid[rows, np.minimum(i + 1, n_grid - 1)]

        def f(x):
            return self.best_bits(Hs, np.exp(x))[0]

        x1 = z - _INVPHI * (z - a)
        x2 = a + _INVPHI * (z - a)
        f1, f2 = f(x1), f(x2)
        for _ in range(refine_iters):
            left = f1 <= f2
            z = np.where(left, x2, z)
            a = np.where(left, a, x1)
            nx = np.where(left, z - _INVPHI * (z - a), a + _INVPHI * (z - a))
            fn = f(nx)
            x1, x2, f1, f2 = (np.where(left, nx, x2), np.where(left, x1, nx),
                              np.where(left, fn, f2), np.where(left, f1, fn))
        for val, x in ((f1, x1), (f2, x2)):
            take = val < best_psi
            best_psi = np.where(take, val, best_psi)
            best_x = np.where(take, x, best_x)
        return best_psi, np.exp(best_x)


def solve_relaxed(fleet: Fleet, coeffs: ConvergenceCoeffs, sets: FeasibleSets = FeasibleSets(),
                  method: str = "exact", n_grid: int = 24, refine_iters: int = 40,
                  golden_iters: int = 60, h_refine: int = 41):
    """Solve the relaxed problem over the continuous hull of ``sets``.

    ``method="exact"`` (default) keeps ``q = log2(1 + 1/v)`` exact, so its
    ``Psi`` lower-bounds every integer strategy's total delay.
    ``method="gp"`` solves the log-space geometric program with the
    ``q ~ log(2)/v`` approximation (requires cvxpy); that bound is not
    guaranteed.
    """
    check_attainable(fleet, coeffs, sets)
    if method == "gp":
        return solve_geometric(fleet, coeffs, sets)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    prob = _Problem(fleet, coeffs, sets, golden_iters)
    hs = np.arange(int(sets.H[0]), int(sets.H[-1]) + 1, dtype=np.float64)
    psi, budget = prob.search_budget(hs, n_grid, refine_iters)
    if not np.any(np.isfinite(psi)):
        raise InfeasibleError("relaxed problem is infeasible for every H", constraint="convergence")
    finite = np.isfinite(psi)
    _, _, sg, sw, _ = prob.best_bits(hs[finite], budget[finite])
    slices = {int(h): (a, b) for h, a, b in zip(hs[finite], sg, sw)}
    k = int(np.argmin(psi))
    # continuous H around the best integer
    fine = np.linspace(max(prob.Hl, hs[k] - 1.0), min(prob.Hh, hs[k] + 1.0), h_refine)
    fpsi, fbudget = prob.search_budget(fine, n_grid, refine_iters)
    hs = np.concatenate([hs, fine])
    psi = np.concatenate([psi, fpsi])
    budget = np.concatenate([budget, fbudget])
    k = int(np.argmin(psi))
    H, T = float(hs[k]), float(budget[k])
    psi_k, phi, qg, qw, gap = prob.best_bits(np.array([H]), np.array([T]))
    psi_k, phi, qg, qw, gap = float(psi_k[0]), float(phi[0]), qg[0], qw[0], float(gap[0])
    if not np.isfinite(psi_k):
        raise SolverError("relaxed search found no finite point", {"evaluations": prob.evals})
    v_g = 1.0 / (np.exp2(qg) - 1.0)
    v_w = 1.0 / (np.exp2(qw) - 1.0)
    sol = RelaxedSolution(H=H, v_g=v_g, v_w=v_w, phi=phi, psi=psi_k, slices=slices)
    sol.diagnostics = {
        "method": "exact",
        "evaluations": prob.evals,
        "dinkelbach_gap": gap,
        "round_budget": T,
        "delay_residual": delay_residual(sol, fleet),
        "convergence_residual": convergence_residual(sol, fleet, coeffs),
    }
    return sol


def solve_geometric(fleet: Fleet, coeffs: ConvergenceCoeffs, sets: FeasibleSets = FeasibleSets(),
                    solver: str | None = None) -> RelaxedSolution:
    """Geometric program in ``(H, phi, Psi, v_g, v_w)`` with ``q ~ log(2) / v`` (cvxpy DGP)."""
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise SolverError("method='gp' needs cvxpy installed") from exc
    check_attainable(fleet, coeffs, sets)
    n = fleet.size
    c = delta_numerator(fleet.dimension, coeffs.halved)
    ln2 = math.log(2.0)
    H = cp.Variable(pos=True)
    phi = cp.Variable(pos=True)
    psi = cp.Variable(pos=True)
    vg = cp.Variable(n, pos=True)
    vw = cp.Variable(n, pos=True)
    p2 = fleet.weights**2
    cons = [H >= sets.H[0], H <= sets.H[-1]]
    for v, qs in ((vg, sets.q_g), (vw, sets.q_w)):
        cons += [v >= 1.0 / (2.0 ** qs[-1] - 1.0), v <= 1.0 / (2.0 ** qs[0] - 1.0)]
    for i in range(n):
        terms = H * fleet.beta0[i] if fleet.beta0[i] > 0 else 0
        if fleet.beta1[i] > 0:
            terms = terms + H * fleet.beta1[i] * ln2 / vw[i]
        if fleet.u1[i] > 0:
            terms = terms + fleet.u1[i] * ln2 / vg[i]
        if fleet.u2[i] > 0:
            terms = terms + fleet.u2[i]
        cons.append(phi**2 / (H * n) * terms <= psi)
    conv = coeffs.A1 / (phi * coeffs.epsilon)
    if coeffs.A0 > 0:
        conv = conv + coeffs.A0 * c * H * (p2 @ vg) / (phi * coeffs.epsilon)
    for i in range(n):
        if coeffs.B0 > 0:
            conv = conv + p2[i] * coeffs.B0 * c * c * H * vg[i] * vw[i] / coeffs.epsilon
        if coeffs.C0 > 0:
            conv = conv + p2[i] * coeffs.C0 * c * vw[i] / coeffs.epsilon
    cons.append(conv <= 1)
    problem = cp.Problem(cp.Minimize(psi), cons)
    try:
        problem.solve(gp=True, solver=solver)
    except cp.error.SolverError as exc:
        raise SolverError(f"geometric program failed: {exc}") from exc
    if problem.status not in ("optimal", "optimal_inaccurate"):
        if "infeasible" in problem.status:
            raise InfeasibleError("geometric program infeasible", constraint="convergence")
        raise SolverError(f"geometric program ended with status {problem.status}")
    sol = RelaxedSolution(H=float(H.value), v_g=np.asarray(vg.value, dtype=float),
                          v_w=np.asarray(vw.value, dtype=float), phi=float(phi.value),
                          psi=float(psi.value))
    sol.diagnostics = {"method": "gp", "status": problem.status,
                       "convergence_residual": convergence_residual(sol, fleet, coeffs)}
    return sol
