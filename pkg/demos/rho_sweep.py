"""How the delay-optimal number of local steps moves with the compute/communication ratio.

Slowing every device's compute raises rho; with bit widths held fixed the
best H shrinks, because each extra local step costs more than the upload it saves.

Run from the repository root:  python demos/rho_sweep.py
"""

import numpy as np

from fldelay.delay import CommCoeffs, ComputeProfile
from fldelay.optimizer import ConvergenceCoeffs, FeasibleSets, Fleet, brute_force, optimize


def main():
    rng = np.random.default_rng(0)
    n = 4
    computes = [ComputeProfile.from_betas(rng.uniform(1e-4, 1e-3), rng.uniform(1e-3, 2e-2))
                for _ in range(n)]
    base = Fleet(computes, rng.uniform(20e6, 100e6, n), CommCoeffs(270_000), np.full(n, 1 / n))
    coeffs = ConvergenceCoeffs(A1=32.3, A0=0.35, B0=0.001, C0=0.06, epsilon=0.5)
    sets = FeasibleSets(H=tuple(range(1, 51)), q_g=(8,), q_w=(16,))

    r0 = base.rho().mean()
    print(" rho    H*      K    T_tot (s)")
    for r in np.linspace(0.1, 1.0, 10):
        fleet = Fleet([c.scaled(r / r0) for c in computes], base.rates, base.comm, base.weights)
        s = brute_force(fleet, coeffs, sets)
        print(f"{r:4.1f}  {s.H:4d}  {s.K:5d}  {s.T_tot:9.2f}")

    # with free bit widths the optimizer also trades precision against H
    joint = FeasibleSets(H=tuple(range(1, 51)))
    for r in (0.1, 1.0):
        fleet = Fleet([c.scaled(r / r0) for c in computes], base.rates, base.comm, base.weights)
        s = optimize(fleet, coeffs, joint)
        print(f"joint bits, rho={r:.1f}: H={s.H} q_g={list(s.q_g)} q_w={list(s.q_w)}")


if __name__ == "__main__":
    main()
