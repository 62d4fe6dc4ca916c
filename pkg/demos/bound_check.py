"""Train quantized local SGD on a quadratic and compare it with the convergence bound.

The constants are probe estimates, so a bound that holds here is a
necessary-condition check rather than a proof.

Run from the repository root:  python demos/bound_check.py
"""

import itertools

from fldelay.bound import check_bound
from fldelay.constants import ProbeConfig, estimate_constants
from fldelay.partition import partition_data
from fldelay.tasks import make_quadratic
from fldelay.training import TrainingConfig, make_devices, train, with_quantization


def main():
    task = make_quadratic(n_samples=800, dim=10, reg=0.1, seed=0)
    devices = make_devices(partition_data(task.labels, 4, mode="iid", seed=0))
    M, K = 8, 2000
    est = estimate_constants(task, devices, probe=ProbeConfig(batch_size=M, seed=0))
    consts = est.problem(task.dim, M, [d.weight for d in devices])
    print(f"L={consts.L:.3g} sigma^2={consts.sigma2:.3g} tau^2={consts.tau2:.3g} G^2={consts.G2:.3g}")

    print("  H  q_g  q_w      lhs      rhs   floor")
    for H, qg, qw in itertools.product((1, 5, 20), (4, 32), (16, 32)):
        trace = train(task, with_quantization(devices, q_w=qw, q_g=qg),
                      TrainingConfig(H=H, K=K, batch_size=M, schedule="theorem1", seed=0))
        rep = check_bound(trace, consts, H, qg, qw)
        print(f"{H:3d} {qg:4d} {qw:4d} {rep.lhs:8.4f} {rep.rhs:8.3f} {rep.terms.quantization_floor:7.4f}")


if __name__ == "__main__":
    main()
