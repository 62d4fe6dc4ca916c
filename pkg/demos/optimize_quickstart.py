"""Pick H and bit widths for the quickstart fleet and compare with the baselines.

Run from the repository root:  python demos/optimize_quickstart.py
"""

from pathlib import Path

from fldelay.config import load_config
from fldelay.optimizer import baseline, optimize

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "quickstart.toml"


def show(s):
    print(f"{s.label:>10}: H={s.H:<3} K={s.K:<6} q_g={list(s.q_g)} q_w={list(s.q_w)} "
          f"T_tot={s.T_tot:8.2f} s  straggler={s.straggler}")


def main():
    cfg = load_config(CONFIG)
    fleet, coeffs, sets = cfg.fleet(), cfg.coeffs(), cfg.sets()

    # rho < 1 means a full-precision local step is cheaper than one full-precision upload
    for name, r in zip(fleet.names, fleet.rho()):
        print(f"{name:>12}: rho = {r:.3f}")
    print()

    best = optimize(fleet, coeffs, sets)
    show(best)
    for kind in ("ifedavg", "fedpaq", "quwg_pro"):
        show(baseline(kind, fleet, coeffs, sets))

    # the same strategy, broken down per device for one round
    report = fleet.delay_report(best.H, best.q_g, best.q_w, best.K)
    print()
    print(f"{'device':>12}  compute (s)  upload (s)  round (s)")
    for name, (_, cp, cm, t, slowest) in zip(fleet.names, report.rows()):
        print(f"{name:>12}  {cp:11.4f}  {cm:10.4f}  {t:9.4f}{'  <- straggler' if slowest else ''}")


if __name__ == "__main__":
    main()
