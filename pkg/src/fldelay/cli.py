"""Command-line harness: ``fldelay {simulate,fit,optimize,compare,bound}``."""

from __future__ import annotations

import argparse
import itertools
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .bound import check_bound
from .config import ExperimentConfig, load_config
from .constants import ProbeConfig, estimate_constants
from .errors import FLDelayError, InfeasibleError
from .optimizer import (
    AdaHSchedule,
    baseline,
    brute_force,
    fit_coefficients,
    optimize,
)
from .training import ceil_iterations, train, with_quantization

OUT_ENV = "FLDELAY_OUT_DIR"


def _meta(cfg: ExperimentConfig, command: str, **extra):
    return {"fldelay": command, "config_sha256": cfg.hash, "seed": cfg.seed, **extra}


def _out_dir(cfg, args) -> Path:
    path = cfg.output_dir(args.out, os.environ.get(OUT_ENV))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _accuracy(task, w):
    if not hasattr(task, "predict"):
        return None
    return float(np.mean(task.predict(w) == task.labels))


def _run(task, devices, tc, h_schedule=None):
    if h_schedule is None and tc.K % tc.H:
        tc = replace(tc, K=ceil_iterations(tc.K, tc.H))
    return train(task, devices, tc, h_schedule=h_schedule)


def cmd_simulate(cfg: ExperimentConfig, args) -> list[Path]:
    task = cfg.task()
    devices = cfg.devices()
    tc = replace(cfg.training(), threads=args.threads)
    trace = _run(task, devices, tc)
    fleet = cfg.fleet()
    q_g = [d.q_g for d in devices]
    q_w = [d.q_w for d in devices]
    ends = fleet.cumulative_delay(trace.round_H, q_g, q_w)
    out = _out_dir(cfg, args)
    meta = _meta(cfg, "simulate")
    paths = [
        io.write_table(out / "trace.csv", io.TRACE_COLUMNS, io.trace_rows(trace, ends), meta),
        io.write_table(out / "delay.csv", io.DELAY_COLUMNS,
                       fleet.delay_report(tc.H, q_g, q_w, trace.iterations).rows(), meta),
        io.write_checkpoint(out / "model.txt", trace.final_model, cfg.seed, trace.rounds),
    ]
    print(f"simulated {trace.iterations} iterations in {trace.rounds} rounds; "
          f"final loss {trace.final_loss:.6g}; simulated delay {ends[-1]:.6g} s")
    return paths


def cmd_fit(cfg: ExperimentConfig, args) -> list[Path]:
    pattern = args.runs or cfg.section("coeffs").get("runs")
    if not pattern:
        raise FLDelayError("fit needs --runs GLOB or [coeffs].runs")
    spec = cfg.section("coeffs")
    if "epsilon" not in spec:
        raise FLDelayError("fit needs [coeffs].epsilon, the target the runs reached")
    fleet = cfg.fleet()
    halved = bool(spec.get("halved", True))
    runs = io.read_runs(pattern, fleet.size, fleet.dimension, halved)
    res = fit_coefficients(runs, float(spec["epsilon"]), weights=fleet.weights,
                           max_rel_residual=float(spec.get("max_rel_residual", 0.25)),
                           halved=halved)
    c = res.coeffs
    out = _out_dir(cfg, args)
    path = out / "coeffs.toml"
    lines = io.header_lines(_meta(cfg, "fit", runs=res.n_runs, rel_residual=res.rel_residual))
    lines += ["[coeffs]"]
    lines += [f"{k} = {io.format_value(getattr(c, k))}" for k in ("A1", "A0", "B0", "C0", "epsilon")]
    lines += [f"halved = {io.format_value(c.halved)}"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"fitted A1={c.A1:.6g} A0={c.A0:.6g} B0={c.B0:.6g} C0={c.C0:.6g} "
          f"from {res.n_runs} runs (relative residual {res.rel_residual:.3g})")
    return [path]


def _strategy_rows(fleet, s):
    rep = fleet.delay_report(s.H, s.q_g, s.q_w, s.K)
    for (i, cp, cm, tn, strag), qg, qw in zip(rep.rows(), s.q_g, s.q_w):
        yield (i, fleet.names[i], qg, qw, cp, cm, tn, strag)


def _strategy_text(s, fleet, oracle=None):
    lines = [f"strategy: {s.label}", f"H = {s.H}", f"K = {s.K}", f"rounds = {int(s.rounds)}",
             f"round delay (s) = {io.format_value(s.round_delay)}",
             f"predicted T_tot (s) = {io.format_value(s.T_tot)}",
             f"straggler = {fleet.names[s.straggler]}", "",
             "device  q_g  q_w  t_cp_s  t_cm_s  t_n_s"]
    for i, name, qg, qw, cp, cm, tn, strag in _strategy_rows(fleet, s):
        flag = "  *" if strag else ""
        lines.append(f"{name}  {qg}  {qw}  {cp:.6g}  {cm:.6g}  {tn:.6g}{flag}")
    lines += ["", "diagnostics:"]
    lines += [f"  {k} = {io.format_value(v)}" for k, v in sorted(s.diagnostics.items())]
    if oracle is not None:
        lines += ["", f"oracle (brute force) T_tot (s) = {io.format_value(oracle.T_tot)}",
                  f"oracle H = {oracle.H}, q_g = {list(oracle.q_g)}, q_w = {list(oracle.q_w)}",
                  f"gap to oracle = {io.format_value(s.T_tot / oracle.T_tot - 1.0)}"]
    return "\n".join(lines) + "\n"


STRATEGY_COLUMNS = ("device", "name", "q_g", "q_w", "t_cp_s", "t_cm_s", "t_n_s", "is_straggler")


def cmd_optimize(cfg: ExperimentConfig, args) -> list[Path]:
    fleet, coeffs, sets = cfg.fleet(), cfg.coeffs(), cfg.sets()
    method = cfg.section("output").get("method", "exact")
    s = optimize(fleet, coeffs, sets, method=method)
    oracle = brute_force(fleet, coeffs, sets, threads=args.threads) if args.oracle else None
    out = _out_dir(cfg, args)
    meta = _meta(cfg, "optimize", H=s.H, K=s.K, rounds=int(s.rounds), T_tot_s=s.T_tot)
    if oracle is not None:
        meta["oracle_T_tot_s"] = oracle.T_tot
    paths = [io.write_table(out / "strategy.csv", STRATEGY_COLUMNS, _strategy_rows(fleet, s), meta)]
    text = "\n".join(io.header_lines(_meta(cfg, "optimize"))) + "\n" + _strategy_text(s, fleet, oracle)
    (out / "strategy.txt").write_text(text, encoding="utf-8")
    paths.append(out / "strategy.txt")
    print(f"H={s.H} K={s.K} predicted T_tot={s.T_tot:.6g} s"
          + (f" (oracle {oracle.T_tot:.6g} s)" if oracle is not None else ""))
    return paths


COMPARE_COLUMNS = ("strategy", "H", "K", "predicted_T_tot_s", "simulated_T_tot_s", "delay_gap",
                   "final_loss", "final_accuracy", "delay_to_target_s")


def cmd_compare(cfg: ExperimentConfig, args) -> list[Path]:
    fleet, coeffs, sets = cfg.fleet(), cfg.coeffs(), cfg.sets()
    spec = cfg.section("output")
    kinds = spec.get("baselines", ["ifedavg", "fedpaq", "quwg_pro", "adah"])
    simulate = bool(spec.get("simulate", True))
    target = spec.get("loss_target")
    task = cfg.task()
    base_devices = cfg.devices()
    tc = replace(cfg.training(), threads=args.threads)
    method = spec.get("method", "exact")

    strategies = [optimize(fleet, coeffs, sets, method=method)]
    for kind in kinds:
        if kind != "adah":
            strategies.append(baseline(kind, fleet, coeffs, sets))
    rows = []
    for s in strategies:
        row = {"strategy": s.label, "H": s.H, "K": s.K, "predicted_T_tot_s": s.T_tot}
        if simulate:
            devices = with_quantization(base_devices, q_w=s.q_w, q_g=s.q_g)
            trace = _run(task, devices, replace(tc, H=s.H, K=s.K))
            _fill_simulated(row, trace, fleet.cumulative_delay(trace.round_H, s.q_g, s.q_w),
                            task, target)
        rows.append(row)
    if "adah" in kinds:
        ref = baseline("ifedavg", fleet, coeffs, sets)
        sched = AdaHSchedule(H0=min(30, max(sets.H)))
        row = {"strategy": "adah", "H": sched.H0, "K": ref.K}
        if simulate:
            trace = _run(task, with_quantization(base_devices, q_w=32, q_g=32),
                         replace(tc, H=1, K=ref.K), h_schedule=sched)
            ends = fleet.cumulative_delay(trace.round_H, [32] * fleet.size, [32] * fleet.size)
            _fill_simulated(row, trace, ends, task, target)
        rows.append(row)
    out = _out_dir(cfg, args)
    path = io.write_table(out / "compare.csv", COMPARE_COLUMNS, rows, _meta(cfg, "compare"))
    for r in rows:
        pred = r.get("predicted_T_tot_s")
        sim = r.get("simulated_T_tot_s")
        print(f"{r['strategy']:>10}: predicted {'-' if pred is None else f'{pred:.6g}'} s"
              f", simulated {'-' if sim is None else f'{sim:.6g}'} s")
    return [path]


def _fill_simulated(row, trace, ends, task, target):
    row["simulated_T_tot_s"] = float(ends[-1])
    if row.get("predicted_T_tot_s"):
        row["delay_gap"] = float(ends[-1]) / row["predicted_T_tot_s"] - 1.0
    row["final_loss"] = trace.final_loss
    row["final_accuracy"] = _accuracy(task, trace.final_model)
    if target is not None:
        r = trace.rounds_to_loss(float(target))
        starts = np.concatenate([[0.0], ends])
        row["delay_to_target_s"] = None if r is None else float(starts[r])


def cmd_bound(cfg: ExperimentConfig, args) -> list[Path]:
    spec = cfg.section("bound")
    task = cfg.task()
    devices = cfg.devices()
    tc = cfg.training()
    M = int(spec.get("batch_size", tc.batch_size))
    K = int(spec.get("K", tc.K))
    est = estimate_constants(task, devices, probe=ProbeConfig(batch_size=M, seed=cfg.seed))
    consts = est.problem(task.dim, M, [d.weight for d in devices])
    rows = []
    grid = itertools.product(spec.get("H", [tc.H]), spec.get("q_g", [32]), spec.get("q_w", [32]))
    for H, qg, qw in grid:
        run_cfg = replace(tc, H=int(H), K=K, batch_size=M, schedule="theorem1", threads=args.threads)
        trace = _run(task, with_quantization(devices, q_w=int(qw), q_g=int(qg)), run_cfg)
        rep = check_bound(trace, consts, int(H), int(qg), int(qw))
        rows.append({**rep.row(), "q_g": int(qg), "q_w": int(qw)})
    out = _out_dir(cfg, args)
    meta = _meta(cfg, "bound", L=consts.L, sigma2=consts.sigma2, tau2=consts.tau2, G2=consts.G2,
                 delta_F=consts.delta_F)
    cols = ("q_g", "q_w") + io.BOUND_COLUMNS
    path = io.write_table(out / "bound.csv", cols, rows, meta)
    held = sum(r["holds"] for r in rows)
    print(f"bound holds in {held} of {len(rows)} configurations")
    return [path]


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "optimize": cmd_optimize,
            "compare": cmd_compare, "bound": cmd_bound}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fldelay", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and [output].dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not change")
        p.add_argument("--oracle", action="store_true", help="cross-check with brute force")
        if name == "fit":
            p.add_argument("--runs", help="glob of run CSVs (columns H, K, q_g, q_w)")
    return parser


def _one_line(exc: BaseException) -> str:
    msg = " ".join(str(exc).split())
    if isinstance(exc, InfeasibleError) and exc.constraint:
        msg += f" [binding constraint: {exc.constraint}]"
    return f"fldelay: error: {type(exc).__name__}: {msg}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("fldelay: error: InvalidArgumentError: --threads must be positive", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = load_config(args.config, args.seed)
            COMMANDS[args.command](cfg, args)
        for w in caught:
            print(f"fldelay: warning: {w.message}", file=sys.stderr)
    except (FLDelayError, ValueError, OSError, KeyError, TypeError) as exc:
        print(_one_line(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
