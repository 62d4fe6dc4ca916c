"""File formats: CSV tables with a provenance header, checkpoints and run tables."""

from __future__ import annotations

import csv
import glob
import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError
from .optimizer.fitting import Run
from .quantization import delta_coefficient


def format_value(v) -> str:
    """Deterministic text for a cell: shortest round-trip repr for floats."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    if v is None:
        return ""
    return str(v)


def header_lines(meta: dict) -> list[str]:
    return [f"# {k}={format_value(v)}" for k, v in meta.items()]


def write_table(path, columns, rows, meta: dict | None = None):
    """UTF-8 CSV with ``#`` header lines, Unix newlines and ``.`` decimals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines(meta or {}):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c) for c in columns]
            w.writerow([format_value(v) for v in row])
    return path


def read_table(path):
    """Rows of a table written by :func:`write_table` as dicts of strings, plus the header dict."""
    meta, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val
            elif line.strip():
                lines.append(line)
    return list(csv.DictReader(lines)), meta


TRACE_COLUMNS = ("round", "iteration", "loss", "grad_norm_sq", "cumulative_sim_delay_s")
DELAY_COLUMNS = ("device", "t_cp_s", "t_cm_s", "t_n_s", "is_straggler")
BOUND_COLUMNS = ("K", "H", "lhs", "rhs", "term1", "term2", "term3", "term4", "holds",
                 "validity_warnings")


def trace_rows(trace, round_end_delays):
    """One row per iteration; the delay column is the wall clock when that iteration's round began."""
    starts = np.concatenate([[0.0], np.asarray(round_end_delays, dtype=np.float64)])
    for k, (loss, g2, r) in enumerate(zip(trace.losses, trace.grad_norms_sq, trace.iteration_round)):
        yield (int(r), k, float(loss), float(g2), float(starts[r]))


def write_checkpoint(path, w, seed: int, round_idx: int):
    """Text vector: a header line ``d seed round`` then one value per line."""
    w = np.asarray(w, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{w.size} {int(seed)} {int(round_idx)}\n")
        for v in w:
            fh.write(repr(float(v)) + "\n")
    return path


def read_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 3:
            raise InvalidArgumentError(f"{path}: header must be 'd seed round'")
        d, seed, round_idx = (int(x) for x in head)
        w = np.array([float(line) for line in fh if line.strip()])
    if w.size != d:
        raise InvalidArgumentError(f"{path}: header says d={d} but found {w.size} values")
    return w, seed, round_idx


def _bits(cell: str, n: int):
    parts = [int(p) for p in str(cell).split(";") if p.strip()]
    if len(parts) == 1:
        return parts * n
    if len(parts) != n:
        raise ConfigurationError(f"expected 1 or {n} bit widths, got {cell!r}")
    return parts


def read_runs(pattern: str, n_devices: int, dimension: int, halved: bool = True) -> list[Run]:
    """Runs from every CSV matching ``pattern``.

    Columns ``H``, ``K``, ``q_g``, ``q_w``; a bit-width cell holds one value
    for all devices or ``;``-separated per-device values.
    """
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise ConfigurationError(f"no run files match {pattern!r}")
    runs = []
    for p in paths:
        rows, _ = read_table(p)
        for row in rows:
            try:
                qg = _bits(row["q_g"], n_devices)
                qw = _bits(row["q_w"], n_devices)
                runs.append(Run(H=float(row["H"]), K=float(row["K"]),
                                delta_g=tuple(delta_coefficient(q, dimension, halved) for q in qg),
                                delta_w=tuple(delta_coefficient(q, dimension, halved) for q in qw)))
            except KeyError as exc:
                raise ConfigurationError(f"{p}: missing column {exc}") from exc
    return runs
