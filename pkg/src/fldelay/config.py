"""Experiment configuration: one TOML file with [task], [fleet], [training], [sets], [coeffs], [output].

A minimal file::

    seed = 7

    [task]
    kind = "logistic"          # quadratic | logistic | mlp, plus generator arguments
    n_samples = 2000

    [fleet]
    partition = "iid"          # or "non-iid" with size_std and labels_per_device
    dimension = 270000         # payload size for the delay model; defaults to the task's
    [[fleet.devices]]
    preset = "xavier/resnet20" # or beta1/beta0, or t_core/theta_mem/f_mem/t0/m
    rate = 88e6                # or share/bandwidth/tx_power/noise_power/fading/gain
    count = 4

    [training]
    H = 5
    K = 500

    [coeffs]
    A1 = 32.3
    A0 = 0.35
    B0 = 0.001
    C0 = 0.06
    epsilon = 0.4
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path


if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .delay import ChannelProfile, CommCoeffs, ComputeProfile, preset_profile
from .errors import ConfigurationError
from .optimizer.model import ConvergenceCoeffs, FeasibleSets, Fleet
from .partition import partition_data
from .tasks import make_task
from .training import TrainingConfig, make_devices

SECTIONS = ("task", "fleet", "training", "sets", "coeffs", "output", "bound")
COMPUTE_KEYS = ("t_core", "theta_mem", "f_mem", "t0", "m", "mem_slope", "mem_intercept")
CHANNEL_KEYS = ("share", "bandwidth", "tx_power", "noise_power", "fading", "gain")
TRAINING_KEYS = ("H", "K", "batch_size", "lr", "decay", "schedule", "epsilon", "early_stop", "sync")


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int
    path: Path | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        """SHA-256 of the canonical JSON form of the settings, seed included."""
        blob = json.dumps({**self.raw, "seed": self.seed}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    # builders -------------------------------------------------------------

    def task(self):
        if "task" not in self._cache:
            spec = self.section("task")
            kind = spec.pop("kind", "logistic")
            spec.setdefault("seed", self.seed)
            try:
                self._cache["task"] = make_task(kind, **spec)
            except TypeError as exc:
                raise ConfigurationError(f"[task]: {exc}") from exc
        return self._cache["task"]

    def device_entries(self) -> list[dict]:
        entries = self.section("fleet").get("devices", [])
        if not entries:
            raise ConfigurationError("[fleet] needs at least one [[fleet.devices]] entry")
        out = []
        for e in entries:
            e = dict(e)
            count = int(e.pop("count", 1))
            if count < 1:
                raise ConfigurationError("device count must be positive")
            out.extend(dict(e) for _ in range(count))
        return out

    def partition(self):
        if "partition" in self._cache:
            return self._cache["partition"]
        fleet = self.section("fleet")
        n = len(self.device_entries())
        self._cache["partition"] = partition_data(
            self.task().labels, n, mode=fleet.get("partition", "iid"),
            size_std=float(fleet.get("size_std", 0.0)),
            labels_per_device=fleet.get("labels_per_device"),
            mean_size=fleet.get("mean_size"), seed=self.seed,
        )
        return self._cache["partition"]

    def devices(self, q_w=None, q_g=None):
        entries = self.device_entries()
        qw = [int(e.get("q_w", 32)) for e in entries] if q_w is None else q_w
        qg = [int(e.get("q_g", 32)) for e in entries] if q_g is None else q_g
        return make_devices(self.partition(), q_w=qw, q_g=qg)

    def training(self) -> TrainingConfig:
        spec = self.section("training")
        unknown = set(spec) - set(TRAINING_KEYS) - {"q_w", "q_g"}
        if unknown:
            raise ConfigurationError(f"unknown [training] keys: {sorted(unknown)}")
        kwargs = {k: spec[k] for k in TRAINING_KEYS if k in spec}
        return TrainingConfig(seed=self.seed, **kwargs)

    def comm(self) -> CommCoeffs:
        fleet = self.section("fleet")
        d = int(fleet.get("dimension", self.task().dim))
        return CommCoeffs(dimension=d, s1=float(fleet.get("s1", 1.0)), s0=float(fleet.get("s0", 0.0)))

    def fleet(self, weights=None) -> Fleet:
        entries = self.device_entries()
        computes = [_compute_of(e) for e in entries]
        links = [_link_of(e, self.seed + i) for i, e in enumerate(entries)]
        groups = None
        if all("group" in e for e in entries):
            groups = [int(e["group"]) for e in entries]
        if weights is None:
            weights = self.partition().weights
        names = [str(e.get("name", f"device{i}")) for i, e in enumerate(entries)]
        mc = int(self.section("fleet").get("mc_samples", 100_000))
        return Fleet.from_profiles(computes, links, self.comm(), weights=weights, groups=groups,
                                   mc_samples=mc, names=names)

    def sets(self) -> FeasibleSets:
        spec = self.section("sets")
        defaults = FeasibleSets()
        return FeasibleSets(
            H=_int_list(spec.get("H", defaults.H)),
            q_g=_int_list(spec.get("q_g", defaults.q_g)),
            q_w=_int_list(spec.get("q_w", defaults.q_w)),
        )

    def coeffs(self) -> ConvergenceCoeffs:
        spec = self.section("coeffs")
        missing = [k for k in ("A1", "A0", "B0", "C0", "epsilon") if k not in spec]
        if missing:
            raise ConfigurationError(f"[coeffs] is missing {missing}")
        return ConvergenceCoeffs(float(spec["A1"]), float(spec["A0"]), float(spec["B0"]),
                                 float(spec["C0"]), float(spec["epsilon"]),
                                 halved=bool(spec.get("halved", True)))

    def output_dir(self, override=None, env=None) -> Path:
        if override:
            return Path(override)
        if env:
            return Path(env)
        return Path(self.section("output").get("dir", "fldelay-out"))


def _int_list(value):
    if isinstance(value, dict):
        lo, hi = int(value["min"]), int(value["max"])
        return tuple(range(lo, hi + 1))
    return tuple(int(v) for v in value)


def _compute_of(e: dict) -> ComputeProfile:
    if "preset" in e:
        device, _, model = str(e["preset"]).partition("/")
        prof = preset_profile(device, model)
    elif "beta1" in e or "beta0" in e:
        prof = ComputeProfile.from_betas(float(e["beta1"]), float(e["beta0"]))
    else:
        kwargs = {k: float(e[k]) for k in COMPUTE_KEYS if k in e}
        if not kwargs:
            raise ConfigurationError("device entry needs preset, beta1/beta0 or compute fields")
        prof = ComputeProfile(**kwargs)
    slow = float(e.get("slowdown", 1.0))
    return prof if slow == 1.0 else prof.scaled(slow)


def _link_of(e: dict, seed: int):
    if "rate" in e:
        return ChannelProfile(measured_rate=float(e["rate"]))
    kwargs = {k: e[k] for k in CHANNEL_KEYS if k in e}
    if not kwargs:
        raise ConfigurationError("device entry needs rate or channel fields")
    return ChannelProfile(seed=int(e.get("channel_seed", seed)), **kwargs)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Read and validate a config file; ``seed`` overrides the file's."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw, seed=seed, path=path)


def config_from_dict(raw: dict, seed: int | None = None, path=None) -> ExperimentConfig:
    raw = dict(raw)
    file_seed = raw.pop("seed", None)
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    if seed is None:
        seed = file_seed
    if seed is None:
        raise ConfigurationError("a seed is required (top-level 'seed' or --seed)")
    return ExperimentConfig(raw=raw, seed=int(seed), path=None if path is None else Path(path))
