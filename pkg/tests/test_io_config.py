import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fldelay import io
from fldelay.config import config_from_dict, load_config
from fldelay.errors import ConfigurationError, InvalidArgumentError
from fldelay.training import TrainingConfig, train

BASE = {
    "seed": 3,
    "task": {"kind": "quadratic", "n_samples": 200, "dim": 4},
    "fleet": {"devices": [{"beta1": 1e-4, "beta0": 1e-3, "rate": 1e5, "count": 2}]},
    "training": {"H": 2, "K": 10},
    "coeffs": {"A1": 10.0, "A0": 0.1, "B0": 0.001, "C0": 0.05, "epsilon": 0.5},
}


def test_format_value():
    assert io.format_value(True) == "true"
    assert io.format_value(np.int64(4)) == "4"
    assert io.format_value(0.1) == "0.1"
    assert io.format_value(float("nan")) == ""
    assert io.format_value(None) == ""


@given(st.floats(allow_nan=False))
def test_float_cells_round_trip(x):
    assert float(io.format_value(x)) == x


def test_table_round_trip(tmp_path):
    p = io.write_table(tmp_path / "t.csv", ("a", "b"), [(1, 0.5), {"a": 2, "b": None}], {"seed": 7})
    rows, meta = io.read_table(p)
    assert meta == {"seed": "7"}
    assert rows == [{"a": "1", "b": "0.5"}, {"a": "2", "b": ""}]
    raw = p.read_bytes()
    assert b"\r\n" not in raw and raw.startswith(b"# seed=7\n")


def test_checkpoint_round_trip(tmp_path):
    w = np.random.default_rng(0).normal(size=9)
    p = io.write_checkpoint(tmp_path / "m.txt", w, 5, 12)
    got, seed, r = io.read_checkpoint(p)
    assert np.array_equal(got, w) and (seed, r) == (5, 12)
    p.write_text("3 1 1\n1.0\n")
    with pytest.raises(InvalidArgumentError):
        io.read_checkpoint(p)


def test_trace_rows_use_round_start_clock():
    from fldelay.partition import partition_data
    from fldelay.tasks import make_quadratic
    from fldelay.training import make_devices

    task = make_quadratic(n_samples=100, dim=2)
    tr = train(task, make_devices(partition_data(task.labels, 2)), TrainingConfig(H=2, K=6))
    rows = list(io.trace_rows(tr, [1.0, 2.0, 3.0]))
    assert [r[0] for r in rows] == [0, 0, 1, 1, 2, 2]
    assert [r[4] for r in rows] == [0.0, 0.0, 1.0, 1.0, 2.0, 2.0]


def test_read_runs(tmp_path):
    io.write_table(tmp_path / "a.csv", ("H", "K", "q_g", "q_w"), [(1, 100, 8, 32), (5, 200, "4;8", "16;32")])
    runs = io.read_runs(str(tmp_path / "*.csv"), 2, 1000)
    assert len(runs) == 2 and runs[1].H == 5.0 and runs[1].delta_g[0] > runs[1].delta_g[1]
    io.write_table(tmp_path / "b.csv", ("H", "K"), [(1, 2)])
    with pytest.raises(ConfigurationError):
        io.read_runs(str(tmp_path / "*.csv"), 2, 1000)
    with pytest.raises(ConfigurationError):
        io.read_runs(str(tmp_path / "none*.csv"), 2, 1000)


def test_config_builders():
    cfg = config_from_dict(BASE)
    assert cfg.seed == 3
    assert len(cfg.device_entries()) == 2
    assert cfg.fleet().size == 2
    assert cfg.training().H == 2 and cfg.training().seed == 3
    assert cfg.sets().H[-1] == 50
    assert cfg.coeffs().A1 == 10.0
    assert cfg.comm().dimension == 4


def test_seed_override_and_required():
    assert config_from_dict(BASE, seed=9).seed == 9
    raw = {k: v for k, v in BASE.items() if k != "seed"}
    with pytest.raises(ConfigurationError):
        config_from_dict(raw)


def test_hash_depends_on_seed_and_content():
    a, b = config_from_dict(BASE), config_from_dict(BASE, seed=4)
    assert a.hash != b.hash
    assert a.hash == config_from_dict(dict(BASE)).hash


@pytest.mark.parametrize("patch", [
    {"extra": {}},
    {"training": {"H": 2, "K": 10, "momentum": 0.9}},
    {"fleet": {"devices": []}},
    {"fleet": {"devices": [{"rate": 1.0}]}},
    {"fleet": {"devices": [{"beta1": 1.0, "beta0": 1.0}]}},
    {"coeffs": {"A1": 1.0}},
    {"task": {"kind": "quadratic", "width": 3}},
])
def test_config_errors(patch):
    with pytest.raises(ConfigurationError):
        cfg = config_from_dict({**BASE, **patch})
        cfg.training(), cfg.fleet(), cfg.coeffs(), cfg.task()


def test_set_ranges_and_output_dir():
    cfg = config_from_dict({**BASE, "sets": {"H": {"min": 2, "max": 4}, "q_g": [8, 4]},
                            "output": {"dir": "x"}})
    assert cfg.sets().H == (2, 3, 4) and cfg.sets().q_g == (4, 8)
    assert str(cfg.output_dir()) == "x"
    assert str(cfg.output_dir(env="env")) == "env"
    assert str(cfg.output_dir("cli", env="env")) == "cli"


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1")
    with pytest.raises(ConfigurationError):
        load_config(bad)


def test_quickstart_config_loads():
    from pathlib import Path

    cfg = load_config(Path(__file__).parents[1] / "configs" / "quickstart.toml")
    fleet = cfg.fleet()
    assert fleet.size == 4 and fleet.names[0] == "xavier-a"
    assert cfg.sets().q_g == (2, 4, 8, 16, 32)
