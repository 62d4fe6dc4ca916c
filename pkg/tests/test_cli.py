import textwrap

import pytest

from fldelay import io
from fldelay.cli import main

CONFIG = textwrap.dedent("""
    seed = 5

    [task]
    kind = "quadratic"
    n_samples = 200
    dim = 4

    [fleet]
    dimension = 2000
    [[fleet.devices]]
    beta1 = 2e-4
    beta0 = 5e-3
    rate = 2e5

    [training]
    H = {H}
    K = {K}
    batch_size = 8

    [sets]
    H = {{ min = 1, max = 20 }}
    q_g = [4, 8, 32]
    q_w = [8, 32]

    [coeffs]
    A1 = 20.0
    A0 = 0.2
    B0 = 0.001
    C0 = 0.05
    epsilon = {eps}
""")


@pytest.fixture
def config(tmp_path):
    def make(H=2, K=20, eps=0.3, extra=""):
        p = tmp_path / f"cfg-{H}-{K}-{eps}.toml"
        p.write_text(CONFIG.format(H=H, K=K, eps=eps) + extra)
        return str(p)
    return make


def test_simulate_single_device(config, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["simulate", "--config", config(), "--out", str(out)]) == 0
    rows, meta = io.read_table(out / "trace.csv")
    assert len(rows) == 20 and meta["seed"] == "5" and len(meta["config_sha256"]) == 64
    delay, _ = io.read_table(out / "delay.csv")
    assert delay[0]["is_straggler"] == "true"
    assert (out / "model.txt").read_text().startswith("4 5 10\n")


def test_simulate_twice_identical(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", config(), "--out", str(a)])
    main(["simulate", "--config", config(), "--out", str(b), "--threads", "3"])
    for name in ("trace.csv", "delay.csv", "model.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_non_multiple_warns(config, tmp_path, capsys):
    out = tmp_path / "w"
    assert main(["simulate", "--config", config(H=3, K=20), "--out", str(out)]) == 0
    assert "warning" in capsys.readouterr().err
    rows, _ = io.read_table(out / "trace.csv")
    assert len(rows) == 21


def test_seed_override_changes_output(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", config(), "--out", str(a)])
    main(["simulate", "--config", config(), "--out", str(b), "--seed", "6"])
    assert (a / "trace.csv").read_bytes() != (b / "trace.csv").read_bytes()


def test_env_output_dir(config, tmp_path, monkeypatch):
    monkeypatch.setenv("FLDELAY_OUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "--config", config()]) == 0
    assert (tmp_path / "env" / "trace.csv").exists()


def test_optimize_with_oracle(config, tmp_path, capsys):
    out = tmp_path / "opt"
    assert main(["optimize", "--config", config(), "--out", str(out), "--oracle"]) == 0
    _, meta = io.read_table(out / "strategy.csv")
    assert float(meta["T_tot_s"]) <= float(meta["oracle_T_tot_s"]) * (1 + 1e-12)
    assert "gap to oracle" in (out / "strategy.txt").read_text()


def test_optimize_singleton_sets_echo(config, tmp_path):
    path = config()
    text = open(path).read().replace("H = { min = 1, max = 20 }", "H = [6]")
    text = text.replace("q_g = [4, 8, 32]", "q_g = [8]").replace("q_w = [8, 32]", "q_w = [32]")
    open(path, "w").write(text)
    out = tmp_path / "one"
    assert main(["optimize", "--config", path, "--out", str(out)]) == 0
    rows, meta = io.read_table(out / "strategy.csv")
    assert meta["H"] == "6" and rows[0]["q_g"] == "8" and rows[0]["q_w"] == "32"


def test_optimize_infeasible_exit(config, tmp_path, capsys):
    code = main(["optimize", "--config", config(eps=1e-12), "--out", str(tmp_path / "x")])
    err = capsys.readouterr().err.strip()
    assert code == 1
    assert err.count("\n") == 0 and "binding constraint: convergence" in err


def test_missing_config(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 1
    assert capsys.readouterr().err.startswith("fldelay: error: ConfigurationError")


def test_bad_threads(config, capsys):
    assert main(["simulate", "--config", config(), "--threads", "0"]) == 2


def test_fit_round_trip(config, tmp_path):
    import numpy as np

    from fldelay.optimizer import ConvergenceCoeffs, synthetic_runs
    from fldelay.optimizer.model import deltas

    true = ConvergenceCoeffs(A1=20.0, A0=0.2, B0=0.001, C0=0.05, epsilon=0.3)
    rows = []
    for H in (1, 5, 20):
        for g in (2, 4, 8, 32):
            for w in (4, 5, 8, 32):
                run = synthetic_runs(true, [(H, deltas(g, 2000), deltas(w, 2000))], np.ones(1))
                rows.extend((H, r.K, g, w) for r in run)
    io.write_table(tmp_path / "runs.csv", ("H", "K", "q_g", "q_w"), rows)
    out = tmp_path / "fit"
    assert main(["fit", "--config", config(), "--runs", str(tmp_path / "runs.csv"), "--out", str(out)]) == 0
    text = (out / "coeffs.toml").read_text()
    vals = dict(line.split(" = ") for line in text.splitlines() if " = " in line)
    assert float(vals["A1"]) == pytest.approx(20.0, rel=1e-6)
    assert float(vals["C0"]) == pytest.approx(0.05, rel=1e-6)


def test_fit_degenerate(config, tmp_path, capsys):
    io.write_table(tmp_path / "r.csv", ("H", "K", "q_g", "q_w"), [(h, 100 + h, 32, 32) for h in (1, 2, 3)])
    code = main(["fit", "--config", config(), "--runs", str(tmp_path / "r.csv"), "--out", str(tmp_path)])
    assert code == 1 and "NeedMoreSamplesError" in capsys.readouterr().err


def test_compare_and_bound(config, tmp_path):
    extra = textwrap.dedent("""
        [output]
        baselines = ["ifedavg", "fedpaq", "adah"]
        loss_target = 1.0

        [bound]
        K = 40
        H = [1, 2]
        q_g = [32]
        q_w = [32]
    """)
    path = config(extra=extra)
    out = tmp_path / "cmp"
    assert main(["compare", "--config", path, "--out", str(out)]) == 0
    rows, _ = io.read_table(out / "compare.csv")
    pred = {r["strategy"]: r["predicted_T_tot_s"] for r in rows}
    assert set(pred) == {"optimized", "ifedavg", "fedpaq", "adah"}
    assert pred["adah"] == ""
    assert float(pred["optimized"]) <= min(float(pred[k]) for k in ("ifedavg", "fedpaq"))
    assert all(r["simulated_T_tot_s"] for r in rows)
    assert main(["bound", "--config", path, "--out", str(out)]) == 0
    rows, meta = io.read_table(out / "bound.csv")
    assert len(rows) == 2 and "L" in meta
