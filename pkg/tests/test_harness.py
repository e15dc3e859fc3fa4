import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isacbf import harness
from isacbf.cli import main
from isacbf.config import ConfigError, dump_config, load_config, parse_pairs


def tiny(tmp_path, **kw):
    base = dict(out_dir=str(tmp_path), episodes=4, episode_len=8, d1=120, d2=150, ae_epochs=2,
                recon_epochs=1, angle_samples=24)
    base.update(kw)
    return load_config(None, [f"{k}={v}" for k, v in base.items()])


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(ln for ln in fh if not ln.startswith("#")))


# -- config ------------------------------------------------------------------


def test_unknown_key_is_error():
    with pytest.raises(ConfigError, match="unknown"):
        parse_pairs({"n_antennas": "4"})


def test_bad_value_is_error():
    with pytest.raises(ConfigError):
        parse_pairs({"n_tx": "four"})
    with pytest.raises(ConfigError):
        parse_pairs({"case": "7"})


def test_db_conversions_at_load():
    cfg = parse_pairs({"p_max_dbw": "20", "noise_dbm": "-90"})
    assert cfg.system.p_max == pytest.approx(100.0)
    assert cfg.system.noise_comm == pytest.approx(1e-12)
    assert cfg.system.noise_radar == cfg.system.noise_comm


def test_config_file_with_comments(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("# header\nn_users = 1  # one user\n\ncase=0\n")
    cfg = load_config(f, ["seed=5"])
    assert (cfg.system.n_users, cfg.case, cfg.seed) == (1, 0, 5)
    f.write_text("n_users\n")
    with pytest.raises(ConfigError):
        load_config(f)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 40), st.floats(-100, -40), st.integers(0, 3), st.integers(0, 10**6))
def test_dump_roundtrip_preserves_hash(p_dbw, noise_dbm, case, seed):
    cfg = parse_pairs({"p_max_dbw": repr(p_dbw), "noise_dbm": repr(noise_dbm), "case": str(case), "seed": str(seed)})
    pairs = {}
    for line in dump_config(cfg).splitlines():
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    assert parse_pairs(pairs).config_hash() == cfg.config_hash()


def test_hash_ignores_out_dir():
    a = parse_pairs({"out_dir": "a"})
    assert a.config_hash() == parse_pairs({"out_dir": "b"}).config_hash()
    assert a.config_hash() != parse_pairs({"seed": "1"}).config_hash()


# -- run_case ----------------------------------------------------------------


def test_case0_runs_without_pretrained_nets(tmp_path):
    cfg = tiny(tmp_path, case=0)
    out = harness.run_case(cfg)
    names = {p.name for p in (tmp_path / "pretrained").iterdir()}
    assert all(n.startswith("csi-") for n in names)
    s = harness.load_summary(out)
    assert s["episodes"] == 4 and s["config_hash"] == cfg.config_hash()
    log = harness.read_log(out / "log.csv")
    assert len(log["episode"]) == 4
    assert s["final100_mean"] == pytest.approx(np.mean(log["reward_sum"]))
    assert open(out / "log.csv").readline().strip() == f"# config_hash={cfg.config_hash()}"


def test_run_case_deterministic(tmp_path):
    a = harness.run_case(tiny(tmp_path / "a", case=3))
    b = harness.run_case(tiny(tmp_path / "b", case=3))
    assert (a / "summary.json").read_text() == (b / "summary.json").read_text()
    la, lb = harness.read_log(a / "log.csv"), harness.read_log(b / "log.csv")
    for col in la:
        if col != "wallclock_s":
            np.testing.assert_array_equal(la[col], lb[col])


def test_pretraining_is_cached(tmp_path):
    cfg = tiny(tmp_path, case=3)
    harness.run_case(cfg)
    ckpts = sorted(p.stat().st_mtime_ns for p in (tmp_path / "pretrained").rglob("*.ckpt"))
    harness.run_case(cfg.replace(episodes=2))
    assert sorted(p.stat().st_mtime_ns for p in (tmp_path / "pretrained").rglob("*.ckpt")) == ckpts


def test_zero_episodes_summary(tmp_path):
    out = harness.run_case(tiny(tmp_path, case=0, episodes=0))
    s = harness.load_summary(out)
    assert s["episodes"] == 0 and s["final100_mean"] is None
    assert read_rows(out / "log.csv") == [list(harness.LOG_COLUMNS)]


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        harness.run_case(tiny(blocker / "sub", case=0))


# -- sweep -------------------------------------------------------------------


def test_sweep_feature_size(tmp_path):
    base = tiny(tmp_path, case=1, episodes=2)
    out = harness.sweep(harness.SweepSpec("feature_size", [4, 8], [0]), base)
    rows = read_rows(out)
    assert rows[0] == list(harness.SWEEP_COLUMNS)
    assert sorted({(r[1], r[2]) for r in rows[1:]}) == [("4", "0"), ("8", "0")]
    assert len(rows) == 1 + 2 * 2
    assert len(list(tmp_path.glob("case1_seed0_*"))) == 2


@pytest.mark.parametrize("kw", [
    dict(param="feature_size", values=[4], seeds=[]),
    dict(param="feature_size", values=[], seeds=[0]),
    dict(param="feature_size", values=[0], seeds=[0]),
    dict(param="episodes", values=[4], seeds=[0]),
])
def test_sweep_spec_errors(kw):
    with pytest.raises(ConfigError):
        harness.SweepSpec(**kw)


def test_angle_sweep_spec_counts():
    spec = harness.SweepSpec("angle_samples", [45, 90, 180, 360, 720, 1440], [0])
    assert len(spec.values) * len(spec.seeds) == 6


# -- evaluate ----------------------------------------------------------------


@pytest.fixture
def trained_run(tmp_path):
    cfg = tiny(tmp_path, case=2)
    return cfg, harness.run_case(cfg)


def test_evaluate_empty(trained_run):
    cfg, out = trained_run
    rep = harness.evaluate(out, n_scenarios=0)
    assert rep["n_scenarios"] == 0 and "mean_sum_rate" not in rep


def test_evaluate_repeatable(trained_run):
    cfg, out = trained_run
    a = harness.evaluate(out, cfg, n_scenarios=15, seed=3)
    b = harness.evaluate(out, cfg, n_scenarios=15, seed=3)
    assert a == b
    assert 0 <= a["sensing_feasible_rate"] <= 1
    assert a["max_constraint_violation"] <= 1e-9
    assert len(a["comm_violation_rate"]) == cfg.system.n_users


def test_evaluate_random_policy(trained_run):
    cfg, out = trained_run
    rep = harness.evaluate(out, n_scenarios=10, policy="random")
    assert rep["policy"] == "random" and np.isfinite(rep["mean_reward"])


def test_evaluate_refuses_hash_mismatch(trained_run):
    cfg, out = trained_run
    with pytest.raises(ValueError, match="hash"):
        harness.evaluate(out, cfg.replace(gamma_sen=4.0), n_scenarios=5)


# -- export ------------------------------------------------------------------


def test_moving_average_properties():
    np.testing.assert_allclose(harness.moving_average(np.full(50, 3.25), 20), 3.25)
    np.testing.assert_allclose(harness.moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    np.testing.assert_allclose(harness.moving_average([1, 2, 3], 10), [2.0])
    with pytest.raises(ValueError):
        harness.moving_average([1.0], 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=60), st.integers(1, 80))
def test_moving_average_matches_direct(xs, w):
    got = harness.moving_average(xs, w)
    if w >= len(xs):
        want = [np.mean(xs)]
    else:
        want = [np.mean(xs[i - w + 1:i + 1]) for i in range(w - 1, len(xs))]
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_export_four_cases(tmp_path):
    dirs = [harness.run_case(tiny(tmp_path, case=c, episodes=5), baseline=False) for c in range(4)]
    out = harness.export_plot_data(dirs, tmp_path / "fig.csv", window=2)
    rows = read_rows(out)
    assert len(rows[0]) == 5 and rows[0][0] == "episode"
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4"]
    assert open(out).readline().startswith("# moving-average window=2")


def test_export_window_longer_than_series(tmp_path):
    d = harness.run_case(tiny(tmp_path, case=0, episodes=3), baseline=False)
    rows = read_rows(harness.export_plot_data([d], tmp_path / "f.csv", window=20))
    rewards = harness.read_log(d / "log.csv")["reward_sum"]
    assert rows[1][0] == "2" and float(rows[1][1]) == pytest.approx(rewards.mean())
    assert len(rows) == 2


def test_export_missing_log(tmp_path):
    with pytest.raises(FileNotFoundError):
        harness.export_plot_data([tmp_path / "nope"], tmp_path / "f.csv")


# -- CLI ---------------------------------------------------------------------


def tiny_args(tmp_path, **kw):
    base = dict(out_dir=str(tmp_path), episodes=2, episode_len=6, d1=100, d2=120, ae_epochs=1,
                recon_epochs=1, angle_samples=24)
    base.update(kw)
    return [f"{k}={v}" for k, v in base.items()]


def test_cli_pipeline(tmp_path, capsys):
    args = tiny_args(tmp_path, case=3)
    for cmd in (["gen-csi"], ["train-ae"], ["gen-recon"], ["train-recon", "--side", "transmit"], ["train-rl"]):
        assert main(cmd + args) == 0, cmd
    run = harness.run_dir(tiny(tmp_path, **dict(a.split("=") for a in args)))
    assert (run / "summary.json").exists()
    assert main(["evaluate", "--run", str(run), "--n-scenarios", "4", "--out", str(tmp_path / "ev.json")]) == 0
    assert json.loads((tmp_path / "ev.json").read_text())["n_scenarios"] == 4
    assert main(["export", f"out_dir={tmp_path}", "--window", "1"]) == 0
    assert (tmp_path / "plot_data.csv").exists()
    assert main(["sweep", "--param", "feature_size", "--values", "4", *args]) == 0
    assert (tmp_path / "sweep_feature_size.csv").exists()


def test_cli_config_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("\n".join(a.replace("=", " = ") for a in tiny_args(tmp_path, case=0)) + "\n")
    assert main(["train-rl", "--config", str(f), "seed=2"]) == 0
    assert list(tmp_path.glob("case0_seed2_*"))


def test_cli_errors(tmp_path, capsys):
    assert main(["train-rl", "bogus_key=1"]) != 0
    assert "unknown config key" in capsys.readouterr().err
    assert main(["train-rl", "--config", str(tmp_path / "missing.cfg")]) != 0
    assert main(["sweep", "--param", "feature_size", "--values", "4", "--seeds", "", *tiny_args(tmp_path)]) != 0
    assert main(["export", "--runs", str(tmp_path / "none")]) != 0
    assert main(["evaluate", "--run", str(tmp_path / "none")]) != 0
    assert main(["no-such-command"]) != 0
    assert main(["train-rl", "case"]) != 0
