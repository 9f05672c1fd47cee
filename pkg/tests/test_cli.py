import csv

import numpy as np
import pytest

from saddlelab.cli import main
from saddlelab.config import (SCENARIOS, ConfigError, ScenarioConfig, dump_config, load_config,
                              parse_config, with_overrides)
from saddlelab.gridio import PROVENANCE, csv_text, read_grid, write_grid
from saddlelab.scenarios import THREADS_ENV, fit_exponent, run_tasks, thread_count

SMALL = {
    "eval": ["--R", "8", "--gamma", "0,1"],
    "norms": ["--R", "8,16", "--n-f", "2"],
    "broad": ["--R", "8", "--n-f", "1"],
    "classify": ["--R", "8"],
    "knapp": ["--R", "8,16", "--p", "4"],
    "geolemma": ["--K", "20", "--trials", "5", "--mu", "1"],
    "packets": ["--R", "16"],
    "partition": ["--R", "16", "--M", "16", "--D", "2", "--trials", "20"],
    "scan": ["--R", "8,16", "--n-f", "2"],
}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config -------------------------------------------------------------------------

def test_config_roundtrip():
    cfg = ScenarioConfig(scenario="knapp-sweep", R=(16.0, 32.0), p=(3.25, 4.0), alpha=0.5, N=64)
    assert parse_config(dump_config(cfg)) == cfg


def test_config_parse_example():
    cfg = parse_config("schema = 1\n# sweep\nscenario = knapp-sweep\nR = 16, 32, 64  # three\np = 4\n")
    assert cfg.R == (16.0, 32.0, 64.0) and cfg.p == (4.0,) and cfg.scenario == "knapp-sweep"


@pytest.mark.parametrize("text,where", [
    ("schema = 1\ngamma =\n", "bad.cfg:2: gamma"),
    ("schema = 1\nscenario = eval\ngamma = 2\n", "bad.cfg:3: gamma"),
    ("schema = 1\nR = 16\nR = 32\n", "bad.cfg:3: duplicate"),
    ("schema = 1\nfoo = 1\n", "bad.cfg:2: unknown key"),
    ("gamma = 1\n", "bad.cfg:1: first entry"),
    ("schema = 2\n", "bad.cfg:1: unsupported"),
    ("schema = 1\nM = 48\n", "bad.cfg:2: M"),
    ("schema = 1\nseed = x\n", "bad.cfg:2: bad value"),
    ("schema = 1\njust text\n", "bad.cfg:2: expected"),
    ("", "bad.cfg: missing"),
])
def test_config_errors(text, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "bad.cfg")
    assert str(exc.value).startswith(where)


def test_config_empty_gamma_list():
    with pytest.raises(ConfigError, match="gamma: list must not be empty"):
        parse_config("schema = 1\ngamma =\n", "x")
    with pytest.raises(ConfigError):
        ScenarioConfig(gamma=())


def test_config_defaults_and_overrides():
    cfg = ScenarioConfig()
    assert cfg.delta_value == pytest.approx(cfg.epsilon**2)
    assert cfg.alpha_for(16) == pytest.approx(16**-0.2)
    assert with_overrides(cfg, alpha=None) is cfg
    assert with_overrides(cfg, alpha=0.5).alpha_for(16) == 0.5
    with pytest.raises(ConfigError):
        with_overrides(cfg, epsilon=2.0)


def test_load_config(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("schema = 1\nscenario = eval\nR = 8\n")
    assert load_config(p).R == (8.0,)


# -- gridio -------------------------------------------------------------------------

def test_grid_roundtrip(tmp_path):
    v = np.random.default_rng(0).standard_normal((3, 4, 5)) + 1j
    write_grid(tmp_path / "g", v, 16.0, -0.5)
    w, R, g = read_grid(tmp_path / "g")
    assert np.array_equal(v, w) and (R, g) == (16.0, -0.5)
    (tmp_path / "bad").write_bytes(b"XXXX" + (tmp_path / "g").read_bytes()[4:])
    with pytest.raises(ValueError):
        read_grid(tmp_path / "bad")


def test_csv_provenance():
    prov = {k: 0 for k in PROVENANCE}
    text = csv_text([{"R": 32.0, "x": True}, {"y": 1.5}], prov)
    lines = text.splitlines()
    assert lines[0].split(",") == list(PROVENANCE) + ["x", "y"]
    assert lines[1].split(",")[4] == "32.0" and lines[1].endswith(",1,")
    with pytest.raises(ValueError):
        csv_text([], {"seed": 0})


# -- helpers ------------------------------------------------------------------------

def test_thread_count(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert thread_count() == 1
    monkeypatch.setenv(THREADS_ENV, "3")
    assert thread_count() == 3
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ValueError):
        thread_count()


def test_run_tasks_ordered():
    assert run_tasks(lambda t: t * t, list(range(20)), threads=4) == [t * t for t in range(20)]


def test_fit_exponent():
    x = np.array([16, 32, 64, 128])
    assert fit_exponent(x, 3 * x**-0.5) == pytest.approx(-0.5)
    assert np.isnan(fit_exponent([1.0], [1.0]))


# -- command line -------------------------------------------------------------------

@pytest.mark.parametrize("cmd", list(SCENARIOS))
def test_subcommand_smoke(cmd, tmp_path, capsys):
    out = tmp_path / cmd
    assert main([cmd, "--out", str(out), *SMALL[cmd]]) == 0
    printed = capsys.readouterr().out.split()
    rows = read_rows(out / f"{SCENARIOS[cmd]}.csv")
    assert rows and str(out / f"{SCENARIOS[cmd]}.csv") in printed
    for r in rows:
        assert r["scenario"] == SCENARIOS[cmd]
        assert all(k in r for k in PROVENANCE)


def test_eval_writes_grids(tmp_path):
    assert main(["eval", "--out", str(tmp_path), "--R", "8", "--gamma", "0.5"]) == 0
    grids = [p for p in tmp_path.iterdir() if p.suffix == ".grid"]
    assert grids
    v, R, g = read_grid(grids[0])
    assert R == 8.0 and g == 0.5 and v.ndim == 3


def test_same_seed_same_bytes(tmp_path, monkeypatch):
    args = ["norms", "--R", "8,16", "--n-f", "2", "--seed", "7"]
    monkeypatch.setenv(THREADS_ENV, "1")
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    monkeypatch.setenv(THREADS_ENV, "4")
    assert main([*args, "--out", str(tmp_path / "c")]) == 0
    a, b, c = ((tmp_path / d / "norm-sweep.csv").read_bytes() for d in "abc")
    assert a == b == c
    assert main([*args[:-1], "8", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "norm-sweep.csv").read_bytes() != a


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "k.cfg"
    cfg.write_text("schema = 1\nscenario = knapp-sweep\nR = 8, 16\np = 4\n")
    assert main(["knapp", "--config", str(cfg), "--out", str(tmp_path), "--gamma", "0"]) == 0
    rows = read_rows(tmp_path / "knapp-sweep.csv")
    assert {r["gamma"] for r in rows} == {"0.0"}
    fit = [r for r in rows if r.get("kind") == "fit"]
    assert fit and all(r["predicted"] == repr(-0.5) for r in fit)


@pytest.mark.parametrize("argv,msg", [
    (["eval", "--gamma", ""], "gamma"),
    (["eval", "--gamma", "3"], "gamma"),
    (["norms", "--M", "12"], "M"),
    (["geolemma", "--K", "16"], "K"),
])
def test_cli_errors(argv, msg, tmp_path, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("saddlelab: error:") and msg in err


def test_cli_scenario_mismatch(tmp_path, capsys):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("schema = 1\nscenario = eval\n")
    assert main(["knapp", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "does not match" in capsys.readouterr().err


def test_cli_bad_config_line(tmp_path, capsys):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("schema = 1\nscenario = eval\ngamma =\n")
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert f"{cfg}:3: gamma" in capsys.readouterr().err
