import os

import numpy as np
import pytest
import tomli

from tanglesim import experiments as ex
from tanglesim.cli import main

PRESETS = ["fig6", "fig7", "fig8", "fluid-integrable", "fluid-random",
           "rs-baseline", "steady-exp"]


def test_all_presets_ship():
    assert ex.list_presets() == PRESETS
    expected = {p: ex.load_preset(p).expected for p in PRESETS}
    assert expected["fig6"] == "diverges"
    assert expected["fig7"] == expected["fig8"] == "bounded"


def test_presets_follow_captions():
    six, seven, eight = (ex.load_preset(n).data["scenario"]
                         for n in ("fig6", "fig7", "fig8"))
    assert (six["lambda"], six["h"], six["policy"]) == (
        30, 5, "mcmc{alpha=0.1}")
    assert seven["policy"] == "mcmc{alpha=0.001}"
    assert eight["lambda"] > six["lambda"]
    assert eight["policy"].startswith("hybrid{mcmc{alpha=1}")
    assert six["runs"] == seven["runs"] == eight["runs"] == 50


def test_preset_data_is_not_shared():
    p = ex.load_preset("fig6")
    cfg = p.config()
    cfg["scenario"]["lambda"] = 1
    assert ex.load_preset("fig6").data["scenario"]["lambda"] == 30
    with pytest.raises(Exception):
        p.name = "other"


def test_verdict_trivial_cases():
    t = np.arange(200)
    flat = [(t, np.full(200, 50.0)), (t, np.full(200, 50.0))]
    assert ex.verdict(flat).label == "bounded"
    grow = [(t, 2.0 * t + 1), (t, 2.0 * t + 3)]
    v = ex.verdict(grow)
    assert v.label == "diverges" and v.positive_runs == 2
    with pytest.raises(ValueError, match="at least 2"):
        ex.verdict(flat[:1])
    with pytest.raises(ValueError, match="degenerate"):
        ex.verdict([(t, np.zeros(200)), (t, np.zeros(200))])


def test_verdict_threshold_is_configurable():
    t = np.arange(1, 101)
    y = 100 + 0.3 * t
    assert ex.verdict([(t, y), (t, y)], slope_eps=0.5).label == "bounded"
    assert ex.verdict([(t, y), (t, y)], slope_eps=0.1).label == "diverges"


def test_overrides():
    data = ex.load_preset("fig7").data
    new = ex.apply_overrides(data, ["lambda=40", "verdict.slope_eps=0.3",
                                    "policy=uniform"])
    assert new["scenario"]["lambda"] == 40
    assert new["verdict"]["slope_eps"] == 0.3
    assert new["scenario"]["policy"] == "uniform"
    with pytest.raises(ex.ConfigError):
        ex.apply_overrides(data, ["nonsense"])
    with pytest.raises(ex.ConfigError, match="scenario.bogus"):
        ex.apply_overrides(data, ["bogus=1"])


def test_malformed_config_reports_location(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "sim"\n[scenario]\nlambda = = 3\n')
    with pytest.raises(ex.ConfigError, match="line 3"):
        ex.load_config(bad)
    wrong = tmp_path / "wrong.toml"
    wrong.write_text('kind = "sim"\n[scenario]\nlambda = 3\nalpha = 1\n')
    with pytest.raises(ex.ConfigError, match="scenario.alpha"):
        ex.load_config(wrong)
    with pytest.raises(ex.ConfigError, match="kind"):
        ex._from_text('kind = "pde"\n', "x", "x")
    with pytest.raises(ex.ConfigError, match="unknown preset"):
        ex.resolve("fig9")


@pytest.mark.skipif(os.geteuid() == 0, reason="root can write anywhere")
def test_unwritable_output_dir(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    with pytest.raises(ex.ConfigError, match="not writable"):
        ex.run_experiment(ex.load_preset("steady-exp"), ro / "x")


def test_output_dir_that_is_a_file(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    with pytest.raises(ex.ConfigError, match="not writable"):
        ex.run_experiment(ex.load_preset("steady-exp"), f)


def test_cli_run_and_offline_verdict(tmp_path, capsys):
    out = tmp_path / "rs"
    code = main(["run", "rs-baseline", "--out", str(out), "--runs", "2",
                 "--horizon", "120", "--seed", "5"])
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["manifest.txt", "plot.png", "plot.svg", "run_000.csv",
                     "run_001.csv", "summary.csv", "verdict.txt"]
    manifest = tomli.loads((out / "manifest.txt").read_text())
    assert manifest["scenario"]["seeds"] == [5, 6]
    assert manifest["scenario"]["horizon"] == 120
    recorded = tomli.loads((out / "verdict.txt").read_text())
    again = ex.verdict_from_dir(out)
    assert again.label == recorded["verdict"]
    assert again.slope == pytest.approx(recorded["slope"], rel=1e-12)
    capsys.readouterr()
    assert main(["verdict", str(out)]) == 0
    assert capsys.readouterr().out.split()[0] == recorded["verdict"]


def test_manifest_reproduces_run(tmp_path):
    a = ex.run_experiment(ex.load_preset("rs-baseline"), tmp_path / "a",
                          ["runs=2", "horizon=60"], plot=False)
    m = tomli.loads((tmp_path / "a" / "manifest.txt").read_text())
    cfg = tmp_path / "again.toml"
    m["scenario"].pop("seeds")
    m.pop("package_version")
    cfg.write_text(
        'kind = "sim"\n[scenario]\n' + "\n".join(
            f"{k} = {v!r}".replace("'", '"')
            for k, v in m["scenario"].items()) + "\n")
    b = ex.run_experiment(ex.load_config(cfg), tmp_path / "b", plot=False)
    for ta, tb in zip(a.traces, b.traces):
        assert np.array_equal(ta.L, tb.L)


def test_cli_fluid_and_steady(tmp_path, capsys):
    assert main(["run", "fluid-random", "--out", str(tmp_path / "f"),
                 "--set", "t_max=40", "--set", "n_per_h=10",
                 "--set", "dump_stride=50", "--no-plot"]) == 0
    assert (tmp_path / "f" / "fluid.csv").exists()
    assert (tmp_path / "f" / "density.csv").exists()
    v = tomli.loads((tmp_path / "f" / "verdict.txt").read_text())
    assert v["verdict"] == "fixed-point"
    assert main(["run", "steady-exp", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "report.txt").exists()
    assert (tmp_path / "s" / "profile.csv").exists()


def test_cli_errors(capsys, tmp_path):
    assert main(["run", "nope", "--out", str(tmp_path)]) == 2
    assert "unknown preset" in capsys.readouterr().err
    assert main(["run", "steady-exp", "--runs", "3",
                 "--out", str(tmp_path)]) == 2
    assert main(["verdict", str(tmp_path / "empty")]) == 2


def test_list_presets_cli(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert all(p in out for p in PRESETS)
