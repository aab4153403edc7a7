import json
from pathlib import Path

import pytest

from lateral_cauchy.cli import main
from lateral_cauchy.config import config_from_dict, load_config
from lateral_cauchy.errors import ConfigError
from lateral_cauchy.reports import csv_text, format_value, read_csv

ZERO = Path(__file__).resolve().parents[1] / "configs" / "zero.yaml"


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_unknown_key_reports_line(tmp_path):
    p = write(tmp_path, "n: 21\nweights:\n  lambda: 2\n  bogus: 1\n")
    with pytest.raises(ConfigError, match="line 4"):
        load_config(p)


def test_invalid_values(tmp_path):
    with pytest.raises(ConfigError, match="T1 < T2"):
        load_config(write(tmp_path, "times: {T: 1, T1: 0.6, T2: 0.5}\n"))
    with pytest.raises(ConfigError, match="line 2"):
        load_config(write(tmp_path, "seed: 1\nn: 3\n"))
    with pytest.raises(ConfigError, match="malformed"):
        load_config(write(tmp_path, "n: [1,\n"))
    with pytest.raises(ConfigError):
        config_from_dict({"experiments": {"dependence": {"eps": [0.2]}}})


def test_defaults_and_aliases():
    cfg = config_from_dict({})
    assert cfg.experiments[0] == "forward-mms" and len(cfg.experiments) == 7
    assert cfg.with_value("s0", 4.0).get("weights.s0") == 4.0
    with pytest.raises(ConfigError):
        cfg.with_value("weights.nope", 1)


def test_csv_format():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(float("nan")) == "nan" and format_value(float("-inf")) == "-inf"
    assert format_value(True) == "true"
    assert format_value('a,"b"') == '"a,""b"""'
    assert csv_text([{"a": 1}, {"b": 2.5}]) == "a,b\n1,\n,2.5\n"
    assert csv_text([], columns=["x"]) == "x\n"


def run_cli(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_zero_run_exits_zero(tmp_path, capsys):
    assert run_cli(tmp_path, "run", str(ZERO)) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    for name in ("preflight", "forward-mms", "carleman", "trace", "terms", "bihari",
                 "complete", "dependence"):
        assert (tmp_path / f"{name}.csv").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["exit_status"] == 0 and "wall_time_s" in man
    rows = read_csv(tmp_path / "forward-mms.csv")
    for study in ("dt", "h"):
        assert sum(1 for r in rows if r.get("study") == study) == 3
    assert all("wall" not in k for k in rows[0])


def test_constant_psi_rejected(tmp_path, capsys):
    p = write(tmp_path, "weights:\n  psi: {kind: constant}\nexperiment: trace\n")
    assert run_cli(tmp_path / "o", "run", str(p)) != 0
    assert "grad" in capsys.readouterr().out
    assert not (tmp_path / "o" / "trace.csv").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    p = write(tmp_path, "wrong: 1\n")
    assert run_cli(tmp_path / "o", "run", str(p)) == 2
    assert "line 1" in capsys.readouterr().err


def test_empty_sweep(tmp_path):
    assert run_cli(tmp_path, "sweep", str(ZERO), "--axis", "s0", "--values", "") == 0
    assert (tmp_path / "sweep.csv").read_text() == "axis,value,experiment,table\n"


def test_non_numeric_axis(tmp_path):
    assert run_cli(tmp_path, "sweep", str(ZERO), "--axis", "geometry", "--values", "1,2") == 2
    assert run_cli(tmp_path, "sweep", str(ZERO), "--axis", "s0", "--values", "a") == 2


def test_s0_sweep(tmp_path):
    p = write(tmp_path, "experiment: carleman\nexperiments:\n  carleman: {refine: false}\n")
    assert run_cli(tmp_path / "o", "sweep", str(p), "--axis", "s0",
                   "--values", "1,2,4", "--jobs", "2") == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    values = {r["value"] for r in rows if r["experiment"] == "carleman"}
    assert values == {"1", "2", "4"}
    c1 = [r for r in rows if r["table"] == "calibration" and r["mode"] == "weighted"]
    assert {r["value"] for r in c1} == {"1", "2", "4"}
    assert all(float(r["C1_min"]) > 0 for r in c1)


def test_deterministic_csv(tmp_path):
    p = write(tmp_path, "experiment: [trace, bihari, terms]\nseed: 7\n")
    assert run_cli(tmp_path / "a", "run", str(p), "--jobs", "1") == 0
    assert run_cli(tmp_path / "b", "run", str(p), "--jobs", "3") == 0
    for f in sorted((tmp_path / "a").glob("*.csv")):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
