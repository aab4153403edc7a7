"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line (also
collected into the terminal summary by conftest)."""
import time
from pathlib import Path

import pytest

from lateral_cauchy.cli import main
from lateral_cauchy.config import config_from_dict
from lateral_cauchy.experiments import run_experiment, weight_identities

from conftest import ACCEPTANCE_LINES

ZERO = Path(__file__).resolve().parents[1] / "configs" / "zero.yaml"
SATURATING = {"kernels": {"preset": "hypothesis-saturating", "f": [1, 1, 1, 1], "rho": [1, 1]}}


def report(num, title, ok, elapsed, limit, detail=""):
    ok_time = elapsed < limit
    status = "PASS" if ok and ok_time else "FAIL"
    cap = f"limit {limit:g}s" if limit != float("inf") else "no limit"
    line = f"[{status}] criterion {num:>2}: {title} ({elapsed:.2f}s, {cap}){detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert ok_time, line


def failing(res, prefix=None):
    bad = [c.name for c in res.checks if not c.passed and (prefix is None or c.name.startswith(prefix))]
    return f"; failing: {', '.join(bad)}" if bad else ""


def timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0


def test_criterion_01_weight_identities():
    res, dt = timed(weight_identities, config_from_dict({}), 101, 200)
    report(1, "weight identities on 101x201 nodes", res.passed, dt, 1.0, failing(res))


def test_criterion_02_trace():
    res, dt = timed(run_experiment, "trace", config_from_dict({"experiment": "trace"}))
    report(2, "trace inequality, 200 samples", res.passed, dt, 30.0, failing(res))


@pytest.fixture(scope="module")
def terms_run():
    return timed(run_experiment, "terms", config_from_dict({**SATURATING, "experiment": "terms"}))


def test_criterion_03_term_bounds(terms_run):
    res, dt = terms_run
    checks = [c for c in res.checks if c.name.endswith("_bound")]
    ok = len(checks) == 5 and all(c.passed for c in checks)
    worst = min(c.value for c in checks)
    report(3, f"per-term bounds, worst relative margin {worst:.3g}", ok, dt, 120.0,
           failing(res, "B"))


def test_criterion_04_holmgren(terms_run):
    res, dt = terms_run
    c = next(c for c in res.checks if c.name == "holmgren")
    report(4, f"Holmgren bound, max excess {c.value:.3g}", c.passed, dt, 30.0)


def test_criterion_05_carleman():
    res, dt = timed(run_experiment, "carleman", config_from_dict({"experiment": "carleman"}))
    report(5, "Carleman calibration and refinement stability", res.passed, dt, 120.0,
           failing(res))


def test_criterion_06_forward_mms():
    res, dt = timed(run_experiment, "forward-mms", config_from_dict({"experiment": "forward-mms"}))
    report(6, "forward solver convergence orders and Picard ratios", res.passed, dt, 120.0,
           failing(res))


def test_criterion_07_bihari():
    res, dt = timed(run_experiment, "bihari", config_from_dict({"experiment": "bihari"}))
    report(7, "Bihari bound: Gronwall, extremal, monotone", res.passed, dt, 10.0, failing(res))


def test_criterion_08_uniqueness():
    res, dt = timed(run_experiment, "complete", config_from_dict({"experiment": "complete"}))
    report(8, "zero data and noiseless closed-loop completion", res.passed, dt, 300.0,
           failing(res))


def test_criterion_09_dependence():
    res, dt = timed(run_experiment, "dependence", config_from_dict({"experiment": "dependence"}))
    slope = next((c.value for c in res.checks if c.name == "slope"), float("nan"))
    report(9, f"continuous dependence, slope {slope:.3g}", res.passed, dt, 900.0, failing(res))


def test_criterion_10_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    codes = [main(["run", str(ZERO), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    dt = time.perf_counter() - t0
    capsys.readouterr()
    files = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = bool(files) and all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                               for f in files)
    report(10, f"byte-identical CSVs over two full runs ({len(files)} files)",
           same and codes == [0, 0], dt, float("inf"))
