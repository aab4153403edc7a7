"""Command line entry point: ``lab run`` and ``lab sweep``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import AXIS_ALIASES, ScenarioConfig, load_config
from .errors import ConfigError, DomainError, PicardDivergenceError
from .experiments import Check, ExperimentResult, preflight, run_experiment
from .reports import report_text, write_csv, write_manifest

log = logging.getLogger("lateral_cauchy")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def execute(cfg: ScenarioConfig, jobs: int = 1):
    """Preflight then every selected experiment; returns (results, wall times)."""
    walls = {}
    t0 = time.perf_counter()
    pre = preflight(cfg)
    walls["preflight"] = time.perf_counter() - t0
    results = [pre]
    if not pre.passed:
        log.error("preflight failed; experiments skipped")
        return results, walls
    for name in cfg.experiments:
        t0 = time.perf_counter()
        log.info("running %s", name)
        try:
            res = run_experiment(name, cfg, jobs=jobs)
        except (PicardDivergenceError, DomainError) as exc:
            res = ExperimentResult(name, checks=[Check("error", False, detail=str(exc))])
        walls[name] = time.perf_counter() - t0
        results.append(res)
    return results, walls


def _status(results) -> int:
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.data["output"])
    out.mkdir(parents=True, exist_ok=True)
    results, walls = execute(cfg, args.jobs)
    for res in results:
        write_csv(out / f"{res.name}.csv", res.all_rows(), leading=("table",))
    status = _status(results)
    text = report_text(results, cfg)
    (out / "report.txt").write_text(text, encoding="utf-8")
    write_manifest(out / "manifest.json", cfg, walls, status)
    sys.stdout.write(text)
    return status


# --------------------------------------------------------------------------
# sweeps


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_axis(cfg: ScenarioConfig, axis: str, raw: str):
    """Resolve the axis path and parse its values; raises ConfigError."""
    path = AXIS_ALIASES.get(axis, axis)
    current = cfg.get(path)
    numeric = (current is None or _is_number(current)
               or (isinstance(current, list) and current and all(_is_number(x) for x in current)))
    if not numeric:
        raise ConfigError(f"sweep axis '{axis}' is not numeric (current value {current!r})")
    values = []
    for tok in (t.strip() for t in raw.split(",")):
        if not tok:
            continue
        try:
            x = float(tok)
        except ValueError:
            raise ConfigError(f"sweep value {tok!r} is not a number") from None
        as_int = isinstance(current, int) or (isinstance(current, list)
                                              and all(isinstance(c, int) for c in current))
        if as_int:
            if x != int(x):
                raise ConfigError(f"sweep axis '{axis}' needs integers, got {tok}")
            x = int(x)
        values.append(x)
    return path, isinstance(current, list), values


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    path, is_list, values = parse_axis(cfg, args.axis, args.values)
    cells = [cfg.with_value(path, [v] if is_list else v) for v in values]
    out = Path(args.out or cfg.data["output"])
    out.mkdir(parents=True, exist_ok=True)

    def run(c):
        return execute(c, 1)

    if args.jobs > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            outcomes = list(ex.map(run, cells))
    else:
        outcomes = [run(c) for c in cells]

    rows, summary, walls = [], [], {}
    status = EXIT_OK
    for v, (results, w) in zip(values, outcomes):
        walls[str(v)] = w
        for res in results:
            for r in res.all_rows():
                # a check row's own "value" must not shadow the axis value
                r = {("check_value" if k == "value" else k): x for k, x in r.items()}
                rows.append({"axis": path, "value": v, "experiment": res.name, **r})
            summary.append(f"[{'PASS' if res.passed else 'FAIL'}] {path}={v} {res.name}")
        status = max(status, _status(results))
    write_csv(out / "sweep.csv", rows, leading=("axis", "value", "experiment", "table"))
    text = "\n".join([f"config: {cfg.source}", f"sweep: {path} over {values}", ""] + summary) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    write_manifest(out / "manifest.json", cfg, walls, status,
                   extra={"sweep_axis": path, "sweep_values": values})
    sys.stdout.write(text)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments selected in a config file")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="run a config once per value of a numeric key")
    s.add_argument("config")
    s.add_argument("--axis", required=True, help="dotted key or alias (s0, lambda, eps, eta, n, nt, ...)")
    s.add_argument("--values", required=True, help="comma separated list, may be empty")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        sys.stderr.write("error: --jobs must be >= 1\n")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
