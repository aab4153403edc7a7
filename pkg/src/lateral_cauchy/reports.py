"""CSV tables, the text report and the run manifest."""
from __future__ import annotations

import io
import json
import math
import platform
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    """Deterministic text for one CSV cell (17 significant digits for floats)."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    s = str(v)
    if any(c in s for c in ',"\n\r'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def columns_of(rows, leading=()) -> list:
    """Union of row keys in first-seen order, ``leading`` first."""
    cols = [c for c in leading]
    seen = set(cols)
    for r in rows:
        for k in r:
            if k not in seen:
                seen.add(k)
                cols.append(k)
    return cols


def csv_text(rows, columns=None, leading=()) -> str:
    cols = list(columns) if columns is not None else columns_of(rows, leading)
    buf = io.StringIO()
    buf.write(",".join(format_value(c) for c in cols) + "\n")
    for r in rows:
        buf.write(",".join(format_value(r.get(c)) for c in cols) + "\n")
    return buf.getvalue()


def write_csv(path, rows, columns=None, leading=()) -> None:
    Path(path).write_bytes(csv_text(rows, columns, leading).encode("utf-8"))


def read_csv(path) -> list:
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def report_text(results, cfg) -> str:
    lines = [f"config: {cfg.source}", f"config hash: {cfg.hash()}", ""]
    total = failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        lines.append(f"[{status}] {res.name}")
        for c in res.checks:
            total += 1
            failed += not c.passed
            val = "" if isinstance(c.value, float) and math.isnan(c.value) else f" value={c.value:.6g}"
            thr = "" if isinstance(c.threshold, float) and math.isnan(c.threshold) else \
                f" threshold={c.threshold:.6g}"
            det = f" ({c.detail})" if c.detail else ""
            lines.append(f"    {'ok  ' if c.passed else 'FAIL'} {c.name}{val}{thr}{det}")
        bad_rows = sum(1 for r in res.rows if r.get("pass") is False)
        if bad_rows:
            lines.append(f"    FAIL {bad_rows} table rows with pass=false")
        lines.append("")
    lines.append(f"{total - failed}/{total} checks passed")
    return "\n".join(lines) + "\n"


def write_manifest(path, cfg, wall_times: dict, status: int, extra=None) -> None:
    from . import __version__
    import scipy
    data = {
        "config": str(cfg.source),
        "config_hash": cfg.hash(),
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "seed": cfg.seed,
        "wall_time_s": wall_times,
        "exit_status": status,
    }
    data.update(extra or {})
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
