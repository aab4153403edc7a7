"""Scenario configuration files (YAML) with line-aware diagnostics."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError

EXPERIMENTS = ("forward-mms", "carleman", "trace", "terms", "bihari", "complete", "dependence")
COEFF_PRESETS = ("identity", "constant", "variable")
KERNEL_PRESETS = ("zero", "separable-gaussian", "hypothesis-saturating", "file")
PSI_KINDS = ("normal", "constant", "affine")
MAX_N, MAX_NT = 513, 4096

DEFAULTS = {
    "geometry": "interval",
    "n": 51,
    "nt": 100,
    "gamma": "right",
    "times": {"T": 1.0, "T1": 0.25, "T2": 0.5},
    "coefficients": {"preset": "identity"},
    "kernels": {"preset": "zero"},
    "weights": {"lambda": 1.0, "s0": 1.0, "delta": 0.5, "C1": None, "psi": {"kind": "normal"}},
    "experiment": "all",
    "seed": 0,
    "output": "lab-output",
    "experiments": {
        "forward-mms": {"dt_n": 101, "dt_nt": [10, 20, 40], "h_n": [11, 21, 41],
                        "h_nt": [100, 400, 1600], "picard_scale": 0.2,
                        "min_order_dt": 0.9, "min_order_h": 1.8},
        "carleman": {"s_min": 0.5, "s_max": 32.0, "s_count": 13, "refine": True,
                     "stability": 0.2},
        "trace": {"samples": 200, "r0_max": 5.0, "eps_min": 0.1, "eps_max": 10.0},
        "terms": {"samples": 100, "slack": 0.05},
        "bihari": {"nt": 1000, "samples": 50},
        "complete": {"beta": 1e-10, "eps": 0.1, "tol": 1e-3},
        "dependence": {"noise": [1e-4, 1e-3, 1e-2, 1e-1], "seeds": 5,
                       "eps": [0.02, 0.05, 0.1], "beta": None, "energy_slack": 0.05,
                       "slope_range": [0.5, 1.5]},
    },
}

# shortcuts accepted by ``lab sweep --axis``
AXIS_ALIASES = {
    "s0": "weights.s0", "lambda": "weights.lambda", "lam": "weights.lambda",
    "delta": "weights.delta", "C1": "weights.C1", "T": "times.T", "T1": "times.T1",
    "T2": "times.T2", "eps": "experiments.dependence.eps",
    "eta": "experiments.dependence.noise", "beta": "experiments.complete.beta",
}


class _LineLoader(yaml.SafeLoader):
    pass


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers."""
    lines = {}
    try:
        root = yaml.compose(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"malformed config{where}: {exc}") from None

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return lines


def _merge(base, override, path, lines, strict=True):
    out = copy.deepcopy(base)
    for k, v in override.items():
        key = f"{path}.{k}" if path else str(k)
        if strict and k not in base and not (path == "kernels" or path == "coefficients"
                                             or path.startswith("weights.psi")):
            raise ConfigError(f"unknown key '{key}'{_at(lines, key)}")
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            out[k] = _merge(base[k], v, key, lines,
                            strict=strict and k not in ("kernels", "coefficients", "psi"))
        else:
            out[k] = v
    return out


def _at(lines, key):
    return f" at line {lines[key]}" if key in lines else ""


@dataclass
class ScenarioConfig:
    data: dict
    lines: dict = field(default_factory=dict)
    source: str = "<memory>"

    # convenient accessors
    @property
    def geometry(self) -> str:
        return self.data["geometry"]

    @property
    def n(self) -> int:
        return int(self.data["n"])

    @property
    def nt(self) -> int:
        return int(self.data["nt"])

    @property
    def T(self) -> float:
        return float(self.data["times"]["T"])

    @property
    def T1(self) -> float:
        return float(self.data["times"]["T1"])

    @property
    def T2(self) -> float:
        return float(self.data["times"]["T2"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def experiments(self) -> list:
        sel = self.data["experiment"]
        if sel == "all":
            return list(EXPERIMENTS)
        return [sel] if isinstance(sel, str) else list(sel)

    def settings(self, experiment: str) -> dict:
        return self.data["experiments"][experiment]

    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def get(self, path: str):
        node = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown key '{path}'")
            node = node[part]
        return node

    def with_value(self, path: str, value) -> "ScenarioConfig":
        path = AXIS_ALIASES.get(path, path)
        data = copy.deepcopy(self.data)
        node = data
        parts = path.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown key '{path}'")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown key '{path}'")
        node[parts[-1]] = value
        cfg = ScenarioConfig(data, self.lines, self.source)
        cfg.validate()
        return cfg

    # ------------------------------------------------------------------
    def _fail(self, key, msg):
        raise ConfigError(f"{self.source}: '{key}'{_at(self.lines, key)}: {msg}")

    def validate(self) -> None:
        d = self.data
        if d["geometry"] not in ("interval", "rectangle"):
            self._fail("geometry", "must be 'interval' or 'rectangle'")
        for key, hi in (("n", MAX_N), ("nt", MAX_NT)):
            v = d[key]
            if not isinstance(v, int) or isinstance(v, bool) or not 5 <= v <= hi:
                lo = 5
                self._fail(key, f"must be an integer in [{lo}, {hi}], got {v!r}")
        t = d["times"]
        for k in ("T", "T1", "T2"):
            if not isinstance(t.get(k), (int, float)) or isinstance(t.get(k), bool):
                self._fail(f"times.{k}", "must be a number")
        if not 0 < t["T1"] < t["T2"] < t["T"]:
            self._fail("times", f"need 0 < T1 < T2 < T, got {t['T1']}, {t['T2']}, {t['T']}")
        cp = d["coefficients"].get("preset")
        if cp not in COEFF_PRESETS:
            self._fail("coefficients.preset", f"unknown preset {cp!r}; choose from {COEFF_PRESETS}")
        kp = d["kernels"].get("preset")
        if kp not in KERNEL_PRESETS:
            self._fail("kernels.preset", f"unknown preset {kp!r}; choose from {KERNEL_PRESETS}")
        w = d["weights"]
        for k in ("lambda", "s0", "delta"):
            if not isinstance(w.get(k), (int, float)) or isinstance(w.get(k), bool):
                self._fail(f"weights.{k}", "must be a number")
        if w["lambda"] < 1:
            self._fail("weights.lambda", "must be >= 1")
        if w["s0"] <= 0:
            self._fail("weights.s0", "must be positive")
        if not 0 < w["delta"] < 1:
            self._fail("weights.delta", "must lie in (0, 1)")
        if w.get("C1") is not None and not (isinstance(w["C1"], (int, float)) and w["C1"] > 0):
            self._fail("weights.C1", "must be positive or null")
        psi = w.get("psi") or {}
        if psi.get("kind", "normal") not in PSI_KINDS:
            self._fail("weights.psi.kind", f"unknown kind {psi.get('kind')!r}; choose from {PSI_KINDS}")
        sel = d["experiment"]
        names = [sel] if isinstance(sel, str) else sel
        for name in names:
            if name != "all" and name not in EXPERIMENTS:
                self._fail("experiment", f"unknown experiment {name!r}; choose from "
                                         f"{('all',) + EXPERIMENTS}")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            self._fail("seed", "must be an integer")
        dep = d["experiments"]["dependence"]
        eps_vals = dep["eps"] if isinstance(dep["eps"], list) else [dep["eps"]]
        for e in eps_vals:
            if not 0 < float(e) < t["T1"] / (2 * t["T"]):
                self._fail("experiments.dependence.eps",
                           f"each eps must lie in (0, T1/(2T)) = (0, {t['T1'] / (2 * t['T']):.6g})")


def config_from_dict(raw: dict, source: str = "<memory>", lines: dict | None = None) -> ScenarioConfig:
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    data = _merge(DEFAULTS, raw, "", lines)
    cfg = ScenarioConfig(data, lines, source)
    cfg.validate()
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    lines = _key_lines(text)
    raw = yaml.safe_load(text) or {}
    try:
        return config_from_dict(raw, str(path), lines)
    except ConfigError as exc:
        if str(exc).startswith(str(path)):
            raise
        raise ConfigError(f"{path}: {exc}") from None
