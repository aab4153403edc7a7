"""Builders turning a :class:`ScenarioConfig` into meshes, operators and kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import binio
from .config import ScenarioConfig
from .errors import ConfigError
from .forward import ProblemData, manufacture
from .kernels import KernelSet
from .mesh import EllipticCoefficients, Mesh, build_mesh, time_levels
from .weights import PseudoConvexFn, WeightConfig, default_psi

# dense kernels above this many entries are generated slice by slice
DENSE_LIMIT = 20_000_000


def make_mesh(cfg: ScenarioConfig, n: int | None = None) -> Mesh:
    return build_mesh(cfg.geometry, cfg.n if n is None else n, cfg.data["gamma"])


def make_coefficients(spec: dict, mesh: Mesh) -> EllipticCoefficients:
    preset = spec.get("preset", "identity")
    d = mesh.dim
    if preset == "identity":
        return EllipticCoefficients.identity(mesh)
    if preset == "constant":
        a = spec.get("a", 1.0)
        b = spec.get("b", [0.0] * d)
        a0 = spec.get("a0", 0.0)
        if np.ndim(b) == 0:
            b = [b] * d
        if len(b) != d:
            raise ConfigError(f"coefficients.b must have {d} entries")
        return EllipticCoefficients.from_functions(mesh, a=np.asarray(a, dtype=float), b=np.asarray(b, dtype=float),
                                                   a0=float(a0))
    if preset == "variable":
        amp = float(spec.get("amplitude", 0.25))
        if not 0 <= amp < 1:
            raise ConfigError("coefficients.amplitude must lie in [0, 1)")
        b = float(spec.get("b", 0.0))
        a0 = float(spec.get("a0", 0.0))

        def a_fn(*xs):
            return 1.0 + amp * np.prod([np.sin(np.pi * x) for x in xs], axis=0)

        return EllipticCoefficients.from_functions(mesh, a=a_fn, b=[b] * d, a0=a0)
    raise ConfigError(f"unknown coefficient preset {preset!r}")


def is_constant(coeffs: EllipticCoefficients) -> bool:
    return (np.ptp(coeffs.a, axis=0).max() == 0 and np.ptp(coeffs.b, axis=0).max() == 0
            and np.ptp(coeffs.a0) == 0)


def make_psi(spec: dict, mesh: Mesh) -> PseudoConvexFn:
    kind = (spec or {}).get("kind", "normal")
    if kind == "normal":
        return default_psi(mesh)
    if kind == "constant":
        return PseudoConvexFn.from_values(np.full(mesh.num_nodes, float(spec.get("value", 1.0))), mesh)
    if kind == "affine":
        c = float(spec.get("c", 0.5))
        g = np.asarray(spec.get("grad", [1.0] * mesh.dim), dtype=float)
        return PseudoConvexFn.from_values(c + mesh.coords @ g, mesh)
    raise ConfigError(f"unknown psi kind {kind!r}")


def make_weights(cfg: ScenarioConfig, mesh: Mesh) -> WeightConfig:
    w = cfg.data["weights"]
    return WeightConfig(float(w["lambda"]), float(w["s0"]), cfg.T, make_psi(w.get("psi"), mesh),
                        delta=float(w["delta"]))


# --------------------------------------------------------------------------
# kernels


def _const_field(value, shape):
    if value is None or value == 0:
        return None
    return np.full(shape, float(value))


def _kernel_slices(build_slice, nlev, N):
    if nlev * N * N <= DENSE_LIMIT:
        return np.stack([build_slice(m) for m in range(nlev)])
    return build_slice


def make_kernels(spec: dict, mesh: Mesh, times, wcfg: WeightConfig, T1: float, T2: float) -> KernelSet:
    """Kernel presets.

    zero
        calB = 0.
    separable-gaussian
        k = kappa exp(-|x - y|^2 / (2 width^2)) E(t) with E = 1
        (``envelope: none``) or E = l^(3-gamma) exp(-2 s0 c1 / l)
        (``envelope: carleman``, which keeps every hypothesis constant
        finite); constant multipliers ``f: [f1, f2, f3, f4]`` and kernels
        ``rho: [r1, r2]`` (multiplied by exp(s0 alpha) with the Carleman
        envelope).
    hypothesis-saturating
        k = l^(gamma-3) [kappa4 exp(-2 s0 c1 / l) 1{psi(x) > psi(y)}
        + kappa5 1{psi(x) <= psi(y)}], rho_j = r_j exp(s0 alpha), constant f_j.
        Built to saturate the discrete kernel hypotheses; not taken from
        any reference.
    file
        Components read from dense binary arrays (paths per component).
    """
    preset = spec.get("preset", "zero")
    times = np.asarray(times, dtype=float)
    T = times[-1]
    nlev, N = times.size, mesh.num_nodes
    shape = (nlev, N)
    lt = times * (T - times)
    interior = lt > 0
    if preset == "zero":
        return KernelSet.zero(T1, T2, float(spec.get("gamma", 3.0)))

    f = list(spec.get("f", [0.0, 0.0, 0.0, 0.0]))
    rho = list(spec.get("rho", [0.0, 0.0]))
    if len(f) != 4 or len(rho) != 2:
        raise ConfigError("kernels.f needs 4 entries and kernels.rho needs 2")
    fs = [_const_field(v, shape) for v in f]
    s0, c1 = wcfg.s0, wcfg.c1
    e_alpha = np.zeros(shape)
    e_alpha[interior] = np.exp(wcfg.s0 * wcfg.alpha(times[interior]))

    if preset == "separable-gaussian":
        gamma = float(spec.get("gamma", 3.0))
        kappa = float(spec.get("kappa", 0.5))
        width = float(spec.get("width", 0.2))
        env_kind = spec.get("envelope", "none")
        if env_kind not in ("none", "carleman"):
            raise ConfigError("kernels.envelope must be 'none' or 'carleman'")
        X = mesh.coords
        dist2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1)
        base = kappa * np.exp(-dist2 / (2 * width**2))
        env = np.ones(nlev)
        if env_kind == "carleman":
            env = np.zeros(nlev)
            env[interior] = lt[interior] ** (3 - gamma) * np.exp(-2 * s0 * c1 / lt[interior])
            rho_fields = [None if r == 0 else r * e_alpha for r in rho]
        else:
            rho_fields = [_const_field(r, shape) for r in rho]
        k = _kernel_slices(lambda m: env[m] * base, nlev, N)
        return KernelSet(T1, T2, gamma, fs[0], fs[1], fs[2], fs[3], rho_fields[0], rho_fields[1],
                         k, label="separable-gaussian")

    if preset == "hypothesis-saturating":
        gamma = float(spec.get("gamma", 1.5))
        k4 = float(spec.get("kappa4", 1.0))
        k5 = float(spec.get("kappa5", 0.5))
        psi = wcfg.psi.values
        upper = psi[:, None] > psi[None, :]

        def slice_(m):
            if not interior[m]:
                return np.zeros((N, N))
            lm = lt[m]
            return lm ** (gamma - 3) * np.where(upper, k4 * np.exp(-2 * s0 * c1 / lm), k5)

        rho_fields = [None if r == 0 else r * e_alpha for r in rho]
        return KernelSet(T1, T2, gamma, fs[0], fs[1], fs[2], fs[3], rho_fields[0], rho_fields[1],
                         _kernel_slices(slice_, nlev, N), label="hypothesis-saturating")

    if preset == "file":
        comps = {}
        for name in ("f1", "f2", "f3", "f4", "rho1", "rho2"):
            if spec.get(name):
                arr = binio.read_array(spec[name])
                if arr.shape != shape:
                    raise ConfigError(f"kernels.{name}: array shape {arr.shape}, expected {shape}")
                comps[name] = arr
        k = None
        if spec.get("k"):
            k = binio.read_array(spec["k"])
            if k.shape != (nlev, N, N):
                raise ConfigError(f"kernels.k: array shape {k.shape}, expected {(nlev, N, N)}")
        return KernelSet(T1, T2, float(spec.get("gamma", 3.0)), k=k, label="file", **comps)
    raise ConfigError(f"unknown kernel preset {preset!r}")


# --------------------------------------------------------------------------
# manufactured solutions


def mms_truth(mesh: Mesh, times) -> np.ndarray:
    """u*(t, x) = exp(-t) prod_i sin(pi x_i)."""
    sx = np.prod(np.sin(np.pi * mesh.coords), axis=1)
    return np.exp(-np.asarray(times))[:, None] * sx[None, :]


def mms_source(mesh: Mesh, times, coeffs: EllipticCoefficients) -> np.ndarray:
    """Analytic D_t u* - A u* for constant coefficients."""
    if not is_constant(coeffs):
        raise ConfigError("analytic MMS source needs constant coefficients")
    X = mesh.coords
    d = mesh.dim
    s = np.sin(np.pi * X)
    c = np.cos(np.pi * X)
    a, b, a0 = coeffs.a[0], coeffs.b[0], coeffs.a0[0]
    prod_s = np.prod(s, axis=1)
    Au = a0 * prod_s
    for i in range(d):
        others_i = np.prod(np.delete(s, i, axis=1), axis=1)
        Au = Au + b[i] * np.pi * c[:, i] * others_i
        for j in range(d):
            if i == j:
                Au = Au - a[i, i] * np.pi**2 * prod_s
            else:
                rest = np.prod(np.delete(s, [i, j], axis=1), axis=1) if d > 2 else 1.0
                Au = Au + a[i, j] * np.pi**2 * c[:, i] * c[:, j] * rest
    e = np.exp(-np.asarray(times))[:, None]
    return e * (-prod_s - Au)[None, :]


def analytic_source(spec: dict, mesh: Mesh, times, coeffs: EllipticCoefficients) -> np.ndarray:
    """D_t u* - A u* from the coefficient preset, without spatial discretisation.

    The ``variable`` preset is isotropic, a = 1 + amp prod sin(pi x_i), so
    A u = a lap u + grad a . grad u + b . grad u + a0 u.
    """
    if spec.get("preset", "identity") != "variable":
        return mms_source(mesh, times, coeffs)
    amp = float(spec.get("amplitude", 0.25))
    b = float(spec.get("b", 0.0))
    a0 = float(spec.get("a0", 0.0))
    X = mesh.coords
    d = mesh.dim
    s, c = np.sin(np.pi * X), np.cos(np.pi * X)
    ps = np.prod(s, axis=1)
    a = 1.0 + amp * ps
    Au = -d * np.pi**2 * a * ps + a0 * ps
    for i in range(d):
        others = np.prod(np.delete(s, i, axis=1), axis=1) if d > 1 else 1.0
        du = np.pi * c[:, i] * others
        Au = Au + (amp * du + b) * du
    e = np.exp(-np.asarray(times))[:, None]
    return e * (-ps - Au)[None, :]


def cauchy_lift(mesh: Mesh, times) -> np.ndarray:
    """Field sharing the Dirichlet trace of u* and its normal derivative on Gamma.

    With xi the coordinate normal to Gamma (xi = 1 on Gamma):
    g = -pi exp(-t) xi^2 (xi - 1) prod_{other} sin(pi x_j).
    """
    side = mesh.gamma_side
    axis = 0 if side in ("left", "right") else 1
    xi = mesh.coords[:, axis] if side in ("right", "top") else 1.0 - mesh.coords[:, axis]
    other = np.prod(np.sin(np.pi * np.delete(mesh.coords, axis, axis=1)), axis=1) \
        if mesh.dim > 1 else 1.0
    sx = -np.pi * xi**2 * (xi - 1.0) * other
    return np.exp(-np.asarray(times))[:, None] * sx[None, :]


@dataclass
class Scenario:
    mesh: Mesh
    coeffs: EllipticCoefficients
    wcfg: WeightConfig
    kernels: KernelSet
    times: np.ndarray
    T: float
    nt: int

    def problem(self, f0=None, g=None) -> ProblemData:
        z = np.zeros((self.nt + 1, self.mesh.num_nodes))
        return ProblemData(self.mesh, self.coeffs, self.T, self.nt,
                           z if f0 is None else f0, z.copy() if g is None else g, self.kernels)

    def mms_problem(self, lift: str = "truth"):
        """Problem whose discrete solution from u*(0) is exactly u* on the grid.

        ``lift='truth'`` takes g = u*, ``lift='cauchy'`` the Cauchy-matching lift.
        """
        us = mms_truth(self.mesh, self.times)
        g = us if lift == "truth" else cauchy_lift(self.mesh, self.times)
        p = self.problem(g=g)
        return p.with_data(f0=manufacture(p, us)), us


def build_scenario(cfg: ScenarioConfig, n: int | None = None, nt: int | None = None,
                   kernels: dict | None = None) -> Scenario:
    mesh = make_mesh(cfg, n)
    nt = cfg.nt if nt is None else nt
    times = time_levels(cfg.T, nt)
    coeffs = make_coefficients(cfg.data["coefficients"], mesh)
    wcfg = make_weights(cfg, mesh)
    ker = make_kernels(cfg.data["kernels"] if kernels is None else kernels, mesh, times, wcfg,
                       cfg.T1, cfg.T2)
    return Scenario(mesh, coeffs, wcfg, ker, times, cfg.T, nt)
