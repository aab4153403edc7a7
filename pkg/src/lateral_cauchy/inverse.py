"""Cut-offs, the Bihari bound, lateral data completion and the dependence sweep."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError
from .estimates import EstimateReport, make_report
from .forward import (ProblemData, TimeStepper, extract_lateral_data, solve_adjoint,
                      solve_ivp)
from .mesh import (Mesh, _patch_nodes, apply_A, conormal_derivative, edge_grad_norm_sq,
                   time_levels, window_weights)


# --------------------------------------------------------------------------
# cut-off family


@dataclass(frozen=True, eq=False)
class CutoffFamily:
    eps: float
    T: float
    times: np.ndarray
    profile: np.ndarray
    derivative: np.ndarray

    @property
    def sup_derivative(self) -> float:
        return 1.5 / (self.eps * self.T)


def smoothstep(q):
    q = np.clip(q, 0.0, 1.0)
    return q * q * (3.0 - 2.0 * q)


def cutoff(eps: float, T: float, nt: int, T1: float | None = None) -> CutoffFamily:
    """Cubic smoothstep rising from 0 at eps T to 1 at 2 eps T."""
    upper = 0.5 if T1 is None else T1 / (2 * T)
    if not 0 < eps < upper:
        raise DomainError(f"eps must lie in (0, {upper:.6g}), got {eps}")
    times = time_levels(T, nt)
    q = (times - eps * T) / (eps * T)
    prof = smoothstep(q)
    qc = np.clip(q, 0.0, 1.0)
    der = 6.0 * qc * (1.0 - qc) / (eps * T)
    return CutoffFamily(eps, T, times, prof, der)


# --------------------------------------------------------------------------
# Bihari lemma


def _profile(x, times, name):
    x = np.broadcast_to(np.asarray(x, dtype=float), times.shape).copy()
    if np.any(x < 0):
        raise DomainError(f"{name} must be non-negative")
    return x


def bihari_bound(a: float, b, kk, times) -> np.ndarray:
    """exp(int_0^tau b) [sqrt(a) + 1/2 int_0^tau kk exp(-1/2 int_0^s b) ds]^2."""
    times = np.asarray(times, dtype=float)
    if a < 0:
        raise DomainError("a must be non-negative")
    b = _profile(b, times, "b")
    kk = _profile(kk, times, "kk")
    B = cumulative_trapezoid(b, times, initial=0.0)
    inner = cumulative_trapezoid(kk * np.exp(-0.5 * B), times, initial=0.0)
    return np.exp(B) * (math.sqrt(a) + 0.5 * inner) ** 2


def verify_bihari(z, a: float, b, kk, times, rtol: float = 1e-6) -> EstimateReport:
    """Check the integral hypothesis for ``z`` and, if it holds, the bound.

    A profile violating the hypothesis is reported as inapplicable
    (``extras['applicable'] = False``), which is not a failure of the lemma.
    """
    times = np.asarray(times, dtype=float)
    z = np.asarray(z, dtype=float)
    b = _profile(b, times, "b")
    kk = _profile(kk, times, "kk")
    hyp = a + cumulative_trapezoid(b * z, times, initial=0.0) \
        + cumulative_trapezoid(kk * np.sqrt(np.maximum(z, 0.0)), times, initial=0.0)
    scale = max(float(np.max(np.abs(hyp))), float(np.max(np.abs(z))), 1e-300)
    hyp_ok = bool(np.all(z <= hyp + rtol * scale))
    bound = bihari_bound(a, b, kk, times)
    gap = bound - z
    k = int(np.argmin(gap))
    extras = {"applicable": hyp_ok,
              "hypothesis_margin": float(np.min(hyp - z)),
              "bound_margin": float(gap[k])}
    if not hyp_ok:
        # bookkeeping only: the lemma says nothing about this profile
        return make_report("bihari", {"z": 0.0}, {"bound": 0.0}, context={"tau": float(times[k])},
                           extras=extras)
    rep = make_report("bihari", {"z": z[k]}, {"bound": bound[k]}, context={"tau": float(times[k])},
                      extras=extras)
    rep.tolerance = max(rep.tolerance, rtol * scale)
    return rep


# --------------------------------------------------------------------------
# data completion


@dataclass
class CompletionResult:
    u: np.ndarray
    u0: np.ndarray
    history: list
    beta: float
    residual: float
    iterations: int
    rel_residual: float
    partial: bool = False
    data_norm: float = 0.0


class ObservationOperator:
    """Conormal trace on Gamma as a sparse matrix, with quadrature weights."""

    def __init__(self, p: ProblemData):
        mesh = p.mesh
        nodes, _ = _patch_nodes(mesh, mesh.gamma_side)
        self.nodes = nodes
        # candidate nodes: within two layers of Gamma along its normal
        side = mesh.gamma_side
        axis = 0 if side in ("left", "right") else 1
        x = mesh.coords[:, axis]
        target = 1.0 if side in ("right", "top") else 0.0
        cand = np.flatnonzero(np.abs(x - target) <= 2.5 * mesh.h)
        rows, cols, vals = [], [], []
        for start in range(0, cand.size, 256):
            chunk = cand[start:start + 256]
            probe = np.zeros((chunk.size, mesh.num_nodes))
            probe[np.arange(chunk.size), chunk] = 1.0
            block = conormal_derivative(probe, p.coeffs, mesh)
            i, k = np.nonzero(block)
            rows.append(k)
            cols.append(chunk[i])
            vals.append(block[i, k])
        self.C = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(nodes.size, mesh.num_nodes))
        if mesh.dim == 1:
            self.w = np.ones(1)
        else:
            w = np.full(nodes.size, mesh.h)
            tang = mesh.coords[nodes, 1 - axis]
            w[np.isclose(tang, 0.0) | np.isclose(tang, 1.0)] = 0.5 * mesh.h
            self.w = w

    def __call__(self, U):
        return (self.C @ U.T).T

    def transpose(self, Y):
        return (self.C.T @ Y.T).T


def _obs_weights(p: ProblemData, op: ObservationOperator):
    lw = np.full(p.nt + 1, p.dt)
    lw[0] = 0.0
    return lw[:, None] * op.w[None, :]


def complete_lateral_cauchy(p: ProblemData, obs, beta: float | None = None, *,
                            tol: float = 1e-10, max_iter: int = 500,
                            stagnation: float = 1e-6) -> CompletionResult:
    """Recover the initial state from the conormal trace on Gamma.

    Minimises 1/2 |L u0 - (obs - F(0))|^2 + beta/2 |u0|^2 by conjugate
    gradients on the normal equations, with weighted norms on (0, T] x Gamma
    and on Omega.  ``obs`` has shape (nt+1, n_gamma); the level t = 0 is not
    used.  ``beta`` defaults to 1e-6 |obs|^2.
    """
    mesh = p.mesh
    op = ObservationOperator(p)
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (p.nt + 1, op.nodes.size):
        raise ValueError(f"obs must have shape {(p.nt + 1, op.nodes.size)}, got {obs.shape}")
    Wd = _obs_weights(p, op)
    data_norm = float(np.sqrt(np.sum(Wd * obs**2)))
    if beta is None:
        beta = 1e-6 * data_norm**2
    if beta < 0:
        raise DomainError("beta must be non-negative")
    stepper = TimeStepper(mesh, p.coeffs, p.dt)
    p0 = p.homogeneous()
    interior = mesh.interior
    wI = mesh.quad_weights[interior]
    sw = np.sqrt(wI)
    sd = np.sqrt(Wd)

    base = np.where(mesh.interior_mask, 0.0, p.g[0])
    u_free = solve_ivp(p, base, stepper=stepper)
    d = sd * (obs - op(u_free))
    d[0] = 0.0

    def forward(x):
        u0 = np.zeros(mesh.num_nodes)
        u0[interior] = x / sw
        return sd * op(solve_ivp(p0, u0, stepper=stepper))

    def adjoint(y):
        R = np.zeros((p.nt + 1, mesh.num_nodes))
        R[1:] = op.transpose(sd[1:] * y[1:])
        lam = solve_adjoint(p0, R, stepper=stepper)
        return lam[0, interior] / sw

    def normal(x):
        return adjoint(forward(x)) + beta * x

    rhs = adjoint(d)
    x = np.zeros(interior.size)
    r = rhs.copy()
    pdir = r.copy()
    rr = float(r @ r)
    bnorm = math.sqrt(rr)
    d2 = float(np.sum(d * d))
    history = [0.5 * d2]
    it = 0
    if bnorm > 0:
        while it < max_iter and math.sqrt(rr) > tol * bnorm:
            Ap = normal(pdir)
            alpha = rr / float(pdir @ Ap)
            x += alpha * pdir
            r -= alpha * Ap
            rr_new = float(r @ r)
            pdir = r + (rr_new / rr) * pdir
            rr = rr_new
            it += 1
            history.append(0.5 * d2 - 0.5 * float(x @ (rhs + r)))
    rel = math.sqrt(rr) / bnorm if bnorm > 0 else 0.0
    u0 = base.copy()
    u0[interior] = x / sw
    u = solve_ivp(p, u0, stepper=stepper)
    mis = sd * (obs - op(u))
    residual = float(np.sqrt(np.sum(mis[1:] ** 2))) / data_norm if data_norm > 0 else \
        float(np.sqrt(np.sum(mis[1:] ** 2)))
    return CompletionResult(u, u0, history, float(beta), residual, it, rel,
                            partial=bool(rel > stagnation), data_norm=data_norm)


def observe(u, p: ProblemData) -> np.ndarray:
    """Conormal trace of a trajectory on Gamma (the completion input)."""
    return extract_lateral_data(u, p)[1]


# --------------------------------------------------------------------------
# dependence experiment


def smooth_field(rng: np.random.Generator, mesh: Mesh, times, nmodes: int = 4,
                 vanish_on_boundary: bool = False) -> np.ndarray:
    """Truncated random Fourier sum in (t, x) with unit L2(Q_T) norm."""
    times = np.asarray(times, dtype=float)
    T = times[-1]
    tb = np.stack([np.cos(j * np.pi * times / T) for j in range(nmodes)])
    spatial = []
    for axis in range(mesh.dim):
        x = mesh.coords[:, axis]
        if vanish_on_boundary:
            spatial.append(np.stack([np.sin((k + 1) * np.pi * x) for k in range(nmodes)]))
        else:
            spatial.append(np.stack([np.cos(k * np.pi * x) for k in range(nmodes)]))
    if mesh.dim == 1:
        sb = spatial[0]
    else:
        sb = np.einsum("ai,bi->abi", spatial[0], spatial[1]).reshape(nmodes * nmodes, -1)
    coef = rng.standard_normal((nmodes, sb.shape[0]))
    decay = 1.0 / (1.0 + np.arange(nmodes))[:, None]
    F = (coef * decay).T @ tb
    F = (sb.T @ F).T
    c = window_weights(times, times[0], times[-1])
    nrm = math.sqrt(float(c @ ((F**2) @ mesh.quad_weights)))
    return F / nrm


def _l2q(F, mesh, times):
    c = window_weights(times, times[0], times[-1])
    return float(c @ ((F**2) @ mesh.quad_weights))


def data_norm_sq(df0, dg, p: ProblemData) -> float:
    """|df0|^2_{L2(Q)} + |dg|^2_{H1(0,T;L2)} + |A dg|^2_{L2(Q)}."""
    times = p.times
    Dt = np.gradient(dg, times, axis=0, edge_order=2)
    Ag = apply_A(dg, p.coeffs, p.mesh)
    return (_l2q(df0, p.mesh, times) + _l2q(dg, p.mesh, times) + _l2q(Dt, p.mesh, times)
            + _l2q(Ag, p.mesh, times))


def error_energy(e, p: ProblemData, eps: float, mu0: float) -> float:
    """|e(T)|^2 + 2 mu0 int_{2 eps T}^T |grad e|^2."""
    times = p.times
    T = p.T
    gr = edge_grad_norm_sq(e, p.mesh)
    return float((e[-1] ** 2) @ p.mesh.quad_weights
                 + 2 * mu0 * window_weights(times, 2 * eps * T, T) @ gr)


@dataclass
class DependenceResult:
    rows: list = field(default_factory=list)
    slope: float = float("nan")
    C_eps: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    medians: dict = field(default_factory=dict)

    def table(self) -> list:
        out = []
        for r in self.rows:
            row = dict(r)
            row["slope"] = self.slope
            row["C_eps"] = self.C_eps.get(r["eps"], float("nan"))
            out.append(row)
        return out


def dependence_experiment(p: ProblemData, truth, noise_levels, eps, seeds, *,
                          beta: float | None = None, nmodes: int = 4, jobs: int = 1,
                          scenario: str = "mms", completion_kw=None) -> DependenceResult:
    """Perturb (f0, g), reconstruct, and tabulate error energy against data size.

    ``eps`` may be a single value or a sequence; each reconstruction is
    evaluated for every eps.  Noise levels equal to zero give the
    reconstruction floor, stored in ``baseline`` and excluded from the fit.
    """
    from .estimates import coercivity_constants
    eps_list = [float(eps)] if np.isscalar(eps) else [float(e) for e in eps]
    truth = p.mesh.check_field(truth, "truth")
    times = p.times
    mu0, _ = coercivity_constants(p.coeffs, p.mesh)
    f0n = math.sqrt(_l2q(p.f0, p.mesh, times))
    gn = math.sqrt(_l2q(p.g, p.mesh, times))
    kw = dict(completion_kw or {})
    scale = {e: error_energy(truth, p, e, mu0) for e in eps_list}

    cells = [(i, float(eta), int(seed)) for i, eta in enumerate(noise_levels) for seed in seeds]

    def run(cell):
        i, eta, seed = cell
        rng = np.random.default_rng([seed, i])
        df0 = eta * f0n * smooth_field(rng, p.mesh, times, nmodes)
        dg = eta * gn * smooth_field(rng, p.mesh, times, nmodes)
        pp = p.with_data(f0=p.f0 + df0, g=p.g + dg)
        obs = observe(pp.g, pp)
        res = complete_lateral_cauchy(pp, obs, beta, **kw)
        e = res.u - truth
        D2 = data_norm_sq(df0, dg, p)
        return [{"scenario": scenario, "eps": ep, "eta": eta, "seed": seed, "beta": res.beta,
                 "E": error_energy(e, p, ep, mu0), "D2": D2,
                 "E_rel": error_energy(e, p, ep, mu0) / scale[ep] if scale[ep] > 0 else float("nan"),
                 "cg_iterations": res.iterations, "partial": res.partial}
                for ep in eps_list]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(run, cells))
    else:
        chunks = [run(c) for c in cells]
    out = DependenceResult(rows=[r for ch in chunks for r in ch])
    for ep in eps_list:
        sel = [r for r in out.rows if r["eps"] == ep and r["eta"] > 0 and r["D2"] > 0]
        if sel:
            out.C_eps[ep] = max(r["E"] / r["D2"] for r in sel)
        base = [r["E_rel"] for r in out.rows if r["eps"] == ep and r["eta"] == 0]
        if base:
            out.baseline[ep] = max(base)
        out.medians[ep] = {eta: float(np.median([r["E"] for r in out.rows
                                                if r["eps"] == ep and r["eta"] == eta]))
                           for eta in sorted({r["eta"] for r in out.rows})}
    fit = [r for r in out.rows if r["eps"] == eps_list[-1] and r["eta"] > 0 and r["E"] > 0]
    if len({r["eta"] for r in fit}) >= 2:
        x = np.log([r["D2"] for r in fit])
        y = np.log([r["E"] for r in fit])
        out.slope = float(np.polyfit(x, y, 1)[0])
    return out
