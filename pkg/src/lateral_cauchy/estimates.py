"""Evaluation of the weighted inequalities on discrete trajectories.

Every check returns an :class:`EstimateReport`.  Integrals against the
Carleman weight exp(2 s alpha) are evaluated with the weight divided by its
grid maximum; the common factor exp(log_scale) is recorded in the report
context and cancels from every ratio and every pass/fail decision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, PreconditionError
from .kernels import (HypothesisConstants, KernelSet, calB_terms, l2linf_sq,
                      _B_trajectory)
from .mesh import (EllipticCoefficients, Mesh, apply_A, edge_grad_norm_sq, hessian,
                   l2_norm, nodal_gradient, window_weights)
from .weights import WeightConfig, min_l_on


@dataclass
class EstimateReport:
    name: str
    lhs_terms: dict
    rhs_terms: dict
    tolerance: float = 0.0
    context: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def lhs(self) -> float:
        return float(sum(self.lhs_terms.values()))

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.margin >= -self.tolerance)

    def row(self) -> dict:
        out = {"name": self.name}
        out.update({k: v for k, v in self.context.items()})
        out.update({f"lhs:{k}": v for k, v in self.lhs_terms.items()})
        out.update({f"rhs:{k}": v for k, v in self.rhs_terms.items()})
        out.update({f"extra:{k}": v for k, v in self.extras.items()})
        out.update({"lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                    "tolerance": self.tolerance, "pass": self.passed})
        return out

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g} "
                f"margin={self.margin:.3g} (tol {self.tolerance:.3g})")


def make_report(name, lhs_terms, rhs_terms, *, rel=1e-8, slack=0.0, context=None,
                extras=None) -> EstimateReport:
    """Report with tolerance rel*(|lhs|+|rhs|) + slack*|rhs|."""
    lhs_terms = {k: float(v) for k, v in lhs_terms.items()}
    rhs_terms = {k: float(v) for k, v in rhs_terms.items()}
    lhs, rhs = sum(lhs_terms.values()), sum(rhs_terms.values())
    tol = rel * (abs(lhs) + abs(rhs)) + slack * abs(rhs)
    return EstimateReport(name, lhs_terms, rhs_terms, tol, dict(context or {}),
                          dict(extras or {}))


# --------------------------------------------------------------------------
# quadrature helpers


def _l(times, T):
    return times * (T - times)


def _time_weights(times):
    return window_weights(times, times[0], times[-1])


def _qt(F, times, mesh, window=None) -> float:
    """Integral over the time window x Omega of a space-time field."""
    a, b = (times[0], times[-1]) if window is None else window
    return float(window_weights(times, a, b) @ (F @ mesh.quad_weights))


def _scaled_weight(cfg: WeightConfig, times, s):
    """exp(2 s alpha - shift) on the grid (0 at t in {0, T}) and the shift."""
    L = cfg.log_carleman_factor(times, s)
    finite = np.isfinite(L)
    shift = float(L[finite].max()) if finite.any() else 0.0
    E = np.zeros_like(L)
    E[finite] = np.exp(L[finite] - shift)
    return E, shift


def _l_power(times, T, p):
    """l(t)^p at interior levels, 0 at the endpoints."""
    lt = _l(times, T)
    out = np.zeros_like(lt)
    ok = lt > 0
    out[ok] = lt[ok] ** p
    return out


def _gl_nodes(times, a, b, npts=8):
    """Gauss-Legendre nodes on each time step intersecting [a, b].

    Returns (step index, fraction within the step, time, weight).
    """
    x, w = np.polynomial.legendre.leggauss(npts)
    ms, ps, ts, ws = [], [], [], []
    for m in range(times.size - 1):
        lo, hi = max(a, times[m]), min(b, times[m + 1])
        if hi <= lo:
            continue
        tq = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        ms.append(np.full(npts, m))
        ps.append((tq - times[m]) / (times[m + 1] - times[m]))
        ts.append(tq)
        ws.append(0.5 * (hi - lo) * w)
    return (np.concatenate(ms), np.concatenate(ps), np.concatenate(ts), np.concatenate(ws))


def _interp_eval(w, times, m, p):
    """Piecewise-linear interpolant and its time derivative at GL nodes."""
    dt = times[m + 1] - times[m]
    val = (1 - p)[:, None] * w[m] + p[:, None] * w[m + 1]
    der = (w[m + 1] - w[m]) / dt[:, None]
    return val, der


def _check_vanishing(v, mesh, name="v"):
    bnd = np.abs(v[:, mesh.boundary]).max() if mesh.boundary.size else 0.0
    scale = max(np.abs(v).max(), 1e-300)
    if bnd > 1e-10 * scale and bnd > 1e-14:
        raise PreconditionError(
            f"{name} must vanish on the boundary (max |{name}| there is {bnd:.3e})")


# --------------------------------------------------------------------------
# Carleman estimate and the weighted estimate


def _carleman_blocks(v, cfg, mesh, times, s):
    T = cfg.T
    E, shift = _scaled_weight(cfg, times, s)
    c = _time_weights(times)
    w = mesh.quad_weights
    lm3 = _l_power(times, T, -3.0)[:, None]
    lm1 = _l_power(times, T, -1.0)[:, None]
    l1 = _l(times, T)[:, None]
    grad2 = (nodal_gradient(v, mesh) ** 2).sum(axis=-1)
    Dt = np.gradient(v, times, axis=0, edge_order=2)
    hess2 = (hessian(v, mesh) ** 2).sum(axis=(-1, -2))
    phi = cfg.phi()[None, :]

    def q(F):
        return float(c @ ((F * E) @ w))

    return {
        "v": q(lm3 * v**2), "grad": q(lm1 * grad2), "Dt": q(l1 * Dt**2),
        "hess": q(l1 * hess2),
        "v_phi": q(lm3 * phi**3 * v**2), "grad_phi": q(lm1 * phi * grad2),
        "Dt_phi": q(l1 * Dt**2 / phi), "hess_phi": q(l1 * hess2 / phi),
    }, E, shift


def carleman_sides(v, f_tilde, terms, s: float, cfg: WeightConfig, mesh: Mesh, times,
                   C1: float | None = None, mode: str = "carleman",
                   slack: float = 0.0) -> EstimateReport:
    """Both sides of the Carleman estimate (``mode='carleman'``) or of the
    weighted estimate at s = s0 (``mode='weighted'``).

    ``terms`` are the five parts of calB v, shape (5, nt+1, N), or ``None``.
    The report carries the smallest C1 making the inequality hold
    (``extras['C1_min']``); with ``C1`` given, pass/fail refers to it,
    otherwise the calibrated C1 is used and the check passes trivially.
    The first inequality of the chain (unweighted blocks <= phi-weighted
    blocks) is recorded in ``extras['chain_ok']``.
    """
    times = np.asarray(times, dtype=float)
    v = mesh.check_field(v, "v")
    f_tilde = mesh.check_field(f_tilde, "f_tilde")
    _check_vanishing(v, mesh)
    if not s > 0:
        raise DomainError("s must be positive")
    lam, psi_max = cfg.lam, cfg.psi_max
    blocks, E, shift = _carleman_blocks(v, cfg, mesh, times, s)
    c = _time_weights(times)
    w = mesh.quad_weights
    src = float(c @ ((E * f_tilde**2) @ w))
    if mode == "carleman":
        third = np.exp(-lam * psi_max) / s
        lhs = {"s3_v": s**3 * blocks["v"], "s_grad": s * blocks["grad"],
               "third": third * (blocks["Dt"] + blocks["hess"])}
        middle = {"s3_v_phi": s**3 * blocks["v_phi"], "s_grad_phi": s * blocks["grad_phi"],
                  "third_phi": (blocks["Dt_phi"] + blocks["hess_phi"]) / s}
        rhs_int = {"f_tilde": src}
        if terms is not None:
            for j in range(5):
                rhs_int[f"B{j + 1}"] = float(c @ ((E * terms[j] ** 2) @ w))
    elif mode == "weighted":
        lhs = {"half_s3_v": 0.5 * s**3 * blocks["v"], "s_grad": s * blocks["grad"],
               "half_Dt": 0.5 * np.exp(-lam * psi_max) / s * blocks["Dt"]}
        middle = {}
        rhs_int = {"f_tilde": src}
    else:
        raise ValueError(f"unknown mode {mode!r}")
    total_lhs = sum(lhs.values())
    total_int = sum(rhs_int.values())
    if total_int > 0:
        C1_min = total_lhs / (6.0 * total_int)
    else:
        C1_min = 0.0 if total_lhs == 0 else np.inf
    C1_used = C1_min if C1 is None else C1
    rhs = {k: 6.0 * C1_used * val for k, val in rhs_int.items()} if np.isfinite(C1_used) else {"inf": np.inf}
    extras = {"C1_min": C1_min}
    if middle:
        extras["chain_ok"] = bool(total_lhs <= sum(middle.values()) * (1 + 1e-12) + 1e-300)
        extras.update({f"middle:{k}": val for k, val in middle.items()})
    ctx = {"s": s, "lambda": lam, "n": mesh.n, "nt": times.size - 1, "log_scale": shift,
           "mode": mode, "C1": C1_used}
    return make_report(f"carleman[{mode}]", lhs, rhs, slack=slack, context=ctx, extras=extras)


def calibrate_carleman(v, f_tilde, terms, s_grid, cfg, mesh, times, mode="carleman"):
    """Minimal empirical C1 for each s in ``s_grid``."""
    return np.array([carleman_sides(v, f_tilde, terms, s, cfg, mesh, times, mode=mode).extras["C1_min"]
                     for s in s_grid])


# --------------------------------------------------------------------------
# trace lemma


def _trace_parts(w, r0, cfg, mesh, times, T1, T2, Tj, npts=8, shift=None):
    """Pieces of the weighted trace inequality with the interpolant in time."""
    T = cfg.T
    wq = mesh.quad_weights
    m, p, tq, gw = _gl_nodes(times, T1, T2, npts)
    val, der = _interp_eval(w, times, m, p)
    from .mesh import interp_weights
    wT = interp_weights(times, Tj) @ w
    if r0 > 0:
        Lq = 2 * r0 * cfg.alpha(tq)
        LT = 2 * r0 * cfg.alpha(Tj)
        if shift is None:
            shift = max(float(Lq.max()), float(LT.max()))
        Eq, ET = np.exp(Lq - shift), np.exp(LT - shift)
    else:
        shift = 0.0
        Eq, ET = np.ones((tq.size, mesh.num_nodes)), np.ones(mesh.num_nodes)
    ltq = _l(tq, T)
    lp = np.abs(T - 2 * tq)
    return {
        "trace": float((wT**2 * ET) @ wq),
        "Dt": float(gw @ ((der**2 * Eq) @ wq)),
        "v": float(gw @ ((val**2 * Eq) @ wq)),
        "v_lprime": float(gw @ (lp / ltq**2 * ((val**2 * Eq) @ wq))),
        "v_lm3": float(gw @ (ltq**-3 * ((val**2 * Eq) @ wq))),
        "Dt_l": float(gw @ (ltq * ((der**2 * Eq) @ wq))),
        "shift": shift,
    }


def trace_check(w, r0: float, eps: float, j: int, kernels: KernelSet, cfg: WeightConfig,
                mesh: Mesh, times, npts: int = 8) -> EstimateReport:
    """Weighted trace inequality at T_j for the piecewise-linear interpolant of w."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    if r0 < 0:
        raise DomainError("r0 must be non-negative")
    if j not in (1, 2):
        raise DomainError("j must be 1 or 2")
    times = np.asarray(times, dtype=float)
    w = mesh.check_field(w, "w")
    T1, T2 = kernels.T1, kernels.T2
    Tj = T1 if j == 1 else T2
    P = _trace_parts(w, r0, cfg, mesh, times, T1, T2, Tj, npts)
    rhs = {"eps2_Dt": eps**2 * P["Dt"],
           "window": P["v"] / (T2 - T1), "eps_m2": P["v"] / eps**2,
           "weight_derivative": 2 * r0 * cfg.c1 * P["v_lprime"]}
    ctx = {"r0": r0, "eps": eps, "j": j, "log_scale": P["shift"]}
    return make_report("trace", {"trace": P["trace"]}, rhs, context=ctx)


# --------------------------------------------------------------------------
# per-term bounds


def term_bounds(v, kernels: KernelSet, consts: HypothesisConstants | None, cfg: WeightConfig,
                mesh: Mesh, times, slack: float = 0.0) -> dict:
    """Weighted integrals of each calB_j v against their dominating expressions.

    B1, B2: the trace-lemma chain with eps = s0^(-(1+delta)/2); the left side
    carries the weight at (T_j, x); the (t, x)-weighted variant
    is reported in extras.  B3: memory bound with K1.  B4: Schur split with
    K3 (K4 + K5).  B5: composed bound with K2.
    """
    if consts is None:
        raise PreconditionError("term_bounds needs hypothesis constants")
    times = np.asarray(times, dtype=float)
    v = mesh.check_field(v, "v")
    _check_vanishing(v, mesh)
    T, T1, T2 = cfg.T, kernels.T1, kernels.T2
    s0, d, c1 = cfg.s0, cfg.delta, cfg.c1
    E, shift = _scaled_weight(cfg, times, s0)
    c = _time_weights(times)
    wq = mesh.quad_weights
    terms = calB_terms(v, kernels, mesh, times)
    lm3 = _l_power(times, T, -3.0)[:, None]
    I_v = float(c @ ((lm3 * v**2 * E) @ wq))
    ctx = {"s0": s0, "lambda": cfg.lam, "n": mesh.n, "nt": times.size - 1,
           "log_scale": shift, "kernel": kernels.label}
    out = {}

    M = min_l_on(T1, T2, T)
    P = _trace_parts(v, s0, cfg, mesh, times, T1, T2, T1, shift=shift)
    P2 = _trace_parts(v, s0, cfg, mesh, times, T1, T2, T2, shift=shift)
    for j, f, PP, Tj in ((1, kernels.f1, P, T1), (2, kernels.f2, P2, T2)):
        name = f"B{j}"
        if f is None:
            out[name] = make_report(name, {"weighted": 0.0}, {"bound": 0.0}, context=ctx)
            continue
        from .mesh import interp_weights
        vT = interp_weights(times, Tj) @ v
        ET = np.exp(2 * s0 * cfg.alpha(Tj) - shift)
        fsq_t = c @ f**2
        lhs = float((vT**2 * ET * fsq_t) @ wq)
        variant = float(c @ (((f * vT[None, :]) ** 2 * E) @ wq))
        F = l2linf_sq(f, times)
        rhs = {
            "Dt": s0 ** (-(1 + d)) * F / M * PP["Dt_l"],
            "v": F * (2.0**-6 * T**6 * (1 / (T2 - T1) + s0 ** (1 + d)) + 2.0**-2 * T**3 * s0 * c1)
            * PP["v_lm3"],
        }
        out[name] = make_report(name, {"weighted": lhs}, rhs, slack=slack, context=ctx,
                                extras={"lhs_tx_weighted": variant})

    def weighted(j):
        return float(c @ ((E * terms[j] ** 2) @ wq))

    K345 = consts.K3 * (consts.K4 + consts.K5)
    out["B3"] = make_report(
        "B3", {"weighted": weighted(2)},
        {"bound": (T2 - T1) * l2linf_sq(kernels.f3, times) * 2.0**-6 * T**6 * consts.K1**2 * I_v},
        slack=slack, context=ctx)
    out["B4"] = make_report("B4", {"weighted": weighted(3)}, {"bound": K345 * I_v},
                            slack=slack, context=ctx)
    out["B5"] = make_report(
        "B5", {"weighted": weighted(4)},
        {"bound": (T2 - T1) * consts.K2**2 * K345 * l2linf_sq(kernels.f4, times) * I_v},
        slack=slack, context=ctx)
    return out


def h_split_sup(kernels: KernelSet, cfg: WeightConfig, mesh: Mesh, times) -> float:
    """max over interior (t, y) of int h_{s0,lam}(t, x, y) |k(t, x, y)| dx."""
    if not kernels.has_k:
        return 0.0
    times = np.asarray(times, dtype=float)
    T, g, s0 = cfg.T, kernels.gamma, cfg.s0
    w = mesh.quad_weights
    best = 0.0
    for m in np.flatnonzero((times > 0) & (times < T)):
        a = cfg.alpha(times[m])
        lt = times[m] * (T - times[m])
        # log h = (3 - g) log l + 2 s0 (alpha(x) - alpha(y))
        logh = (3 - g) * np.log(lt) + 2 * s0 * (a[:, None] - a[None, :])
        vals = (np.exp(logh) * np.abs(kernels.k_at(m)) * w[:, None]).sum(axis=0)
        best = max(best, float(vals.max()))
    return best


def holmgren_ratios(V, kernels: KernelSet, mesh: Mesh, times) -> np.ndarray:
    """||B(t) v|| / ||v|| for a stack of trajectories V, shape (nv, nt+1)."""
    out = np.zeros(V.shape[:2])
    for i, v in enumerate(V):
        Bv = _B_trajectory(v, kernels, mesh)
        nv = l2_norm(v, mesh)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[i] = np.where(nv > 0, l2_norm(Bv, mesh) / nv, 0.0)
    return out


# --------------------------------------------------------------------------
# coercivity


def coercivity_constants(coeffs: EllipticCoefficients, mesh: Mesh):
    """(mu0, mu1) for -<A w, w> >= mu0/2 |grad w|^2 - mu1 |w|^2."""
    mu0 = coeffs.mu0
    bn = float(np.sqrt(np.sum(np.max(np.abs(coeffs.b), axis=0) ** 2)))
    a0 = float(np.max(np.abs(coeffs.a0)))
    mu1 = a0 + (0.5 * bn * bn / mu0 if bn > 0 else 0.0)
    return mu0, mu1


def garding_check(w, coeffs: EllipticCoefficients, mesh: Mesh) -> EstimateReport:
    """Discrete Garding inequality for a field vanishing on the boundary."""
    w = mesh.check_field(w, "w")
    if w.ndim != 1:
        raise ValueError("garding_check expects a single space field")
    _check_vanishing(w[None, :], mesh, "w")
    mu0, mu1 = coercivity_constants(coeffs, mesh)
    form = -float((apply_A(w, coeffs, mesh) * w) @ mesh.quad_weights)
    rhs = 0.5 * mu0 * float(edge_grad_norm_sq(w, mesh)) - mu1 * float((w**2) @ mesh.quad_weights)
    # inequality form >= rhs, written as lhs <= rhs with lhs = rhs_bound
    return make_report("garding", {"lower_bound": rhs}, {"form": form},
                       context={"mu0": mu0, "mu1": mu1})


# --------------------------------------------------------------------------
# continuous dependence


@dataclass
class DependenceConstants:
    eps: float
    mu0: float
    mu1: float
    b_eps: np.ndarray
    b_eps_variant: np.ndarray
    J1: float
    J2: float
    J3: float
    J4: float
    J5: float
    C2: float
    C3: float
    C4: float
    C1: float
    sigma_sup: float
    min_l: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("eps", "mu0", "mu1", "J1", "J2", "J3", "J4",
                                               "J5", "C2", "C3", "C4", "C1", "sigma_sup",
                                               "min_l")}


def _check_eps(eps, T1, T):
    if not 0 < eps < T1 / (2 * T):
        raise DomainError(f"eps must lie in (0, T1/(2T)) = (0, {T1 / (2 * T):.6g}), got {eps}")


def _b_profile(times, T, eps, mu1, K36, gamma, exponent):
    lt = _l(times, T)
    chi = (times > eps * T) & (times < T)
    prof = np.zeros_like(times)
    prof[chi] = lt[chi] ** exponent
    return 2.0 * (mu1 + 1.0 + np.sqrt(K36) * prof)


def dependence_constants(eps: float, kernels: KernelSet, consts: HypothesisConstants,
                         cfg: WeightConfig, C1: float, mesh: Mesh, times,
                         coeffs: EllipticCoefficients) -> DependenceConstants:
    """b_eps, J1..J5 and C2..C4 for the cut-off energy argument.

    b_eps uses l^(3 - gamma); ``b_eps_variant`` carries the
    l^(gamma - 3) exponent of the Holmgren bound.
    """
    times = np.asarray(times, dtype=float)
    T, T1, T2, g = cfg.T, kernels.T1, kernels.T2, kernels.gamma
    _check_eps(eps, T1, T)
    if not C1 > 0:
        raise DomainError("C1 must be positive")
    from .inverse import cutoff
    sig = cutoff(eps, T, times.size - 1, T1=T1)
    mu0, mu1 = coercivity_constants(coeffs, mesh)
    K36 = consts.K3 * consts.K6
    b = _b_profile(times, T, eps, mu1, K36, g, 3.0 - g)
    b_var = _b_profile(times, T, eps, mu1, K36, g, g - 3.0)
    J1 = l2linf_sq(kernels.f1, times) + l2linf_sq(kernels.f2, times)
    J2 = (1 / (T2 - T1) + 1) * J1 + l2linf_sq(kernels.rho1, times) * l2linf_sq(kernels.f3, times)
    M = min_l_on(T1, T2, T)
    J3 = (K36 * max(M ** (2 * g - 3), 2.0 ** (6 - 4 * g) * T ** (4 * g - 6))
          * l2linf_sq(kernels.rho2, times, (T1, T2)) * l2linf_sq(kernels.f4, times))
    J4 = J2 + 2 * sig.sup_derivative**2
    m = min_l_on(eps * T, T2, T)
    x = 2 * cfg.s0 * cfg.c1 / m
    ex = np.exp(-x)
    C2, C3, C4 = ex, m * ex, 2.0**6 * T**-6 * ex
    s0 = cfg.s0
    # 1/C_k = exp(x) * (...): sum in log space, zero coefficients dropped
    parts = [(J1 * s0 * np.exp(cfg.lam * cfg.psi_max), 1.0 / m), (J3 * s0**-3, 1.0),
             (J4 * s0**-3, 2.0**-6 * T**6)]
    logs = [np.log(12 * C1 * c * f) + x for c, f in parts if c * f > 0]
    J5 = float(np.exp(np.logaddexp.reduce(logs))) if logs else 0.0
    return DependenceConstants(eps, mu0, mu1, b, b_var, J1, J2, J3, J4, float(J5),
                               C2, C3, C4, C1, sig.sup_derivative, m)


def _cum(y, times):
    return cumulative_trapezoid(y, times, initial=0.0)


def energy_terms(v, f_tilde, sigma, mesh: Mesh, times, mu0):
    """Time profiles entering the cut-off energy inequality."""
    v_eps = sigma[:, None] * v
    nv_eps2 = (v_eps**2) @ mesh.quad_weights
    grad2 = edge_grad_norm_sq(v_eps, mesh)
    z = nv_eps2 + mu0 * _cum(grad2, times)
    ft_norm = l2_norm(f_tilde, mesh)
    return z, nv_eps2, ft_norm, v_eps


def energy_profiles(v, f_tilde, bundle: DependenceConstants, kernels: KernelSet, mesh: Mesh,
                    times, *, f_coeff: float = 1.0, b_profile=None) -> dict:
    """z_eps and the Bihari data (a, b, kk) of the cut-off energy inequality.

    z(tau) <= a + int_0^tau b |v_eps|^2 + int_0^tau kk |v_eps|, with
    kk = f_coeff |sigma f_tilde|; since |v_eps|^2 <= z this is the Bihari
    hypothesis for z.
    """
    from .inverse import cutoff
    times = np.asarray(times, dtype=float)
    T = times[-1]
    v = mesh.check_field(v, "v")
    _check_vanishing(v, mesh)
    T1, T2 = kernels.T1, kernels.T2
    sig = cutoff(bundle.eps, T, times.size - 1, T1=T1)
    z, nv_eps2, ft_norm, _ = energy_terms(v, f_tilde, sig.profile, mesh, times, bundle.mu0)
    b = bundle.b_eps if b_profile is None else np.asarray(b_profile, dtype=float)
    nv2 = (v**2) @ mesh.quad_weights
    Dt = np.gradient(v, times, axis=0, edge_order=2)
    nDt2 = (Dt**2) @ mesh.quad_weights
    lm3 = _l_power(times, T, -3.0)
    win = window_weights(times, T1, T2)
    ramp = window_weights(times, bundle.eps * T, 2 * bundle.eps * T)
    a = float(bundle.J1 * (win @ nDt2) + bundle.J2 * (win @ nv2) + bundle.J3 * (win @ (lm3 * nv2))
              + 2 * bundle.sigma_sup**2 * (ramp @ nv2))
    kk = f_coeff * sig.profile * ft_norm
    return {"z": z, "a": a, "b": b, "kk": kk, "nv_eps2": nv_eps2}


def energy_inequality(v, f_tilde, bundle: DependenceConstants, kernels: KernelSet, mesh: Mesh,
                      times, *, slack: float = 0.05, f_coeff: float = 1.0,
                      b_profile=None, name="energy") -> EstimateReport:
    """Cut-off energy inequality at every tau; the report holds the worst tau.

    ``f_coeff`` multiplies the source term and ``b_profile`` overrides b_eps;
    the defaults give the reference form (coefficient 1, b_eps).
    """
    times = np.asarray(times, dtype=float)
    P = energy_profiles(v, f_tilde, bundle, kernels, mesh, times, f_coeff=f_coeff,
                        b_profile=b_profile)
    z, nv_eps2 = P["z"], P["nv_eps2"]
    bz = _cum(P["b"] * nv_eps2, times)
    fz = _cum(P["kk"] * np.sqrt(nv_eps2), times)
    const = P["a"]
    rhs = bz + fz + const
    gap = rhs - z - slack * rhs
    k = int(np.argmin(gap))
    ctx = {"eps": bundle.eps, "tau": float(times[k]), "f_coeff": f_coeff}
    return make_report(name, {"z_eps": z[k]},
                       {"b_term": bz[k], "source": fz[k], "window_terms": const},
                       rel=1e-8, slack=slack, context=ctx,
                       extras={"min_relative_margin": float(np.min((rhs - z) / np.maximum(rhs, 1e-300)))})


def apriori_bounds(v, f_tilde, bundle: DependenceConstants, cfg: WeightConfig, mesh: Mesh,
                   times, T2: float) -> dict:
    """Trajectory bounds on [eps T, T2] implied by the weighted estimate."""
    times = np.asarray(times, dtype=float)
    T = times[-1]
    s0 = cfg.s0
    win = window_weights(times, bundle.eps * T, T2)
    w = mesh.quad_weights
    ft2 = float(_time_weights(times) @ ((f_tilde**2) @ w))
    Dt = np.gradient(v, times, axis=0, edge_order=2)
    lm3 = _l_power(times, T, -3.0)
    C1 = bundle.C1
    out = {}
    out["v_L2"] = make_report("apriori:v", {"int": win @ ((v**2) @ w)},
                              {"bound": 12 * C1 / bundle.C4 * s0**-3 * ft2})
    out["Dt_L2"] = make_report("apriori:Dt", {"int": win @ ((Dt**2) @ w)},
                               {"bound": 12 * C1 / bundle.C3 * s0 * np.exp(cfg.lam * cfg.psi_max) * ft2})
    out["v_lm3"] = make_report("apriori:v_lm3", {"int": win @ (lm3 * ((v**2) @ w))},
                               {"bound": 12 * C1 / bundle.C2 * s0**-3 * ft2})
    return out


def ftilde_bound(f0, g, kernels: KernelSet, consts: HypothesisConstants, coeffs, mesh: Mesh,
                 times, eps: float) -> float:
    """Right side of the closing estimate for int_{eps T}^T ||f_tilde|| dt."""
    from .mesh import interp_weights
    times = np.asarray(times, dtype=float)
    T, T1, T2, gm = times[-1], kernels.T1, kernels.T2, kernels.gamma
    w = mesh.quad_weights

    def l2q(F, window=None):
        return np.sqrt(max(_qt(F**2, times, mesh, window), 0.0))

    Dtg = np.gradient(g, times, axis=0, edge_order=2)
    Ag = apply_A(g, coeffs, mesh)
    K36 = np.sqrt(consts.K3 * consts.K6)
    M = min_l_on(T1, T2, T)
    inner = l2q(f0) + l2q(Dtg) + l2q(Ag)
    for f, Tj in ((kernels.f1, T1), (kernels.f2, T2)):
        if f is not None:
            inner += l2q(f) * float(np.sqrt(((interp_weights(times, Tj) @ g) ** 2) @ w))
    rho1 = np.sqrt(l2linf_sq(kernels.rho1, times, (T1, T2)))
    rho2 = np.sqrt(l2linf_sq(kernels.rho2, times, (T1, T2)))
    inner += np.sqrt(l2linf_sq(kernels.f3, times)) * rho1 * l2q(g, (T1, T2))
    inner += K36 * M ** (gm - 3) * np.sqrt(l2linf_sq(kernels.f4, times)) * rho2 * l2q(g)
    lint = window_weights(times, eps * T, T) @ _l_power(times, T, 2 * gm - 6)
    return float(np.sqrt(T) * inner + K36 * np.sqrt(lint) * l2q(g))


def final_bound(u, g, f_tilde, bundle: DependenceConstants, mesh: Mesh, times,
                tau_index: int | None = None) -> EstimateReport:
    """Assembled stability bound for u = v + g at a time level in [2 eps T, T]."""
    times = np.asarray(times, dtype=float)
    T = times[-1]
    m = times.size - 1 if tau_index is None else tau_index
    tau = times[m]
    if tau < 2 * bundle.eps * T - 1e-12:
        raise DomainError("tau must lie in [2 eps T, T]")
    w = mesh.quad_weights
    mu0 = bundle.mu0
    gu = edge_grad_norm_sq(u, mesh)
    gg = edge_grad_norm_sq(g, mesh)
    lhs = {"u_tau": float((u[m] ** 2) @ w),
           "grad": mu0 * float(window_weights(times, 2 * bundle.eps * T, tau) @ gu)}
    c = _time_weights(times)
    ft = l2_norm(f_tilde, mesh)
    ft_L2 = float(np.sqrt(c @ ft**2))
    eb = np.exp(0.5 * float(c @ bundle.b_eps))
    chi_int = float(window_weights(times, bundle.eps * T, T) @ ft)
    rhs = {"g_tau": 2 * float((g[m] ** 2) @ w),
           "grad_g": 2 * mu0 * float(window_weights(times, 0.0, tau) @ gg),
           "source": 2 * (np.sqrt(bundle.J5) * eb * ft_L2 + eb * chi_int) ** 2}
    return make_report("stability", lhs, rhs, context={"eps": bundle.eps, "tau": float(tau)})
