"""Kernel bundle, the integral operator B and the five-part nonlocal operator.

    (B u)(t, x)    = int_Omega k(t, x, y) u(t, y) dy
    (calB u)(t, x) = f1 u(T1) + f2 u(T2) + f3 int_{T1}^{T2} rho1 u
                     + B u + f4 int_{T1}^{T2} rho2 B u

Point values at T1, T2 use linear interpolation in time and the memory
integrals use the trapezoid rule of the piecewise-linear interpolant, so the
whole operator is an explicit linear map on trajectories.  Its Euclidean
transpose (``calB_adjoint``) is used by the data-completion solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DomainError, ShapeError, SingularWeightError
from .mesh import Mesh, interp_weights, window_weights
from .weights import WeightConfig, m_inf

TERM_NAMES = ("B1", "B2", "B3", "B4", "B5")


@dataclass(frozen=True, eq=False)
class KernelSet:
    """Sampled coefficients of the nonlocal operator.

    Multipliers ``f1..f4`` and kernels ``rho1, rho2`` are space-time fields of
    shape (nt+1, N) or ``None`` (identically zero).  ``k`` is ``None``, a
    dense (nt+1, N, N) array, or a callable ``k(m) -> (N, N)`` giving the
    slice at time level ``m``.
    """

    T1: float
    T2: float
    gamma: float = 3.0
    f1: np.ndarray | None = None
    f2: np.ndarray | None = None
    f3: np.ndarray | None = None
    f4: np.ndarray | None = None
    rho1: np.ndarray | None = None
    rho2: np.ndarray | None = None
    k: np.ndarray | Callable | None = None
    label: str = "custom"

    def __post_init__(self):
        if not 0 < self.T1 < self.T2:
            raise DomainError(f"need 0 < T1 < T2, got T1={self.T1}, T2={self.T2}")
        if not 0 <= self.gamma <= 3:
            raise DomainError(f"gamma must lie in [0, 3], got {self.gamma}")
        for name in ("f1", "f2", "f3", "f4", "rho1", "rho2"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        if self.k is not None and not callable(self.k):
            object.__setattr__(self, "k", np.asarray(self.k, dtype=float))

    @classmethod
    def zero(cls, T1, T2, gamma=3.0):
        return cls(T1, T2, gamma, label="zero")

    @property
    def has_k(self) -> bool:
        return self.k is not None

    @property
    def is_zero(self) -> bool:
        return self.k is None and all(
            getattr(self, n) is None or not np.any(getattr(self, n))
            for n in ("f1", "f2", "f3", "f4")
        )

    def k_at(self, m: int):
        if self.k is None:
            return None
        if callable(self.k):
            return np.asarray(self.k(m), dtype=float)
        return self.k[m]

    def k_dense(self, nlevels: int):
        if self.k is None:
            return None
        if callable(self.k):
            return np.stack([self.k_at(m) for m in range(nlevels)])
        return self.k

    def field(self, name: str, shape) -> np.ndarray:
        v = getattr(self, name)
        return np.zeros(shape) if v is None else v

    def validate(self, mesh: Mesh, times: np.ndarray) -> None:
        shape = (times.size, mesh.num_nodes)
        if not self.T2 < times[-1]:
            raise DomainError("T2 must be smaller than T")
        for name in ("f1", "f2", "f3", "f4", "rho1", "rho2"):
            v = getattr(self, name)
            if v is not None and v.shape != shape:
                raise ShapeError(f"{name} has shape {v.shape}, expected {shape}")
        if self.k is not None:
            k0 = self.k_at(0)
            if k0.shape != (mesh.num_nodes, mesh.num_nodes):
                raise ShapeError(f"k slices have shape {k0.shape}")
            if not callable(self.k) and self.k.shape[0] != times.size:
                raise ShapeError("k has wrong number of time levels")


# --------------------------------------------------------------------------
# operators


def apply_B(u_slice, k_slice, mesh: Mesh) -> np.ndarray:
    """Quadrature of int k(x, y) u(y) dy at every node x."""
    u_slice = mesh.check_field(u_slice)
    if k_slice is None:
        return np.zeros_like(u_slice)
    k_slice = np.asarray(k_slice, dtype=float)
    if k_slice.shape != (mesh.num_nodes, mesh.num_nodes):
        raise ShapeError(f"kernel slice has shape {k_slice.shape}")
    return k_slice @ (mesh.quad_weights * u_slice)


def _B_trajectory(u, kernels: KernelSet, mesh: Mesh) -> np.ndarray:
    if not kernels.has_k:
        return np.zeros_like(u)
    wu = u * mesh.quad_weights
    if callable(kernels.k):
        return np.stack([kernels.k_at(m) @ wu[m] for m in range(u.shape[0])])
    return np.einsum("mxy,my->mx", kernels.k, wu)


def _BT_trajectory(W, kernels: KernelSet, mesh: Mesh) -> np.ndarray:
    if not kernels.has_k:
        return np.zeros_like(W)
    if callable(kernels.k):
        out = np.stack([kernels.k_at(m).T @ W[m] for m in range(W.shape[0])])
    else:
        out = np.einsum("mxy,mx->my", kernels.k, W)
    return out * mesh.quad_weights


def _time_operators(kernels: KernelSet, times):
    e1 = interp_weights(times, kernels.T1)
    e2 = interp_weights(times, kernels.T2)
    c = window_weights(times, kernels.T1, kernels.T2)
    return e1, e2, c


def calB_terms(u, kernels: KernelSet, mesh: Mesh, times) -> np.ndarray:
    """All five parts of calB u over the whole trajectory, shape (5, nt+1, N)."""
    u = mesh.check_field(u)
    times = np.asarray(times, dtype=float)
    if u.shape[0] != times.size:
        raise ShapeError("trajectory does not match time levels")
    shape = u.shape
    out = np.zeros((5,) + shape)
    if kernels is None:
        return out
    e1, e2, c = _time_operators(kernels, times)
    if kernels.f1 is not None:
        out[0] = kernels.f1 * (e1 @ u)
    if kernels.f2 is not None:
        out[1] = kernels.f2 * (e2 @ u)
    if kernels.f3 is not None and kernels.rho1 is not None:
        out[2] = kernels.f3 * (c @ (kernels.rho1 * u))
    if kernels.has_k:
        Bu = _B_trajectory(u, kernels, mesh)
        out[3] = Bu
        if kernels.f4 is not None and kernels.rho2 is not None:
            out[4] = kernels.f4 * (c @ (kernels.rho2 * Bu))
    return out


def calB_trajectory(u, kernels: KernelSet, mesh: Mesh, times) -> np.ndarray:
    return calB_terms(u, kernels, mesh, times).sum(axis=0)


def apply_calB(u, kernels: KernelSet, m: int, mesh: Mesh, times, terms: bool = False):
    """calB u at time level ``m``; with ``terms=True`` returns the five parts."""
    parts = calB_terms(u, kernels, mesh, times)[:, m]
    return parts if terms else parts.sum(axis=0)


def calB_adjoint(W, kernels: KernelSet, mesh: Mesh, times) -> np.ndarray:
    """Euclidean transpose of the trajectory map u -> calB u."""
    W = mesh.check_field(W)
    out = np.zeros_like(W)
    if kernels is None:
        return out
    e1, e2, c = _time_operators(kernels, times)
    if kernels.f1 is not None:
        out += np.outer(e1, (kernels.f1 * W).sum(axis=0))
    if kernels.f2 is not None:
        out += np.outer(e2, (kernels.f2 * W).sum(axis=0))
    if kernels.f3 is not None and kernels.rho1 is not None:
        out += c[:, None] * kernels.rho1 * (kernels.f3 * W).sum(axis=0)
    if kernels.has_k:
        out += _BT_trajectory(W, kernels, mesh)
        if kernels.f4 is not None and kernels.rho2 is not None:
            S5 = (kernels.f4 * W).sum(axis=0)
            out += c[:, None] * _BT_trajectory(kernels.rho2 * S5, kernels, mesh)
    return out


# --------------------------------------------------------------------------
# hypothesis constants


def l2linf_sq(f, times, window=None) -> float:
    """||f||^2 in L2(window; Linf(Omega)), trapezoid in time."""
    if f is None:
        return 0.0
    a, b = (times[0], times[-1]) if window is None else window
    return float(window_weights(times, a, b) @ np.max(f**2, axis=1))


def linfl2_sq(f, times) -> float:
    """||f||^2 in Linf(Omega; L2(0, T))."""
    if f is None:
        return 0.0
    return float(np.max(window_weights(times, times[0], times[-1]) @ (f**2)))


def l1linf(f, times, window=None) -> float:
    if f is None:
        return 0.0
    a, b = (times[0], times[-1]) if window is None else window
    return float(window_weights(times, a, b) @ np.max(np.abs(f), axis=1))


@dataclass
class HypothesisConstants:
    K1: float = 0.0
    K2: float = 0.0
    K3: float = 0.0
    K4: float = 0.0
    K5: float = 0.0
    argmax: dict = field(default_factory=dict)
    # sup over (t, y) of l^(3-gamma) int |k| dx, compared against K6
    column_sup: float = 0.0
    violations: list = field(default_factory=list)

    @property
    def K6(self) -> float:
        return max(self.K4, self.K5)

    @property
    def flags(self) -> dict:
        fin = {k: bool(np.isfinite(getattr(self, k))) for k in ("K1", "K2", "K3", "K4", "K5")}
        return {
            "rho1_bound": fin["K1"],
            "rho2_bound": fin["K2"],
            "row_L1": fin["K3"],
            "upper_level_set": fin["K4"],
            "lower_level_set": fin["K5"],
            "column_L1_by_K6": bool(self.column_sup <= self.K6 * (1 + 1e-12)),
        }

    @property
    def finite(self) -> bool:
        return all(np.isfinite([self.K1, self.K2, self.K3, self.K4, self.K5]))

    def as_dict(self) -> dict:
        return {"K1": self.K1, "K2": self.K2, "K3": self.K3, "K4": self.K4,
                "K5": self.K5, "K6": self.K6, "column_sup": self.column_sup}


def _log_abs(x):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(x))


def _max_exp(logvals):
    """max of exp(logvals) and its flat argmax; -inf everywhere gives 0."""
    k = int(np.argmax(logvals))
    v = logvals.flat[k]
    if v == -np.inf:
        return 0.0, k
    with np.errstate(over="ignore"):
        return float(np.exp(v)), k


def _interior_levels(times):
    T = times[-1]
    return np.flatnonzero((times > 0) & (times < T))


def _split_column_sums(k_slice, psi, w):
    """Column sums of |k| weighted by w over {psi(x) > psi(y)} and the rest."""
    upper = psi[:, None] > psi[None, :]
    ak = np.abs(k_slice) * w[:, None]
    s_up = np.where(upper, ak, 0.0).sum(axis=0)
    s_lo = np.where(upper, 0.0, ak).sum(axis=0)
    return s_up, s_lo


def hypothesis_constants(kernels: KernelSet, cfg: WeightConfig, mesh: Mesh, times) -> HypothesisConstants:
    """Smallest constants satisfying the discrete kernel hypotheses.

    Suprema are grid maxima over interior time levels.  Exponential factors
    are handled in log space; a non-finite supremum is reported in
    ``violations`` instead of raising.
    """
    times = np.asarray(times, dtype=float)
    T = times[-1]
    levels = _interior_levels(times)
    lt = times[levels] * (T - times[levels])
    s0, c1, g = cfg.s0, cfg.c1, kernels.gamma
    out = HypothesisConstants()
    log_e = cfg.log_carleman_factor(times[levels], s0) / 2.0  # s0 * alpha

    for name, rho, sel in (("K1", kernels.rho1, np.ones(levels.size, bool)),
                           ("K2", kernels.rho2, (times[levels] >= kernels.T1 - 1e-12)
                            & (times[levels] <= kernels.T2 + 1e-12))):
        if rho is None or not np.any(sel):
            continue
        logr = _log_abs(rho[levels][sel]) - log_e[sel]
        val, k = _max_exp(logr)
        m_idx, x_idx = np.unravel_index(k, logr.shape)
        out.argmax[name] = (int(levels[sel][m_idx]), int(x_idx))
        setattr(out, name, val)

    if kernels.has_k:
        w = mesh.quad_weights
        psi = cfg.psi.values
        k3 = np.empty((levels.size, mesh.num_nodes))
        log4 = np.empty_like(k3)
        k5 = np.empty_like(k3)
        col = np.empty_like(k3)
        for i, m in enumerate(levels):
            ks = kernels.k_at(m)
            k3[i] = lt[i] ** g * (np.abs(ks) @ w)
            s_up, s_lo = _split_column_sums(ks, psi, w)
            log4[i] = _log_abs(s_up) + (3 - g) * np.log(lt[i]) + 2 * s0 * c1 / lt[i]
            k5[i] = lt[i] ** (3 - g) * s_lo
            col[i] = lt[i] ** (3 - g) * (s_up + s_lo)
        for name, arr in (("K3", k3), ("K5", k5)):
            k = int(np.argmax(arr))
            m_idx, x_idx = np.unravel_index(k, arr.shape)
            setattr(out, name, float(arr.flat[k]))
            out.argmax[name] = (int(levels[m_idx]), int(x_idx))
        val, k = _max_exp(log4)
        m_idx, y_idx = np.unravel_index(k, log4.shape)
        out.K4 = val
        out.argmax["K4"] = (int(levels[m_idx]), int(y_idx))
        out.column_sup = float(col.max())

    for name in ("K1", "K2", "K3", "K4", "K5"):
        if not np.isfinite(getattr(out, name)):
            out.violations.append(f"{name} is not finite: kernel too singular near t in {{0, T}}")
    return out


def defining_ratio(name: str, kernels: KernelSet, cfg: WeightConfig, mesh: Mesh, times, index) -> float:
    """Evaluate the ratio defining K_name at a single (level, node) index."""
    m, j = index
    T = times[-1]
    t = times[m]
    lt = t * (T - t)
    g = kernels.gamma
    if name in ("K1", "K2"):
        rho = kernels.rho1 if name == "K1" else kernels.rho2
        return float(abs(rho[m, j]) / np.exp(cfg.s0 * cfg.alpha(t)[j]))
    ks = kernels.k_at(m)
    w = mesh.quad_weights
    if name == "K3":
        return float(lt**g * np.sum(np.abs(ks[j]) * w))
    psi = cfg.psi.values
    upper = psi > psi[j]
    col = np.abs(ks[:, j]) * w
    if name == "K4":
        return float(lt ** (3 - g) * np.exp(2 * cfg.s0 * cfg.c1 / lt) * col[upper].sum())
    if name == "K5":
        return float(lt ** (3 - g) * col[~upper].sum())
    raise KeyError(name)


@dataclass
class SmallnessResult:
    H0: float
    H1: float
    bound0: float
    bound1: float
    H1_linf_l2: float

    @property
    def pass0(self) -> bool:
        return self.H0 <= self.bound0

    @property
    def pass1(self) -> bool:
        return self.H1 <= self.bound1


def smallness_check(consts: HypothesisConstants, kernels: KernelSet, cfg: WeightConfig,
                    C1: float, times) -> SmallnessResult:
    """Evaluate H0(s0) <= s0^3 / 2 and H1(s0) <= exp(-lam |psi|) / (2 s0).

    The multiplier sums run over f1, f2 in L2(0,T; Linf); rho1 pairs with K1
    and rho2 with K2.
    """
    if not C1 > 0:
        raise DomainError("C1 must be positive")
    times = np.asarray(times, dtype=float)
    T, T1, T2 = times[-1], kernels.T1, kernels.T2
    s0, d, c1 = cfg.s0, cfg.delta, cfg.c1
    F12 = l2linf_sq(kernels.f1, times) + l2linf_sq(kernels.f2, times)
    F12_alt = linfl2_sq(kernels.f1, times) + linfl2_sq(kernels.f2, times)
    F3 = l2linf_sq(kernels.f3, times)
    F4 = l2linf_sq(kernels.f4, times)
    K345 = consts.K3 * (consts.K4 + consts.K5)
    H0 = 6 * C1 * (
        (2.0**-6 * T**6 * (1 / (T2 - T1) + s0 ** (1 + d)) + 2.0**-2 * T**3 * s0 * c1) * F12
        + 2.0**-6 * T**6 * (T2 - T1) * consts.K1**2 * F3
        + K345
        + (T2 - T1) * consts.K2**2 * K345 * F4
    )
    M = m_inf(T1, T2, T)
    H1 = 6 * C1 / M * s0 ** (-(1 + d)) * F12
    H1_alt = 6 * C1 / M * s0 ** (-(1 + d)) * F12_alt
    return SmallnessResult(
        H0=float(H0), H1=float(H1),
        bound0=0.5 * s0**3,
        bound1=0.5 / s0 * np.exp(-cfg.lam * cfg.psi_max),
        H1_linf_l2=float(H1_alt),
    )


def holmgren_bound(consts: HypothesisConstants, gamma: float, t, T: float):
    """sqrt(K3 K6) l(t)^(gamma - 3), the L2 operator-norm bound for B(t)."""
    t = np.asarray(t, dtype=float)
    lt = t * (T - t)
    if gamma < 3 and np.any(lt <= 0):
        raise SingularWeightError("Holmgren bound is singular at t in {0, T} for gamma < 3")
    out = np.sqrt(consts.K3 * consts.K6) * (lt ** (gamma - 3) if gamma != 3 else np.ones_like(lt))
    return float(out) if out.ndim == 0 else out


def with_scaled(kernels: KernelSet, factor: float) -> KernelSet:
    """Scale every multiplier and k by ``factor`` (rho kept)."""
    def sc(v):
        if v is None:
            return None
        if callable(v):
            return lambda m: factor * v(m)
        return factor * v
    return replace(kernels, f1=sc(kernels.f1), f2=sc(kernels.f2), f3=sc(kernels.f3),
                   f4=sc(kernels.f4), k=sc(kernels.k))
