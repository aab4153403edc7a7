"""Implicit-Euler solver for D_t u - A u = calB u + f0 with Dirichlet data g.

calB reads u at T1, T2 and over [T1, T2], i.e. possibly in the future of the
current step, so the nonlocal term is resolved by Picard iteration over whole
trajectories: freeze calB u^(k), march in time to get u^(k+1).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PicardDivergenceError, ShapeError
from .kernels import KernelSet, calB_adjoint, calB_trajectory, l1linf
from .mesh import (EllipticCoefficients, Mesh, conormal_derivative, l2_norm,
                   operator_matrix, time_levels, window_weights)


@dataclass(frozen=True, eq=False)
class ProblemData:
    mesh: Mesh
    coeffs: EllipticCoefficients
    T: float
    nt: int
    f0: np.ndarray
    g: np.ndarray
    kernels: KernelSet | None = None

    def __post_init__(self):
        shape = (self.nt + 1, self.mesh.num_nodes)
        f0 = np.asarray(self.f0, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if f0.shape != shape or g.shape != shape:
            raise ShapeError(f"f0 and g must have shape {shape}")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "g", g)
        if self.kernels is not None:
            self.kernels.validate(self.mesh, self.times)

    @property
    def times(self) -> np.ndarray:
        return time_levels(self.T, self.nt)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def has_nonlocal(self) -> bool:
        return self.kernels is not None and not self.kernels.is_zero

    def with_data(self, f0=None, g=None, kernels=...):
        kw = {}
        if f0 is not None:
            kw["f0"] = f0
        if g is not None:
            kw["g"] = g
        if kernels is not ...:
            kw["kernels"] = kernels
        return replace(self, **kw)

    def homogeneous(self):
        """Same operator and kernels with f0 = g = 0."""
        z = np.zeros((self.nt + 1, self.mesh.num_nodes))
        return replace(self, f0=z, g=z.copy())


@dataclass
class PicardInfo:
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list)      # L2(Q_T) of successive differences
    history_sup: list = field(default_factory=list)  # max_t L2(Omega) of successive differences

    @property
    def ratios(self) -> np.ndarray:
        h = np.asarray(self.history_sup)
        if h.size < 2:
            return np.array([])
        with np.errstate(divide="ignore", invalid="ignore"):
            return h[1:] / h[:-1]


class TimeStepper:
    """Cached factorisation of I/dt - A (interior rows; identity on boundary)."""

    def __init__(self, mesh: Mesh, coeffs: EllipticCoefficients, dt: float):
        self.mesh = mesh
        self.dt = dt
        A = operator_matrix(coeffs, mesh)
        N = mesh.num_nodes
        interior = mesh.interior_mask.astype(float)
        self.P_I = interior
        self.P_B = 1.0 - interior
        E = sp.diags(interior / dt) - A + sp.diags(1.0 - interior)
        self.A = A
        self._lu = spla.splu(sp.csc_matrix(E))
        self.N = N

    def march(self, u0, F, G) -> np.ndarray:
        """u^0 = u0 (boundary from G), then E u^m = P_I(u^{m-1}/dt + F^m) + P_B G^m."""
        nl = F.shape[0]
        U = np.empty((nl, self.N))
        U[0] = self.P_I * u0 + self.P_B * G[0]
        for m in range(1, nl):
            rhs = self.P_I * (U[m - 1] / self.dt + F[m]) + self.P_B * G[m]
            U[m] = self._lu.solve(rhs)
        return U

    def march_adjoint(self, R) -> np.ndarray:
        """Solve S^T L = R for the block bidiagonal time-stepping matrix S."""
        nl = R.shape[0]
        L = np.empty_like(R)
        L[-1] = self._lu.solve(R[-1], trans="T")
        for m in range(nl - 2, 0, -1):
            L[m] = self._lu.solve(R[m] + self.P_I * L[m + 1] / self.dt, trans="T")
        L[0] = R[0] + self.P_I * L[1] / self.dt
        return L

    def dissipativity(self) -> float:
        """Largest eigenvalue of the symmetric part of A on interior nodes."""
        idx = self.mesh.interior
        Aii = self.A[idx][:, idx].toarray()
        return float(np.linalg.eigvalsh(0.5 * (Aii + Aii.T)).max())


def _qt_norm(X, times, mesh):
    c = window_weights(times, times[0], times[-1])
    return float(np.sqrt(max(c @ (X**2 @ mesh.quad_weights), 0.0)))


def _sup_norm(X, mesh):
    return float(l2_norm(X, mesh).max())


def solve_ivp(p: ProblemData, u0, *, tol: float = 1e-10, max_iter: int = 50,
              stepper: TimeStepper | None = None, return_info: bool = False):
    """Solve the initial-value-augmented problem on the full time grid.

    Returns the trajectory (nt+1, N); with ``return_info`` also a
    :class:`PicardInfo`.  Picard stops when successive trajectories differ by
    less than ``tol`` relative to the current iterate in L2(Q_T).
    """
    mesh = p.mesh
    u0 = mesh.check_field(u0, "u0")
    bnd = mesh.boundary
    if not np.allclose(u0[bnd], p.g[0, bnd], rtol=1e-10, atol=1e-12):
        warnings.warn("u0 disagrees with g(0) on the boundary; boundary data wins",
                      stacklevel=2)
    stepper = stepper or TimeStepper(mesh, p.coeffs, p.dt)
    times = p.times
    U = stepper.march(u0, p.f0, p.g)
    info = PicardInfo()
    if p.has_nonlocal:
        info.converged = False
        for k in range(1, max_iter + 1):
            Unew = stepper.march(u0, p.f0 + calB_trajectory(U, p.kernels, mesh, times), p.g)
            D = Unew - U
            d2, dsup = _qt_norm(D, times, mesh), _sup_norm(D, mesh)
            info.history.append(d2)
            info.history_sup.append(dsup)
            info.iterations = k
            U = Unew
            scale = _qt_norm(U, times, mesh)
            if d2 <= tol * scale or d2 == 0.0:
                info.converged = True
                break
            if not np.isfinite(d2) or (len(info.history) > 3 and d2 > 1e6 * info.history[0]):
                break
        if not info.converged:
            raise PicardDivergenceError(
                f"Picard iteration did not converge in {info.iterations} sweeps "
                f"(last residual {info.history[-1]:.3e})", info.history)
    return (U, info) if return_info else U


def solve_adjoint(p: ProblemData, R, *, tol: float = 1e-10, max_iter: int = 50,
                  stepper: TimeStepper | None = None) -> np.ndarray:
    """Solve K^T L = R where K U = rhs is the full discrete space-time system.

    K = S - P calB, with S the time-stepping matrix and P the interior
    projection on levels m >= 1.
    """
    mesh = p.mesh
    stepper = stepper or TimeStepper(mesh, p.coeffs, p.dt)
    L = stepper.march_adjoint(R)
    if not p.has_nonlocal:
        return L
    times = p.times
    P = np.ones_like(R) * stepper.P_I
    P[0] = 0.0
    history = []
    for _ in range(max_iter):
        Lnew = stepper.march_adjoint(R + calB_adjoint(P * L, p.kernels, mesh, times))
        d = float(np.linalg.norm(Lnew - L))
        history.append(d)
        L = Lnew
        if d <= tol * max(float(np.linalg.norm(L)), 1e-300) or d == 0.0:
            return L
    raise PicardDivergenceError("adjoint Picard iteration did not converge", history)


def picard_contraction_bound(p: ProblemData, stepper: TimeStepper | None = None) -> float:
    """A-priori contraction factor of the Picard map in max_t ||.||_L2(Omega).

    Uses the discrete Schur (Holmgren) bound of every kernel slice and the
    dissipativity of the implicit Euler step.  Returns ``inf`` when the step
    is not contractive on its own.
    """
    if not p.has_nonlocal:
        return 0.0
    mesh, ker, times, dt = p.mesh, p.kernels, p.times, p.dt
    stepper = stepper or TimeStepper(mesh, p.coeffs, dt)
    mu = max(stepper.dissipativity(), 0.0)
    if mu * dt >= 1:
        return float("inf")
    growth = (1.0 / (1.0 - mu * dt)) ** p.nt
    w = mesh.quad_weights
    nl = times.size
    beta = np.zeros(nl)
    if ker.has_k:
        for m in range(nl):
            ak = np.abs(ker.k_at(m))
            beta[m] = np.sqrt((ak @ w).max() * (w @ ak).max())

    def sup(f):
        return np.zeros(nl) if f is None else np.abs(f).max(axis=1)

    R1 = l1linf(ker.rho1, times, (ker.T1, ker.T2)) if ker.rho1 is not None else 0.0
    c = window_weights(times, ker.T1, ker.T2)
    R2 = float(c @ (sup(ker.rho2) * beta))
    per = sup(ker.f1) + sup(ker.f2) + sup(ker.f3) * R1 + beta + sup(ker.f4) * R2
    return float(growth * dt * per[1:].sum())


def manufacture(p: ProblemData, u_star) -> np.ndarray:
    """Source f0 = D_t u* - A u* - calB u* for the discrete scheme.

    Backward differences in time (forward at t = 0), so that ``solve_ivp``
    reproduces ``u_star`` up to the Picard tolerance when g = u* on the
    boundary.
    """
    mesh = p.mesh
    u_star = mesh.check_field(u_star, "u_star")
    dt = p.dt
    Dt = np.empty_like(u_star)
    Dt[1:] = (u_star[1:] - u_star[:-1]) / dt
    Dt[0] = (u_star[1] - u_star[0]) / dt
    A = operator_matrix(p.coeffs, mesh)
    Au = (A @ u_star.T).T
    Bu = calB_trajectory(u_star, p.kernels, mesh, p.times) if p.kernels is not None else 0.0
    return Dt - Au - Bu


def extend_to_boundary(F, mesh: Mesh) -> np.ndarray:
    """Overwrite boundary entries by linear extrapolation from the interior."""
    G = mesh.grid(np.array(F, dtype=float, copy=True))
    lead = G.ndim - mesh.dim
    for ax in range(mesh.dim):
        a = lead + ax
        idx = lambda k: tuple(slice(None) if j != a else k for j in range(G.ndim))  # noqa: E731
        G[idx(0)] = 2 * G[idx(1)] - G[idx(2)]
        G[idx(-1)] = 2 * G[idx(-2)] - G[idx(-3)]
    return mesh.flat(G)


def reduce_homogeneous(u, p: ProblemData):
    """(v, f_tilde) with v = u - g and f_tilde = f0 - D_t g + A g + calB g.

    D_t g uses centred differences (second-order one-sided at the ends); A g
    is extended to boundary nodes by linear extrapolation.
    """
    mesh = p.mesh
    u = mesh.check_field(u)
    g = p.g
    v = u - g
    Dtg = np.gradient(g, p.dt, axis=0, edge_order=2) if p.nt >= 2 else np.gradient(g, p.dt, axis=0)
    A = operator_matrix(p.coeffs, mesh)
    Ag = extend_to_boundary((A @ g.T).T, mesh)
    Bg = calB_trajectory(g, p.kernels, mesh, p.times) if p.kernels is not None else 0.0
    return v, p.f0 - Dtg + Ag + Bg


def time_reverse(p: ProblemData) -> ProblemData:
    """Transform data of the backward problem (D_t + A) into the forward one.

    With w(t) = u(T - t): f0 -> -f0(T - t), g -> g(T - t), T1 -> T - T2,
    T2 -> T - T1, and the kernels re-indexed so that the generic form of
    calB represents the reflected operator.  The map is an involution.
    """
    def rev(h, sign=1.0):
        if h is None:
            return None
        return sign * h[::-1].copy()

    ker = p.kernels
    new_ker = None
    if ker is not None:
        if ker.k is None:
            k_new = None
        elif callable(ker.k):
            kf, nt = ker.k, p.nt
            k_new = lambda m: -kf(nt - m)  # noqa: E731
        else:
            k_new = -ker.k[::-1].copy()
        new_ker = replace(
            ker,
            T1=p.T - ker.T2, T2=p.T - ker.T1,
            f1=rev(ker.f2, -1.0), f2=rev(ker.f1, -1.0),
            f3=rev(ker.f3), rho1=rev(ker.rho1, -1.0),
            f4=rev(ker.f4, -1.0), rho2=rev(ker.rho2, -1.0),
            k=k_new,
        )
    return replace(p, f0=rev(p.f0, -1.0), g=rev(p.g), kernels=new_ker)


def extract_lateral_data(u, p: ProblemData):
    """(Dirichlet trace on the boundary, conormal trace on Gamma) per level."""
    u = p.mesh.check_field(u)
    return u[:, p.mesh.boundary], conormal_derivative(u, p.coeffs, p.mesh)
