"""Temporal weight l, pseudo-convex function psi and the Carleman weights.

    l(t)        = t (T - t)
    phi(x)      = exp(lam psi(x))
    alpha(t, x) = (exp(lam psi(x)) - exp(2 lam |psi|_inf)) / l(t)
    c1          = exp(2 lam |psi|_inf) - exp(lam psi_min)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, SingularWeightError
from .mesh import EllipticCoefficients, Mesh, _patch_nodes, nodal_gradient


def temporal_weight(t, T: float):
    t = np.asarray(t, dtype=float)
    if T <= 0:
        raise DomainError("T must be positive")
    if np.any(t < 0) or np.any(t > T):
        raise DomainError(f"t must lie in [0, {T}]")
    out = t * (T - t)
    return float(out) if out.ndim == 0 else out


def temporal_weight_derivative(t, T: float):
    return T - 2.0 * np.asarray(t, dtype=float)


def m_inf(T1: float, T2: float, T: float) -> float:
    """Minimum of l over [T1, T2]; l is concave so an endpoint attains it."""
    if not 0 < T1 < T2 < T:
        raise DomainError(f"need 0 < T1 < T2 < T, got {T1}, {T2}, {T}")
    return min(T1 * (T - T1), T2 * (T - T2))


def min_l_on(a: float, b: float, T: float) -> float:
    """Minimum of l over [a, b] within [0, T]."""
    if not 0 <= a <= b <= T:
        raise DomainError(f"need 0 <= a <= b <= T, got {a}, {b}, {T}")
    return min(a * (T - a), b * (T - b))


@dataclass(frozen=True, eq=False)
class PseudoConvexFn:
    values: np.ndarray
    gradient: np.ndarray

    @property
    def psi_max(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def psi_min(self) -> float:
        return float(np.min(self.values))

    @classmethod
    def from_values(cls, values, mesh: Mesh):
        values = mesh.check_field(values, "psi")
        return cls(values.copy(), nodal_gradient(values, mesh))

    @classmethod
    def from_function(cls, fn, mesh: Mesh):
        return cls.from_values(mesh.sample(fn), mesh)


def default_psi(mesh: Mesh) -> PseudoConvexFn:
    """psi equal to the coordinate normal to Gamma, increasing towards Gamma.

    Gamma = {x = 1} gives psi = x, Gamma = {x = 0} gives psi = 1 - x, and
    likewise for the sides of the square.
    """
    side = mesh.gamma_side
    axis = 0 if side in ("left", "right") else 1
    x = mesh.coords[:, axis]
    values = x if side in ("right", "top") else 1.0 - x
    return PseudoConvexFn.from_values(values, mesh)


@dataclass(frozen=True)
class AdmissibilityReport:
    positive: bool
    gradient_nonzero: bool
    conormal_nonpositive: bool
    worst_positive: tuple = ()
    worst_gradient: tuple = ()
    worst_conormal: tuple = ()

    @property
    def ok(self) -> bool:
        return self.positive and self.gradient_nonzero and self.conormal_nonpositive

    def failures(self) -> list:
        out = []
        if not self.positive:
            out.append(f"psi not positive in the interior (node {self.worst_positive[0]}, value {self.worst_positive[1]:.3g})")
        if not self.gradient_nonzero:
            out.append(f"grad psi vanishes (node {self.worst_gradient[0]}, |grad| {self.worst_gradient[1]:.3g})")
        if not self.conormal_nonpositive:
            out.append(f"conormal derivative of psi positive off Gamma (node {self.worst_conormal[0]}, value {self.worst_conormal[1]:.3g})")
        return out


def check_psi_admissible(psi: PseudoConvexFn, mesh: Mesh, coeffs: EllipticCoefficients,
                         gamma_patch=None, grad_tol: float = 1e-12) -> AdmissibilityReport:
    """Check psi > 0 inside, |grad psi| > 0 everywhere and D_nu_A psi <= 0 off Gamma.

    ``gamma_patch`` is a side name (default: the mesh's Gamma side).  Corner
    nodes off Gamma are tested against the normal of every side they lie on.
    """
    if psi.values.shape != (mesh.num_nodes,):
        raise ShapeError("psi was sampled on a different mesh")
    gamma_side = mesh.gamma_side if gamma_patch is None else gamma_patch
    gamma_nodes, _ = _patch_nodes(mesh, gamma_side)
    in_gamma = np.zeros(mesh.num_nodes, dtype=bool)
    in_gamma[gamma_nodes] = True

    vals = psi.values[mesh.interior]
    k = int(np.argmin(vals))
    positive = bool(vals[k] > 0)
    worst_pos = (int(mesh.interior[k]), float(vals[k]))

    gnorm = np.linalg.norm(psi.gradient, axis=1)
    k = int(np.argmin(gnorm))
    grad_ok = bool(gnorm[k] > grad_tol)
    worst_grad = (k, float(gnorm[k]))

    worst_con = (-1, -np.inf)
    for side, mask in mesh.side_masks.items():
        nodes = np.flatnonzero(mask & ~in_gamma)
        if nodes.size == 0:
            continue
        nu = mesh.normals[side]
        vals = np.einsum("kij,j,ki->k", coeffs.a[nodes], nu, psi.gradient[nodes])
        j = int(np.argmax(vals))
        if vals[j] > worst_con[1]:
            worst_con = (int(nodes[j]), float(vals[j]))
    con_ok = bool(worst_con[1] <= 1e-12)
    return AdmissibilityReport(positive, grad_ok, con_ok, worst_pos, worst_grad, worst_con)


@dataclass(frozen=True, eq=False)
class WeightConfig:
    """Parameters of the Carleman weight.

    ``lam_hat`` and ``s0_hat`` are the admissible lower bounds of the
    Carleman estimate; they are stored for reports only.
    """

    lam: float
    s0: float
    T: float
    psi: PseudoConvexFn
    delta: float = 0.5
    lam_hat: float | None = None
    s0_hat: float | None = None

    def __post_init__(self):
        if not self.lam >= 1:
            raise DomainError(f"lambda must be >= 1, got {self.lam}")
        if not self.s0 > 0:
            raise DomainError(f"s0 must be positive, got {self.s0}")
        if not 0 < self.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.T > 0:
            raise DomainError(f"T must be positive, got {self.T}")

    @property
    def psi_max(self) -> float:
        return self.psi.psi_max

    @property
    def psi_min(self) -> float:
        return self.psi.psi_min

    @property
    def c1(self) -> float:
        return c1_lambda(self.lam, self.psi_max, self.psi_min)

    def phi(self) -> np.ndarray:
        return phi(self.psi.values, self.lam)

    def alpha(self, t) -> np.ndarray:
        """alpha at times ``t`` (scalar or 1-D) and every node."""
        return alpha(t, self.psi.values, self.psi_max, self.lam, self.T)

    def carleman_factor(self, t, s: float | None = None) -> np.ndarray:
        s = self.s0 if s is None else s
        return carleman_factor(t, self.psi.values, self.psi_max, self.lam, self.T, s)

    def log_carleman_factor(self, t, s: float | None = None) -> np.ndarray:
        """2 s alpha with -inf at t in {0, T}."""
        s = self.s0 if s is None else s
        return log_carleman_factor(t, self.psi.values, self.psi_max, self.lam, self.T, s)

    def alpha_min(self, t):
        """alpha at the minimiser of psi, i.e. -c1 / l(t), computed the same way."""
        return alpha(t, np.array([self.psi_min]), self.psi_max, self.lam, self.T)[..., 0]


def phi(psi_values, lam: float):
    out = np.exp(lam * np.asarray(psi_values, dtype=float))
    return float(out) if out.ndim == 0 else out


def c1_lambda(lam: float, psi_max: float, psi_min: float) -> float:
    if psi_min > psi_max:
        raise DomainError("psi_min exceeds |psi|_inf")
    return float(np.exp(2 * lam * psi_max) - np.exp(lam * psi_min))


def _time_array(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > T):
        raise DomainError(f"t must lie in [0, {T}]")
    return t


def alpha(t, psi_values, psi_max: float, lam: float, T: float):
    """alpha_lambda(t, x); shape ``t.shape + psi.shape``."""
    t = _time_array(t, T)
    lt = t * (T - t)
    if np.any(lt <= 0):
        raise SingularWeightError("alpha is singular at t = 0 and t = T")
    num = np.exp(lam * np.asarray(psi_values, dtype=float)) - np.exp(2 * lam * psi_max)
    out = num / lt[..., None] if lt.ndim else num / lt
    return out


def log_carleman_factor(t, psi_values, psi_max, lam, T, s):
    t = _time_array(t, T)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    psi_values = np.asarray(psi_values, dtype=float)
    out = np.full(t.shape + psi_values.shape, -np.inf)
    ok = (t > 0) & (t < T)
    if np.any(ok):
        out[ok] = 2 * s * alpha(t[ok], psi_values, psi_max, lam, T)
    return out[0] if scalar else out


def carleman_factor(t, psi_values, psi_max, lam, T, s):
    """exp(2 s alpha); exactly 0 at t in {0, T} by continuity."""
    if s <= 0:
        raise DomainError("s must be positive")
    return np.exp(log_carleman_factor(t, psi_values, psi_max, lam, T, s))
