"""Uniform tensor grids on (0,1) and (0,1)^2, the divergence-form operator
A(x, D), conormal traces and trapezoidal quadrature.

Fields are plain numpy arrays.  A space field has shape ``(N,)`` where ``N``
is the number of mesh nodes; a space-time field has shape ``(nt + 1, N)`` on
the uniform time levels ``t_m = m T / nt``.  In 2D the node ``(i, j)`` with
``x1 = i h`` and ``x2 = j h`` is stored at flat index ``i * n + j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError, ShapeError

_SIDES_1D = {"left": (0, -1.0), "right": (0, 1.0)}
_SIDES_2D = {
    "left": (0, -1.0),
    "right": (0, 1.0),
    "bottom": (1, -1.0),
    "top": (1, 1.0),
}
_ALIASES = {
    "0": "left", "x=0": "left", "x1=0": "left",
    "1": "right", "x=1": "right", "x1=1": "right",
    "x2=0": "bottom", "x2=1": "top",
}


@dataclass(frozen=True, eq=False)
class Mesh:
    geometry: str
    n: int
    gamma_side: str
    h: float
    coords: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    gamma_mask: np.ndarray
    quad_weights: np.ndarray
    side_masks: dict = field(repr=False)
    normals: dict = field(repr=False)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.num_nodes, dtype=bool)
        m[self.interior] = True
        return m

    @property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask

    @property
    def gamma(self) -> np.ndarray:
        """Flat indices of the observation patch."""
        return np.flatnonzero(self.gamma_mask)

    def grid(self, f: np.ndarray) -> np.ndarray:
        """Reshape trailing node axis to the tensor grid."""
        f = np.asarray(f)
        return f.reshape(f.shape[:-1] + self.shape)

    def flat(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        return f.reshape(f.shape[: f.ndim - self.dim] + (self.num_nodes,))

    def check_field(self, f, name="field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1:] != (self.num_nodes,):
            raise ShapeError(
                f"{name} has trailing dimension {f.shape[-1:]} but mesh has "
                f"{self.num_nodes} nodes"
            )
        return f

    def sample(self, fn: Callable[..., np.ndarray]) -> np.ndarray:
        """Evaluate ``fn(x)`` (1D) or ``fn(x1, x2)`` (2D) at the nodes."""
        return np.asarray(
            np.broadcast_to(fn(*self.coords.T), (self.num_nodes,)), dtype=float
        ).copy()


def _canonical_side(spec, geometry) -> str:
    key = str(spec).strip().lower()
    key = _ALIASES.get(key, key)
    sides = _SIDES_1D if geometry == "interval" else _SIDES_2D
    if key not in sides:
        raise ConfigError(
            f"unknown gamma specification {spec!r} for {geometry}; "
            f"expected one of {sorted(sides)}"
        )
    return key


def build_mesh(geometry: str, n: int, gamma_spec="right") -> Mesh:
    """Uniform grid with spacing ``1/(n-1)`` and boundary split into sides.

    ``gamma_spec`` names the observed side: ``left``/``right`` on the interval
    (aliases ``0``/``1``), plus ``bottom``/``top`` on the square.  Corners of
    the square belong to Gamma whenever the Gamma side contains them.
    """
    if geometry not in ("interval", "rectangle"):
        raise ConfigError(f"unknown geometry {geometry!r}")
    n = int(n)
    if n < 3:
        raise DomainError(f"need at least 3 nodes per axis, got {n}")
    side = _canonical_side(gamma_spec, geometry)
    h = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n)
    w1 = np.full(n, h)
    w1[[0, -1]] = 0.5 * h

    if geometry == "interval":
        coords = x[:, None]
        weights = w1.copy()
        side_masks = {
            "left": np.arange(n) == 0,
            "right": np.arange(n) == n - 1,
        }
        table = _SIDES_1D
    else:
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        coords = np.column_stack([X1.ravel(), X2.ravel()])
        weights = np.outer(w1, w1).ravel()
        I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        I, J = I.ravel(), J.ravel()
        side_masks = {
            "left": I == 0,
            "right": I == n - 1,
            "bottom": J == 0,
            "top": J == n - 1,
        }
        table = _SIDES_2D

    bmask = np.zeros(coords.shape[0], dtype=bool)
    for m in side_masks.values():
        bmask |= m
    normals = {}
    for name, (axis, sign) in table.items():
        nu = np.zeros(coords.shape[1])
        nu[axis] = sign
        normals[name] = nu
    for m in side_masks.values():
        m.setflags(write=False)

    return Mesh(
        geometry=geometry,
        n=n,
        gamma_side=side,
        h=h,
        coords=coords,
        interior=np.flatnonzero(~bmask),
        boundary=np.flatnonzero(bmask),
        gamma_mask=side_masks[side].copy(),
        quad_weights=weights,
        side_masks=side_masks,
        normals=normals,
    )


# --------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True, eq=False)
class EllipticCoefficients:
    """Coefficients of A = sum D_i(a_ij D_j) + sum b_j D_j + a0 at mesh nodes.

    ``a`` has shape (N, d, d), ``b`` (N, d), ``a0`` (N,).
    """

    a: np.ndarray
    b: np.ndarray
    a0: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise ShapeError(f"a must have shape (N, d, d), got {a.shape}")
        if not np.allclose(a, np.swapaxes(a, 1, 2), rtol=0, atol=1e-14):
            raise DomainError("coefficient matrix a_ij is not symmetric")
        b = np.asarray(self.b, dtype=float)
        a0 = np.asarray(self.a0, dtype=float)
        if b.shape != a.shape[:2] or a0.shape != a.shape[:1]:
            raise ShapeError("b and a0 must match the node count of a")
        if self.mu0 <= 0:
            raise DomainError(f"operator not uniformly elliptic (mu0={self.mu0})")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a0", a0)

    @property
    def mu0(self) -> float:
        """Smallest eigenvalue of a(x) over the nodes."""
        return float(np.linalg.eigvalsh(np.asarray(self.a, dtype=float)).min())

    @classmethod
    def from_functions(cls, mesh: Mesh, a=None, b=None, a0=None):
        """Build from callables or constants.

        ``a`` may be a scalar (isotropic), a length-d sequence (diagonal), a
        d x d matrix, or a callable of the coordinates returning a per-node
        version of any of these.  ``b`` is a length-d vector (or per-node
        (N, d) / callable), ``a0`` a scalar or per-node field.
        """
        N, d = mesh.num_nodes, mesh.dim

        def ev(v):
            return np.asarray(v(*mesh.coords.T) if callable(v) else v, dtype=float)

        A = np.zeros((N, d, d))
        av = ev(1.0 if a is None else a)
        if av.ndim == 0 or av.shape == (N,) and N != d:
            A[:] = np.eye(d) * np.broadcast_to(av, (N,))[:, None, None]
        elif av.shape == (d,):
            A[:] = np.diag(av)
        elif av.shape == (d, d):
            A[:] = av
        elif av.shape == (N, d):
            A[:, np.arange(d), np.arange(d)] = av
        elif av.shape == (N, d, d):
            A[:] = av
        else:
            raise ShapeError(f"cannot interpret a with shape {av.shape}")

        B = np.zeros((N, d))
        if b is not None:
            bv = ev(b)
            if bv.ndim == 0:
                B[:] = bv
            elif bv.shape == (d,):
                B[:] = bv[None, :]
            elif bv.shape == (N,) and d == 1:
                B[:, 0] = bv
            elif bv.shape == (N, d):
                B[:] = bv
            else:
                raise ShapeError(f"cannot interpret b with shape {bv.shape}")
        A0 = np.zeros(N)
        if a0 is not None:
            A0[:] = np.broadcast_to(ev(a0), (N,))
        return cls(A, B, A0)

    @classmethod
    def identity(cls, mesh: Mesh):
        return cls.from_functions(mesh)


# --------------------------------------------------------------------------
# operator


def operator_matrix(coeffs: EllipticCoefficients, mesh: Mesh) -> sp.csr_matrix:
    """Sparse matrix of A(x, D) with empty rows at boundary nodes.

    Second-order terms use the flux form with a averaged to half-nodes; the
    mixed terms a_12 use nested centred differences; first-order terms are
    centred.
    """
    if coeffs.a.shape[0] != mesh.num_nodes or coeffs.a.shape[1] != mesh.dim:
        raise ShapeError("coefficients do not match mesh")
    n, h, d = mesh.n, mesh.h, mesh.dim
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    if d == 1:
        i = np.arange(1, n - 1)
        a = coeffs.a[:, 0, 0]
        am = 0.5 * (a[i] + a[i - 1])
        ap = 0.5 * (a[i] + a[i + 1])
        b = coeffs.b[i, 0]
        add(i, i - 1, am / h**2 - b / (2 * h))
        add(i, i + 1, ap / h**2 + b / (2 * h))
        add(i, i, -(am + ap) / h**2 + coeffs.a0[i])
    else:
        I, J = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
        I, J = I.ravel(), J.ravel()

        def idx(i, j):
            return i * n + j

        k = idx(I, J)
        diag = coeffs.a0[k].copy()
        for axis, (di, dj) in enumerate(((1, 0), (0, 1))):
            a = coeffs.a[:, axis, axis]
            kp, km = idx(I + di, J + dj), idx(I - di, J - dj)
            ap = 0.5 * (a[k] + a[kp])
            am = 0.5 * (a[k] + a[km])
            b = coeffs.b[k, axis]
            add(k, km, am / h**2 - b / (2 * h))
            add(k, kp, ap / h**2 + b / (2 * h))
            diag -= (am + ap) / h**2
        add(k, k, diag)
        a12 = coeffs.a[:, 0, 1]
        if np.any(a12 != 0):
            c = 1.0 / (4 * h**2)
            # D_1(a12 D_2 f)
            for s in (1, -1):
                w = s * a12[idx(I + s, J)] * c
                add(k, idx(I + s, J + 1), w)
                add(k, idx(I + s, J - 1), -w)
            # D_2(a21 D_1 f)
            for s in (1, -1):
                w = s * a12[idx(I, J + s)] * c
                add(k, idx(I + 1, J + s), w)
                add(k, idx(I - 1, J + s), -w)

    N = mesh.num_nodes
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )


def apply_A(f, coeffs: EllipticCoefficients, mesh: Mesh) -> np.ndarray:
    """A(x, D) f at interior nodes; boundary entries are 0.

    Accepts a space field or any stack of them along leading axes.
    """
    f = mesh.check_field(f)
    M = operator_matrix(coeffs, mesh)
    flat = f.reshape(-1, mesh.num_nodes)
    return (M @ flat.T).T.reshape(f.shape)


# --------------------------------------------------------------------------
# derivatives


def nodal_gradient(f, mesh: Mesh) -> np.ndarray:
    """Gradient at every node, shape ``f.shape + (d,)``.

    Centred in the interior and one-sided three-point (second order) at the
    boundary.
    """
    f = mesh.check_field(f)
    g = mesh.grid(f)
    lead = f.ndim - 1
    comps = np.gradient(g, mesh.h, axis=tuple(range(lead, lead + mesh.dim)), edge_order=2)
    if mesh.dim == 1:
        comps = [comps]
    return np.stack([mesh.flat(c) for c in comps], axis=-1)


def _second_diff(g, h, axis):
    out = np.empty_like(g)
    n = g.shape[axis]
    sl = lambda s: tuple(slice(None) if k != axis % g.ndim else s for k in range(g.ndim))  # noqa: E731
    out[sl(slice(1, -1))] = (g[sl(slice(2, None))] - 2 * g[sl(slice(1, -1))] + g[sl(slice(None, -2))]) / h**2
    if n >= 4:
        out[sl(0)] = (2 * g[sl(0)] - 5 * g[sl(1)] + 4 * g[sl(2)] - g[sl(3)]) / h**2
        out[sl(-1)] = (2 * g[sl(-1)] - 5 * g[sl(-2)] + 4 * g[sl(-3)] - g[sl(-4)]) / h**2
    else:
        out[sl(0)] = out[sl(1)]
        out[sl(-1)] = out[sl(-2)]
    return out


def hessian(f, mesh: Mesh) -> np.ndarray:
    """Second derivatives D_i D_j f, shape ``f.shape + (d, d)``."""
    f = mesh.check_field(f)
    g = mesh.grid(f)
    lead = f.ndim - 1
    d = mesh.dim
    H = np.empty(f.shape + (d, d))
    for i in range(d):
        H[..., i, i] = mesh.flat(_second_diff(g, mesh.h, lead + i))
    if d == 2:
        g1 = np.gradient(g, mesh.h, axis=lead, edge_order=2)
        m = mesh.flat(np.gradient(g1, mesh.h, axis=lead + 1, edge_order=2))
        H[..., 0, 1] = m
        H[..., 1, 0] = m
    return H


def edge_grad_norm_sq(w, mesh: Mesh) -> np.ndarray:
    """||grad w||^2 from forward differences on grid edges.

    Each edge contributes its squared difference quotient times the edge
    length and the trapezoid weight across the edge direction.  This is the
    norm in which the discrete Garding inequality is exact.
    """
    w = mesh.check_field(w)
    g = mesh.grid(w)
    lead = w.ndim - 1
    h = mesh.h
    total = np.zeros(w.shape[:-1])
    w1 = np.full(mesh.n, h)
    w1[[0, -1]] = 0.5 * h
    for axis in range(mesh.dim):
        dq = np.diff(g, axis=lead + axis) / h
        sq = dq**2 * h
        for other in range(mesh.dim):
            if other != axis:
                shape = [1] * sq.ndim
                shape[lead + other] = mesh.n
                sq = sq * w1.reshape(shape)
        total = total + sq.reshape(w.shape[:-1] + (-1,)).sum(axis=-1)
    return total


def _patch_nodes(mesh: Mesh, patch):
    """Resolve a patch to (node indices, outward normals)."""
    if patch is None:
        patch = mesh.gamma_side
    order = [mesh.gamma_side] + [s for s in mesh.side_masks if s != mesh.gamma_side]
    if isinstance(patch, str):
        side = _canonical_side(patch, mesh.geometry)
        nodes = np.flatnonzero(mesh.side_masks[side])
        return nodes, np.tile(mesh.normals[side], (nodes.size, 1))
    patch = np.asarray(patch)
    if patch.dtype == bool:
        if patch.shape != (mesh.num_nodes,):
            raise ShapeError("patch mask does not match mesh")
        nodes = np.flatnonzero(patch)
    elif patch.dtype.kind in "US" or (patch.dtype == object):
        nodes_list, normals_list = [], []
        for s in patch:
            nd, nu = _patch_nodes(mesh, str(s))
            nodes_list.append(nd)
            normals_list.append(nu)
        return np.concatenate(nodes_list), np.concatenate(normals_list)
    else:
        nodes = patch.astype(int).ravel()
    if np.any(mesh.interior_mask[nodes]):
        raise DomainError("patch contains interior nodes")
    normals = np.empty((nodes.size, mesh.dim))
    for k, node in enumerate(nodes):
        for s in order:
            if mesh.side_masks[s][node]:
                normals[k] = mesh.normals[s]
                break
    return nodes, normals


def conormal_derivative(f, coeffs: EllipticCoefficients, mesh: Mesh, patch=None) -> np.ndarray:
    """sum_ij a_ij nu_j D_i f at the nodes of ``patch`` (default: Gamma).

    ``patch`` may be a side name, a list of side names, a boolean node mask
    or an index array.  Leading (time) axes of ``f`` are preserved.
    """
    nodes, normals = _patch_nodes(mesh, patch)
    grad = nodal_gradient(f, mesh)[..., nodes, :]
    conormal = np.einsum("kij,kj->ki", coeffs.a[nodes], normals)
    return np.einsum("...ki,ki->...k", grad, conormal)


# --------------------------------------------------------------------------
# quadrature


def time_levels(T: float, nt: int) -> np.ndarray:
    return np.linspace(0.0, T, int(nt) + 1)


def window_weights(times: np.ndarray, a: float, b: float) -> np.ndarray:
    """Weights c_m with sum c_m f_m = integral over [a, b] of the piecewise
    linear interpolant of (f_m).

    On-grid windows reduce to the trapezoid rule; off-grid endpoints get the
    sub-step correction.  An empty window gives all-zero weights.
    """
    times = np.asarray(times, dtype=float)
    c = np.zeros_like(times)
    a = max(a, times[0])
    b = min(b, times[-1])
    if b <= a:
        return c
    for m in range(times.size - 1):
        t0, t1 = times[m], times[m + 1]
        lo, hi = max(a, t0), min(b, t1)
        if hi <= lo:
            continue
        dt = t1 - t0
        # values of the hat functions at lo and hi
        p_lo, p_hi = (lo - t0) / dt, (hi - t0) / dt
        seg = hi - lo
        c[m] += seg * ((1 - p_lo) + (1 - p_hi)) / 2
        c[m + 1] += seg * (p_lo + p_hi) / 2
    return c


def interp_weights(times: np.ndarray, t: float) -> np.ndarray:
    """Weights for linear interpolation of a trajectory at time ``t``."""
    times = np.asarray(times, dtype=float)
    if t < times[0] - 1e-14 or t > times[-1] + 1e-14:
        raise DomainError(f"time {t} outside [{times[0]}, {times[-1]}]")
    c = np.zeros_like(times)
    m = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
    dt = times[m + 1] - times[m]
    p = (t - times[m]) / dt
    if abs(p) < 1e-12:
        c[m] = 1.0
    elif abs(1 - p) < 1e-12:
        c[m + 1] = 1.0
    else:
        c[m] = 1 - p
        c[m + 1] = p
    return c


def integrate(f, mesh: Mesh, times=None, window=None) -> float:
    """Trapezoidal integral over Omega, or over Q = (window) x Omega.

    For a space field pass ``times=None``.  For a space-time field pass the
    time levels; ``window=(a, b)`` restricts the time integration (levels
    snapped with sub-step correction, empty window -> 0).
    """
    f = mesh.check_field(f)
    space = f @ mesh.quad_weights
    if times is None:
        return float(space) if np.ndim(space) == 0 else space
    times = np.asarray(times, dtype=float)
    if f.shape[0] != times.size:
        raise ShapeError("time axis does not match time levels")
    a, b = (times[0], times[-1]) if window is None else window
    return float(window_weights(times, a, b) @ space)


def l2_norm(f, mesh: Mesh):
    """Spatial L2 norm (vectorised over leading axes)."""
    f = mesh.check_field(f)
    return np.sqrt(np.maximum((f**2) @ mesh.quad_weights, 0.0))
