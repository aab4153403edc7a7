import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lateral_cauchy.errors import PicardDivergenceError
from lateral_cauchy.forward import (ProblemData, extract_lateral_data, manufacture,
                                    picard_contraction_bound, reduce_homogeneous, solve_ivp,
                                    time_reverse)
from lateral_cauchy.kernels import KernelSet
from lateral_cauchy.mesh import EllipticCoefficients, build_mesh, l2_norm


def _problem(n=41, nt=40, kernels=None, T=1.0, f0=None, g=None):
    m = build_mesh("interval", n)
    z = np.zeros((nt + 1, n))
    return ProblemData(m, EllipticCoefficients.identity(m), T, nt,
                       z if f0 is None else f0, z.copy() if g is None else g, kernels)


def _truth(p):
    x = p.mesh.coords[:, 0]
    return np.exp(-p.times)[:, None] * np.sin(np.pi * x)[None, :]


def test_zero_solution():
    nl, N = 41, 41
    ker = KernelSet(0.25, 0.5, 3.0, f1=np.ones((nl, N)), k=0.1 * np.ones((nl, N, N)))
    p = _problem(kernels=ker)
    np.testing.assert_array_equal(solve_ivp(p, np.zeros(41)), 0.0)


def test_mms_heat_equation_error():
    errs = []
    for n, nt in ((11, 25), (21, 100), (41, 400)):
        p = _problem(n, nt)
        us = _truth(p)
        p = p.with_data(f0=(np.pi**2 - 1) * us)
        u = solve_ivp(p, us[0])
        errs.append(l2_norm(u - us, p.mesh).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() >= 1.8


def test_manufacture_examples():
    p = _problem()
    np.testing.assert_array_equal(manufacture(p, np.zeros((41, 41))), 0.0)
    x = p.mesh.coords[:, 0]
    f0 = manufacture(p, np.tile(x, (41, 1)))
    np.testing.assert_allclose(f0[:, p.mesh.interior], 0.0, atol=1e-10)


def test_manufacture_with_integral_kernel():
    n, nt = 201, 2000
    nl = nt + 1
    m = build_mesh("interval", n)
    ker = KernelSet(0.25, 0.5, 3.0, k=lambda i: np.ones((n, n)))
    z = np.zeros((nl, n))
    p = ProblemData(m, EllipticCoefficients.identity(m), 1.0, nt, z, z, ker)
    us = _truth(p)
    f0 = manufacture(p, us)
    x = m.coords[:, 0]
    e = np.exp(-p.times)[:, None]
    expected = (np.pi**2 - 1) * e * np.sin(np.pi * x) - e * (2 / np.pi)
    inner = m.interior
    np.testing.assert_allclose(f0[1:, inner], expected[1:, inner], atol=2e-3)


def test_manufactured_problem_reproduces_truth():
    nl, N = 41, 41
    ker = KernelSet(0.25, 0.5, 3.0, f1=0.1 * np.ones((nl, N)), k=0.05 * np.ones((nl, N, N)))
    p = _problem(kernels=ker)
    us = _truth(p)
    p = p.with_data(f0=manufacture(p, us), g=us)
    np.testing.assert_allclose(solve_ivp(p, us[0]), us, atol=1e-9)


def test_reduce_homogeneous_examples():
    p = _problem()
    us = _truth(p)
    v, ft = reduce_homogeneous(us, p)
    np.testing.assert_array_equal(v, us)
    np.testing.assert_array_equal(ft, p.f0)
    v, _ = reduce_homogeneous(us, p.with_data(g=us))
    np.testing.assert_array_equal(v, 0.0)
    x = p.mesh.coords[:, 0]
    g = p.times[:, None] * x[None, :]
    _, ft = reduce_homogeneous(g, p.with_data(g=g))
    np.testing.assert_allclose(ft, -np.tile(x, (41, 1)), atol=1e-10)


def test_time_reverse():
    nl, N = 41, 41
    rng = np.random.default_rng(0)
    ker = KernelSet(0.25, 0.5, 2.0, *(rng.standard_normal((nl, N)) for _ in range(6)),
                    k=rng.standard_normal((nl, N, N)))
    p = _problem(kernels=ker)
    r = time_reverse(p)
    assert (r.kernels.T1, r.kernels.T2) == (0.5, 0.75)
    rr = time_reverse(r)
    assert (rr.kernels.T1, rr.kernels.T2) == (0.25, 0.5)
    for name in ("f1", "f2", "f3", "f4", "rho1", "rho2", "k"):
        np.testing.assert_array_equal(getattr(rr.kernels, name), getattr(ker, name))


def test_time_reverse_backward_mms():
    # backward problem D_t u + u_xx = f with u = e^t sin(pi x): f = (1 - pi^2) u
    p = _problem(41, 400)
    x = p.mesh.coords[:, 0]
    u = np.exp(p.times)[:, None] * np.sin(np.pi * x)[None, :]
    back = p.with_data(f0=(1 - np.pi**2) * u)
    fw = time_reverse(back)
    w = solve_ivp(fw, u[-1])
    np.testing.assert_allclose(w, u[::-1], atol=5e-3 * np.abs(u).max())


def test_lateral_data_examples():
    p = _problem(101, 10)
    x = p.mesh.coords[:, 0]
    assert np.all(extract_lateral_data(np.zeros((11, 101)), p)[1] == 0)
    np.testing.assert_allclose(extract_lateral_data(np.tile(x, (11, 1)), p)[1], 1.0)
    us = _truth(p)
    np.testing.assert_allclose(extract_lateral_data(us, p)[1][:, 0], -np.pi * np.exp(-p.times),
                               rtol=1e-3)


def test_picard_ratio_below_apriori():
    nl, N = 41, 41
    ker = KernelSet(0.25, 0.5, 3.0, f1=0.1 * np.ones((nl, N)), f3=0.1 * np.ones((nl, N)),
                    rho1=np.ones((nl, N)), k=0.2 * np.ones((nl, N, N)))
    p = _problem(kernels=ker)
    us = _truth(p)
    p = p.with_data(f0=manufacture(p, us), g=us)
    u, info = solve_ivp(p, us[0], return_info=True)
    bound = picard_contraction_bound(p)
    assert bound < 1
    assert info.converged
    assert np.max(info.ratios[:3]) <= bound + 0.05


def test_picard_divergence_reported():
    nl, N = 41, 41
    ker = KernelSet(0.25, 0.5, 3.0, f2=50 * np.ones((nl, N)))
    p = _problem(kernels=ker, g=_truth(_problem()))
    with pytest.raises(PicardDivergenceError) as err:
        solve_ivp(p, np.zeros(N), max_iter=10)
    assert len(err.value.history) >= 1


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_solution_map_linear(seed):
    rng = np.random.default_rng(seed)
    n, nt = 15, 10
    nl = nt + 1
    ker = KernelSet(0.25, 0.5, 3.0, f1=0.1 * rng.random((nl, n)), k=0.1 * rng.random((nl, n, n)))
    p = _problem(n, nt, kernels=ker)

    def data():
        g = rng.standard_normal((nl, n))
        u0 = rng.standard_normal(n)
        u0[p.mesh.boundary] = g[0, p.mesh.boundary]
        return rng.standard_normal((nl, n)), g, u0

    (f1, g1, a1), (f2, g2, a2) = data(), data()
    a, b = rng.standard_normal(2)
    s1 = solve_ivp(p.with_data(f0=f1, g=g1), a1, tol=1e-14)
    s2 = solve_ivp(p.with_data(f0=f2, g=g2), a2, tol=1e-14)
    s = solve_ivp(p.with_data(f0=a * f1 + b * f2, g=a * g1 + b * g2), a * a1 + b * a2, tol=1e-14)
    np.testing.assert_allclose(s, a * s1 + b * s2, atol=1e-10 * np.abs(s).max())
