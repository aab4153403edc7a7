import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lateral_cauchy.estimates import holmgren_ratios
from lateral_cauchy.kernels import (KernelSet, apply_B, apply_calB, calB_adjoint,
                                    calB_trajectory, defining_ratio, holmgren_bound,
                                    hypothesis_constants, smallness_check)
from lateral_cauchy.mesh import build_mesh, time_levels
from lateral_cauchy.weights import WeightConfig, default_psi


@pytest.fixture
def setup():
    m = build_mesh("interval", 101)
    t = time_levels(1.0, 40)
    return m, t, WeightConfig(1.0, 1.0, 1.0, default_psi(m))


def test_apply_B_examples(setup):
    m, _, _ = setup
    N = m.num_nodes
    x = m.coords[:, 0]
    np.testing.assert_array_equal(apply_B(x, np.zeros((N, N)), m), 0.0)
    np.testing.assert_allclose(apply_B(np.ones(N), np.ones((N, N)), m), 1.0, rtol=1e-14)
    np.testing.assert_allclose(apply_B(x, np.ones((N, N)), m), 0.5, atol=1e-4)


def test_apply_calB_examples(setup):
    m, t, _ = setup
    N, nl = m.num_nodes, t.size
    x = m.coords[:, 0]
    u = np.tile(x, (nl, 1))
    zero = KernelSet.zero(0.25, 0.5)
    np.testing.assert_array_equal(apply_calB(u, zero, 10, m, t), 0.0)
    only_f1 = KernelSet(0.25, 0.5, f1=np.ones((nl, N)))
    np.testing.assert_allclose(apply_calB(u, only_f1, 7, m, t), x, atol=1e-14)
    only_f3 = KernelSet(0.25, 0.5, f3=np.ones((nl, N)), rho1=np.ones((nl, N)))
    np.testing.assert_allclose(apply_calB(np.ones((nl, N)), only_f3, 3, m, t), 0.25, atol=1e-6)


def test_constants_zero(setup):
    m, t, w = setup
    c = hypothesis_constants(KernelSet.zero(0.25, 0.5), w, m, t)
    assert (c.K1, c.K2, c.K3, c.K4, c.K5, c.K6) == (0, 0, 0, 0, 0, 0)


def test_constants_examples(setup):
    m, t, w = setup
    N, nl = m.num_nodes, t.size
    T = 1.0
    lt = t * (T - t)
    g = 2.0
    psi = w.psi.values
    upper = psi[:, None] > psi[None, :]
    k = np.zeros((nl, N, N))
    rho = np.zeros((nl, N))
    for i in range(1, nl - 1):
        k[i] = np.where(upper, lt[i] ** (3 - g) * np.exp(-2 * w.s0 * w.c1 / lt[i]), 0.0)
        rho[i] = np.exp(w.s0 * w.alpha(t[i]))
    ker = KernelSet(0.25, 0.5, g, rho1=rho, k=k)
    c = hypothesis_constants(ker, w, m, t)
    assert c.K4 <= 1.0 + 1e-12
    assert c.K1 == pytest.approx(1.0, rel=1e-12)
    assert c.K6 == max(c.K4, c.K5)
    for name in ("K1", "K3", "K4", "K5"):
        if name in c.argmax:
            assert defining_ratio(name, ker, w, m, t, c.argmax[name]) == pytest.approx(
                getattr(c, name), rel=1e-12)
    # brute force K4 over every interior (t, y)
    brute = 0.0
    wq = m.quad_weights
    for i in range(1, nl - 1):
        col = (np.abs(k[i]) * wq[:, None] * upper).sum(axis=0)
        brute = max(brute, (lt[i] ** (3 - g) * np.exp(2 * w.s0 * w.c1 / lt[i]) * col).max())
    assert c.K4 == pytest.approx(brute, rel=1e-12)


def test_smallness_zero(setup):
    m, t, w = setup
    ker = KernelSet.zero(0.25, 0.5)
    sm = smallness_check(hypothesis_constants(ker, w, m, t), ker, w, 1.0, t)
    assert sm.H0 == 0 and sm.H1 == 0 and sm.pass0 and sm.pass1


def test_smallness_threshold_in_s0(setup):
    m, t, _ = setup
    N, nl = m.num_nodes, t.size
    small = KernelSet(0.25, 0.5, f1=0.01 * np.ones((nl, N)), f2=0.01 * np.ones((nl, N)))
    passes = []
    for s0 in np.geomspace(0.5, 64, 15):
        w = WeightConfig(1.0, s0, 1.0, default_psi(m))
        sm = smallness_check(hypothesis_constants(small, w, m, t), small, w, 1.0, t)
        passes.append(sm.pass0)
    k = passes.index(True)
    assert all(passes[k:])


def test_holmgren_gamma3_constant():
    from lateral_cauchy.kernels import HypothesisConstants
    c = HypothesisConstants(K3=2.0, K4=3.0, K5=1.0)
    b = holmgren_bound(c, 3.0, np.array([0.1, 0.5, 0.9]), 1.0)
    np.testing.assert_allclose(b, np.sqrt(6.0))
    assert holmgren_bound(HypothesisConstants(), 1.5, 0.3, 1.0) == 0.0


def test_holmgren_random_small_kernel(setup):
    m, t, w = setup
    rng = np.random.default_rng(7)
    N, nl = m.num_nodes, t.size
    k = 0.1 * rng.random((nl, N, N))
    ker = KernelSet(0.25, 0.5, 3.0, k=k)
    c = hypothesis_constants(ker, w, m, t)
    V = rng.standard_normal((100, nl, N))
    inner = (t > 0) & (t < 1)
    r = holmgren_ratios(V, ker, m, t)[:, inner]
    assert np.all(r <= holmgren_bound(c, 3.0, t[inner], 1.0) + 1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_calB_linear_and_adjoint(seed):
    m = build_mesh("interval", 9)
    t = time_levels(1.0, 12)
    rng = np.random.default_rng(seed)
    nl, N = t.size, m.num_nodes
    ker = KernelSet(0.3, 0.6, 2.0, *(rng.standard_normal((nl, N)) for _ in range(6)),
                    k=rng.standard_normal((nl, N, N)))
    u1, u2, W = (rng.standard_normal((nl, N)) for _ in range(3))
    a, b = rng.standard_normal(2)
    lhs = calB_trajectory(a * u1 + b * u2, ker, m, t)
    rhs = a * calB_trajectory(u1, ker, m, t) + b * calB_trajectory(u2, ker, m, t)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())
    ip1 = np.sum(calB_trajectory(u1, ker, m, t) * W)
    ip2 = np.sum(u1 * calB_adjoint(W, ker, m, t))
    assert ip1 == pytest.approx(ip2, rel=1e-11)
