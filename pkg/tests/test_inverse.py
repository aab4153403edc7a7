import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lateral_cauchy.config import config_from_dict
from lateral_cauchy.errors import DomainError
from lateral_cauchy.forward import solve_ivp
from lateral_cauchy.inverse import (bihari_bound, complete_lateral_cauchy, cutoff,
                                    dependence_experiment, observe, verify_bihari)
from lateral_cauchy.mesh import l2_norm, time_levels, window_weights
from lateral_cauchy.scenarios import build_scenario


def test_cutoff_examples():
    c = cutoff(0.05, 1.0, 1000)
    assert c.profile[0] == 0 and c.profile[-1] == 1
    i = np.argmin(np.abs(c.times - 0.075))
    assert c.profile[i] == pytest.approx(0.5, abs=1e-12)
    assert c.sup_derivative == pytest.approx(30.0)
    assert c.derivative.max() == pytest.approx(30.0, rel=1e-9)
    assert np.all(c.profile[c.times <= 0.05] == 0) and np.all(c.profile[c.times >= 0.1] == 1)
    assert np.all(c.derivative[(c.times < 0.05) | (c.times > 0.1)] == 0)
    with pytest.raises(DomainError):
        cutoff(0.6, 1.0, 10)


def test_bihari_examples():
    t = time_levels(2.0, 1000)
    np.testing.assert_allclose(bihari_bound(1.7, 0.0, 0.0, t), 1.7, rtol=1e-15)
    np.testing.assert_allclose(bihari_bound(1.7, 0.8, 0.0, t), 1.7 * np.exp(0.8 * t), rtol=1e-12)
    np.testing.assert_allclose(bihari_bound(0.0, 0.0, 1.0, t), t**2 / 4, atol=1e-12)
    with pytest.raises(DomainError):
        bihari_bound(-1.0, 0.0, 0.0, t)


def test_verify_bihari_examples():
    t = time_levels(1.0, 1000)
    r = verify_bihari(np.full(t.size, 2.0), 2.0, 0.0, 0.0, t)
    assert r.extras["applicable"] and r.passed
    assert r.extras["bound_margin"] == pytest.approx(0.0, abs=1e-12)
    r = verify_bihari(t**2 / 4, 0.0, 0.0, 1.0, t)
    assert r.extras["applicable"] and r.passed and abs(r.extras["bound_margin"]) <= 1e-6
    z = 2 * bihari_bound(0.5, 0.3, 1.0, t)
    r = verify_bihari(z, 0.5, 0.3, 1.0, t)
    assert not r.extras["applicable"]
    assert r.passed


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0, 3), da=st.floats(0, 1), seed=st.integers(0, 10**6))
def test_bihari_monotone(a, da, seed):
    rng = np.random.default_rng(seed)
    t = time_levels(1.0, 200)
    b, kk, db, dk = (np.abs(rng.standard_normal() + rng.standard_normal() * np.cos(np.pi * t))
                     for _ in range(4))
    assert np.all(bihari_bound(a + da, b + db, kk + dk, t) >= bihari_bound(a, b, kk, t))


@pytest.fixture(scope="module")
def mms():
    sc = build_scenario(config_from_dict({}))
    p, us = sc.mms_problem("truth")
    return sc, p, us


def test_closed_loop(mms):
    sc, p, us = mms
    r = complete_lateral_cauchy(p, observe(us, p), 1e-10)
    win = window_weights(sc.times, 0.1, 1.0)
    err = np.sqrt(win @ l2_norm(r.u - us, sc.mesh) ** 2 / (win @ l2_norm(us, sc.mesh) ** 2))
    assert err <= 1e-3
    assert np.all(np.diff(r.history) <= 1e-12 * r.history[0])
    assert not r.partial


def test_zero_data(mms):
    sc, p, us = mms
    p0 = p.homogeneous()
    r = complete_lateral_cauchy(p0, np.zeros_like(observe(us, p)), 1e-10)
    assert np.all(r.u == 0)


def test_infinite_regularization(mms):
    sc, p, us = mms
    r = complete_lateral_cauchy(p, observe(us, p), 1e12)
    assert np.abs(r.u0[sc.mesh.interior]).max() < 1e-6
    base = np.where(sc.mesh.interior_mask, 0.0, p.g[0])
    np.testing.assert_allclose(r.u, solve_ivp(p, base), atol=1e-6)


def test_reconstruction_superposition(mms):
    sc, p, us = mms
    p0 = p.homogeneous()
    rng = np.random.default_rng(0)
    shape = observe(us, p).shape
    o1 = np.outer(np.exp(-sc.times), rng.standard_normal(shape[1]))
    o2 = np.outer(np.sin(np.pi * sc.times), rng.standard_normal(shape[1]))
    beta = 1e-4
    kw = dict(tol=1e-14, max_iter=500)
    u1 = complete_lateral_cauchy(p0, o1, beta, **kw).u0
    u2 = complete_lateral_cauchy(p0, o2, beta, **kw).u0
    u12 = complete_lateral_cauchy(p0, 2 * o1 - 3 * o2, beta, **kw).u0
    ref = 2 * u1 - 3 * u2
    assert np.abs(u12 - ref).max() <= 1e-8 * np.abs(ref).max()


def test_dependence_baseline_and_monotone(mms):
    sc, p, us = mms
    res = dependence_experiment(p, us, [0.0, 1e-4, 1e-3, 1e-2, 1e-1], [0.02, 0.05, 0.1], range(5))
    assert max(res.baseline.values()) <= 1e-6
    for ep, med in res.medians.items():
        vals = [med[k] for k in sorted(med)]
        assert np.all(np.diff(vals) >= 0)
    C = [res.C_eps[e] for e in (0.02, 0.05, 0.1)]
    assert C[0] >= C[1] >= C[2]
    assert 0.5 <= res.slope <= 1.5
    cols = {"scenario", "eps", "eta", "seed", "beta", "E", "D2", "slope", "C_eps"}
    assert cols <= set(res.table()[0])
