import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lateral_cauchy.config import config_from_dict
from lateral_cauchy.errors import DomainError, PreconditionError
from lateral_cauchy.estimates import (calibrate_carleman, carleman_sides, dependence_constants,
                                      energy_inequality, energy_profiles, h_split_sup,
                                      make_report, term_bounds, trace_check)
from lateral_cauchy.forward import reduce_homogeneous, solve_ivp
from lateral_cauchy.inverse import smooth_field, verify_bihari
from lateral_cauchy.kernels import HypothesisConstants, KernelSet, hypothesis_constants
from lateral_cauchy.scenarios import build_scenario


def test_report_tolerance():
    r = make_report("x", {"a": 1.0}, {"b": 1.0 - 1e-9})
    assert r.passed
    r = make_report("x", {"a": 1.0}, {"b": 0.9}, slack=0.05)
    assert not r.passed


def test_carleman_trivial_cases(line51, weight_cfg, times100):
    z = np.zeros((101, 51))
    r = carleman_sides(z, z, None, 1.0, weight_cfg, line51, times100)
    assert r.lhs == 0 and r.rhs == 0 and r.passed and r.margin == 0
    f = np.ones_like(z)
    r = carleman_sides(z, f, None, 1.0, weight_cfg, line51, times100, C1=1.0)
    assert r.lhs == 0 < r.rhs and r.passed


def test_carleman_requires_vanishing(line51, weight_cfg, times100):
    with pytest.raises(PreconditionError):
        carleman_sides(np.ones((101, 51)), np.zeros((101, 51)), None, 1.0, weight_cfg, line51,
                       times100)


def _cauchy_scenario(n=51, nt=100, kernels=None):
    sc = build_scenario(config_from_dict({"n": n, "nt": nt}), kernels=kernels)
    p, us = sc.mms_problem("cauchy")
    v, ft = reduce_homogeneous(solve_ivp(p, us[0]), p)
    return sc, v, ft


def test_carleman_calibration_properties():
    sc, v, ft = _cauchy_scenario()
    s = np.geomspace(0.5, 32, 9)
    C = calibrate_carleman(v, ft, None, s, sc.wcfg, sc.mesh, sc.times)
    assert np.all(np.isfinite(C)) and np.all(C > 0)
    assert np.all(np.diff(C) <= 0)
    for si in s:
        assert carleman_sides(v, ft, None, si, sc.wcfg, sc.mesh, sc.times).extras["chain_ok"]
    sc2, v2, ft2 = _cauchy_scenario(101, 200)
    C2 = calibrate_carleman(v2, ft2, None, s, sc2.wcfg, sc2.mesh, sc2.times)
    assert np.all(np.abs(C2 / C - 1) <= 0.2)


def test_trace_examples(line51, weight_cfg, times100):
    ker = KernelSet.zero(0.25, 0.5)
    r = trace_check(np.zeros((101, 51)), 0.0, 1.0, 1, ker, weight_cfg, line51, times100)
    assert r.lhs == 0 and r.passed
    r = trace_check(np.ones((101, 51)), 0.0, 1.0, 1, ker, weight_cfg, line51, times100)
    assert r.lhs == pytest.approx(1.0, rel=1e-12)
    assert r.rhs == pytest.approx(1.25, rel=1e-12)
    with pytest.raises(DomainError):
        trace_check(np.ones((101, 51)), 0.0, 0.0, 1, ker, weight_cfg, line51, times100)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), r0=st.floats(0, 5), leps=st.floats(np.log(0.1), np.log(10)),
       j=st.sampled_from([1, 2]))
def test_trace_property(seed, r0, leps, j):
    from lateral_cauchy.mesh import build_mesh, time_levels
    from lateral_cauchy.weights import WeightConfig, default_psi
    m = build_mesh("interval", 21)
    t = time_levels(1.0, 40)
    w = smooth_field(np.random.default_rng(seed), m, t, 5)
    cfg = WeightConfig(1.0, 1.0, 1.0, default_psi(m))
    r = trace_check(w, r0, float(np.exp(leps)), j, KernelSet.zero(0.25, 0.5), cfg, m, t)
    assert r.margin >= -1e-8 * r.rhs


def test_term_bounds_trivial(line51, weight_cfg, times100):
    z = np.zeros((101, 51))
    ker = KernelSet.zero(0.25, 0.5)
    out = term_bounds(z, ker, HypothesisConstants(), weight_cfg, line51, times100)
    assert all(r.lhs == 0 for r in out.values())
    v = smooth_field(np.random.default_rng(1), line51, times100, 4, vanish_on_boundary=True)
    out = term_bounds(v, ker, HypothesisConstants(), weight_cfg, line51, times100)
    assert out["B4"].lhs == 0 and out["B4"].rhs == 0


def test_B4_and_split_on_saturating_kernel():
    spec = {"preset": "hypothesis-saturating", "f": [1, 1, 1, 1], "rho": [1, 1]}
    sc = build_scenario(config_from_dict({"n": 31, "nt": 60}), kernels=spec)
    consts = hypothesis_constants(sc.kernels, sc.wcfg, sc.mesh, sc.times)
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = smooth_field(rng, sc.mesh, sc.times, 5, vanish_on_boundary=True)
        assert term_bounds(v, sc.kernels, consts, sc.wcfg, sc.mesh, sc.times)["B4"].margin >= 0
    assert h_split_sup(sc.kernels, sc.wcfg, sc.mesh, sc.times) <= consts.K4 + consts.K5


def test_dependence_constants_zero_kernel(line51, weight_cfg, times100, identity):
    ker = KernelSet.zero(0.25, 0.5)
    b = dependence_constants(0.1, ker, HypothesisConstants(), weight_cfg, 1.0, line51, times100,
                             identity)
    assert b.J1 == b.J2 == b.J3 == 0
    assert b.J4 == pytest.approx(2 * (1.5 / 0.1) ** 2)
    np.testing.assert_allclose(b.b_eps, 2.0)
    with pytest.raises(DomainError):
        dependence_constants(0.2, ker, HypothesisConstants(), weight_cfg, 1.0, line51, times100,
                             identity)


def test_dependence_constants_gamma3(line51, weight_cfg, times100, identity):
    ker = KernelSet(0.25, 0.5, 3.0)
    c = HypothesisConstants(K3=2.0, K4=0.5, K5=0.25)
    b = dependence_constants(0.1, ker, c, weight_cfg, 1.0, line51, times100, identity)
    chi = (times100 > 0.1) & (times100 < 1.0)
    np.testing.assert_allclose(b.b_eps[chi], 2 * (1 + 1.0), rtol=1e-14)
    np.testing.assert_allclose(b.b_eps[~chi], 2.0)


def test_dependence_C_constants_independent(line51, weight_cfg, times100, identity):
    eps, T, T2 = 0.1, 1.0, 0.5
    b = dependence_constants(eps, KernelSet.zero(0.25, T2), HypothesisConstants(), weight_cfg, 1.0,
                             line51, times100, identity)
    ts = np.linspace(eps * T, T2, 100001)
    m = (ts * (T - ts)).min()
    c1 = np.exp(2.0) - 1.0  # psi = x on [0, 1], lambda = 1
    e = np.exp(-2 * c1 / m)
    assert b.C2 == pytest.approx(e, rel=1e-9)
    assert b.C3 == pytest.approx(m * e, rel=1e-9)
    assert b.C4 == pytest.approx(64 * e, rel=1e-9)


@pytest.mark.parametrize("kernels", [None, {"preset": "hypothesis-saturating", "kappa4": 0.01,
                                            "kappa5": 0.01, "f": [0.1] * 4, "rho": [0.1, 0.1]}])
def test_energy_inequality_and_bihari(kernels):
    sc, v, ft = _cauchy_scenario(kernels=kernels)
    C1 = carleman_sides(v, ft, None, 1.0, sc.wcfg, sc.mesh, sc.times, mode="weighted").extras["C1_min"]
    consts = hypothesis_constants(sc.kernels, sc.wcfg, sc.mesh, sc.times)
    for eps in (0.02, 0.05, 0.1):
        b = dependence_constants(eps, sc.kernels, consts, sc.wcfg, C1, sc.mesh, sc.times, sc.coeffs)
        assert energy_inequality(v, ft, b, sc.kernels, sc.mesh, sc.times).passed
        P = energy_profiles(v, ft, b, sc.kernels, sc.mesh, sc.times)
        rep = verify_bihari(P["z"], P["a"], P["b"], P["kk"], sc.times)
        assert rep.extras["applicable"] and rep.passed
