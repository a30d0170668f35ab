import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mu_raw, perturbed_raw
from kkpdelay.certificates import (
    dissipation_constant,
    eta_star,
    eta_upper,
    f_eta,
    f_variant,
    fg_values,
    g_eta,
    kp_certificate,
    kp_times,
    mu_certificate,
    observability_ratio,
    sigma_eta,
    sweep,
    sweep_argmax,
)
from kkpdelay.params import make_config, validate
from kkpdelay.stepper import simulate


def quad_root(a2, a1, a0):
    return (-a1 - math.sqrt(a1 * a1 - 4 * a2 * a0)) / (2 * a2)


def test_f_g_endpoint_values(perturbed_params):
    p = perturbed_params
    hi = eta_upper(p)
    xi, L, a, h = p.xi, p.length, p.alpha, p.delay
    assert f_eta(0.0, p) == 0.0
    assert g_eta(hi, p) == pytest.approx(0.0, abs=1e-15)
    # substituting the right endpoint into f gives (3 alpha / 2L^3) (xi - 1) / (3 xi)
    assert f_eta(hi, p) == pytest.approx(3 * a / (2 * L**3) * (xi - 1) / (3 * xi), rel=1e-13)
    assert g_eta(0.0, p) == pytest.approx((1 / (2 * h)) * (1 - xi / (2 * xi - 1)), rel=1e-13)
    with pytest.raises(ValueError):
        f_eta(hi * 1.01, p)
    f, g, s = fg_values(0.5 * hi, p)
    assert (f, g, s) == (f_eta(0.5 * hi, p), g_eta(0.5 * hi, p), sigma_eta(0.5 * hi, p))


def test_g_identity_on_random_eta(perturbed_params):
    p = perturbed_params
    eta = np.random.default_rng(0).uniform(0, eta_upper(p), 20)
    s = sigma_eta(eta, p)
    np.testing.assert_allclose(g_eta(eta, p), s / (2 * p.delay * (p.xi + s)), rtol=0, atol=1e-15)
    np.testing.assert_allclose(p.xi + s, 2 * p.xi - 1 - 2 * eta * p.length * (1 + 2 * p.xi), rtol=1e-15)


def test_figure1_eta_star(perturbed_params):
    e, th, s, k = eta_star(perturbed_params)
    eo = quad_root(28.0, -24.8, 1.3)
    assert e == pytest.approx(eo, abs=1e-10)
    assert abs(e - 0.0559541) <= 1e-6 and abs(th - 0.0754840) <= 1e-6 and abs(k - 1.2927453) <= 1e-6
    # sigma: 1.3 - 11.2 eta from the oracle (the rounded literal 0.6733141 is 1.3e-6 away)
    assert s == pytest.approx(1.3 - 11.2 * eo, abs=1e-10)
    assert f_eta(e, perturbed_params) == pytest.approx(g_eta(e, perturbed_params), abs=1e-10)


def test_second_eta_star_example():
    p = validate(perturbed_raw(xi=3.0, alpha=1.0, delay=1.0))
    e, th, s, k = eta_star(p)
    assert e == pytest.approx(quad_root(28.0, -20.0, 1.0), abs=1e-10)
    assert abs(e - 0.0540971) <= 1e-6 and abs(th - 0.146446) <= 1e-6 and abs(s - 1.242641) <= 1e-6


def test_eta_star_degenerate_limit():
    p = validate(perturbed_raw(xi=1.0 + 1e-9))
    e, th, s, k = eta_star(p)
    assert 0 <= e < 1e-8 and 0 <= th < 1e-8 and k == pytest.approx(1.0, abs=1e-8)


def test_theorem12_variant(perturbed_params):
    e, th, s, k = eta_star(perturbed_params, "theorem12")
    p = perturbed_params
    assert f_variant(e, p) == pytest.approx(g_eta(e, p), abs=1e-10)
    assert e != pytest.approx(eta_star(p)[0], abs=1e-3)
    with pytest.raises(ValueError):
        eta_star(p, "other")


@st.composite
def admissible_sets(draw):
    L = draw(st.floats(0.2, 20.0))
    return validate(perturbed_raw(alpha=draw(st.floats(0.01, 10.0)), length=L, delay=draw(st.floats(0.05, 10.0)),
                                  xi=draw(st.floats(1.01, 20.0)), omega=f"0,{L},0,{L}"))


@settings(max_examples=60, deadline=None)
@given(admissible_sets())
def test_fg_monotone_unique_crossing(p):
    eta = np.linspace(0, eta_upper(p), 1000)
    f, g = f_eta(eta, p), g_eta(eta, p)
    assert np.all(np.diff(f) > 0) and np.all(np.diff(g) < 0)
    sign = np.sign(f - g)
    assert np.count_nonzero(sign[1:] != sign[:-1]) == 1
    e, th, s, k = eta_star(p)
    assert abs(f_eta(e, p) - g_eta(e, p)) <= 1e-10 * max(1.0, f_eta(eta_upper(p), p))
    assert 0 < e < eta_upper(p) and th > 0 and s > 0 and k >= 1


def test_sweep_table(perturbed_params):
    p = perturbed_params
    table = sweep(p, np.linspace(0, eta_upper(p), 1001))
    assert table.shape == (1001, 4)
    np.testing.assert_array_equal(table[:, 3], np.minimum(table[:, 1], table[:, 2]))
    assert abs(sweep_argmax(table) - eta_star(p)[0]) <= table[1, 0] - table[0, 0]


def test_kp_times_examples():
    t = kp_times(0.5, 1.2, 1.5, 0.5, 0.25, 0.0)
    assert t["t0"] == pytest.approx(math.log(7.2) + 1, abs=1e-6)
    assert t["t0"] == pytest.approx(2.9740810, abs=1e-6)
    _, th, _, k = eta_star(validate(perturbed_raw()))
    assert kp_times(th, k, 2.3, 0.5, 0.25, 0.01)["t0"] == pytest.approx(17.40, abs=0.01)
    # delta bound: printed form equals 1/(eps sqrt(kappa) e^(...)) exactly when it does not underflow
    d = kp_times(0.5, 1.2, 1.5, 0.5, 0.25, 0.0)["delta_b_bound"]
    expo = 0.5 * (1 + 4.5) * (math.log(7.2) / 1.0 + 2.0)
    assert d == pytest.approx(min(1.0, 1 / (0.25 * math.sqrt(1.2) * math.exp(expo))), rel=1e-12)


def test_kp_times_limits_and_monotonicity():
    nus, tmins = [], []
    for eps in (0.4, 0.49, 0.499, 0.4999):
        r = kp_times(0.3, 1.3, 2.0, 0.5, eps, 0.1)
        nus.append(r["nu"])
        tmins.append(r["t_min"])
    assert all(a > b > 0 for a, b in zip(nus, nus[1:]))
    assert all(a < b for a, b in zip(tmins, tmins[1:]))
    assert tmins[-1] > 1e4
    tb = [kp_times(0.3, 1.3, 2.0, 0.5, 0.25, b)["t_min"] for b in (0.0, 0.1, 1.0)]
    assert tb[0] < tb[1] < tb[2]
    tt = [kp_times(th, 1.3, 2.0, 0.5, 0.25, 0.1)["t_min"] for th in (0.1, 0.3, 1.0)]
    assert tt[0] > tt[1] > tt[2]
    for bad in ((0.3, 1.3, 2.0, 1.2, 0.25, 0.1), (0.3, 1.3, 2.0, 0.5, 0.6, 0.1), (0.0, 1.3, 2.0, 0.5, 0.25, 0.1)):
        with pytest.raises(ValueError):
            kp_times(*bad)


def test_kp_certificate(perturbed_params):
    cert = kp_certificate(perturbed_params)
    assert not cert.admissible                         # ||b|| = 1 far exceeds the tiny bound
    assert any("smallness" in r for r in cert.reasons)
    small = kp_certificate(perturbed_params, b_norm=0.0)
    assert small.admissible and small.rate_final == pytest.approx(small.nu)
    assert small.as_dict()["eta_star"] == pytest.approx(0.0559542, abs=1e-7)
    text = small.to_text()
    assert "eta_star = " in text and "admissible = true" in text
    assert len(small.csv_header()) == len(small.csv_row())
    rejected = kp_certificate(perturbed_params.with_(xi=0.5))
    assert not rejected.admissible and "xi > 1" in rejected.reasons[0]


def test_mu_certificate_example(mu_params):
    cert = mu_certificate(mu_params, r=1e-12, c_gn=1e-12)
    assert cert.sigma == pytest.approx(0.4375, abs=1e-12)
    assert cert.eta_star == pytest.approx(0.035, abs=1e-12)
    assert cert.theta == pytest.approx(0.99 * min(0.0490654, 0.1521739), abs=1e-6)
    assert cert.theta == pytest.approx(0.0485748, abs=1e-6)
    assert cert.admissible
    # theta strictly below both bounds
    eta, L, a = cert.eta_star, 1.0, 0.5
    b1 = eta * 3 * a / ((1 + 2 * eta * L) * L**2)
    b2 = 1.6 * 0.4375 / (2 * 1.0 * (1.6 + 0.4375 * 1.6))
    assert cert.theta < b1 and cert.theta < b2


def test_mu_certificate_rejections(mu_params):
    cert = mu_certificate(mu_params, r=10.0, c_gn=1.0)
    assert not cert.admissible and any("radius bound" in r for r in cert.reasons)
    weak = mu_params.with_(beta=-0.02)
    cert = mu_certificate(weak, r=1e-6, c_gn=1e-3, path="beta_bound")
    assert not cert.admissible and any("beta < -1/30 required" in r for r in cert.reasons)
    assert mu_certificate(weak, r=1e-6, c_gn=1e-3, path="length_bound").admissible   # L small enough
    with pytest.raises(ValueError):
        mu_certificate(mu_params, r=0.0, c_gn=1.0)
    with pytest.raises(ValueError):
        mu_certificate(validate(perturbed_raw()), r=1e-3, c_gn=1.0)


def test_dissipation_constant_example(mu_params):
    c, terms = dissipation_constant(mu_params, "printed")
    assert terms[:3] == pytest.approx((0.5, 0.5, 0.7))
    assert c == pytest.approx(-0.2)
    c, terms = dissipation_constant(mu_params, "derived")
    assert c == pytest.approx(0.3)


def test_dissipation_constant_saturation_and_scaling(mu_params):
    big = mu_params.with_(beta=-1e6)
    c, terms = dissipation_constant(big, "derived")
    assert c == min(terms[1:])
    t = 1.7
    # terms 3 and 4 are linear in (mu1, mu2, xi/h); scale xi with h fixed
    scaled = mu_params.with_(mu1=t * mu_params.mu1, mu2=t * mu_params.mu2, xi=t * mu_params.xi)
    _, base = dissipation_constant(mu_params, "derived")
    _, sc = dissipation_constant(scaled, "derived")
    assert sc[2] == pytest.approx(t * base[2]) and sc[3] == pytest.approx(t * base[3])


def test_observability_ratio(mu_params):
    cfg = make_config(1.0, 10, nx=16, ny=16, t_end=2.0)
    rng = np.random.default_rng(0)
    from kkpdelay.oracles import random_smooth_field
    from kkpdelay.grid import Grid

    g = Grid(16, 16, 1.0)
    ratios = []
    for _ in range(20):
        u0 = random_smooth_field(rng, g)
        ratios.append(observability_ratio(simulate(mu_params, cfg, u0, u0).trace))
    assert all(math.isfinite(r) and r > 0 for r in ratios)
    with pytest.raises(ValueError, match="undefined ratio"):
        observability_ratio(simulate(mu_params, cfg, np.zeros(g.shape), 0.0).trace)
