import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relu_fim import (
    DomainError,
    RunMismatchError,
    basis_geometry,
    build_basis,
    certify_run,
    closed_form_J,
    column_geometry,
    estimate_C,
    generate_weights,
    iota,
    moment_spot_check,
    observed_delta,
    pair_count,
    probability_floor,
    rayleigh_quotients,
    xi_of_d,
)
from relu_fim.bounds import FLOOR_CONSTANT, expected_gram, floor_sum, sweep_csv

mpmath.mp.dps = 50


def mp_iota(a):
    a = mpmath.mpf(a)
    g = mpmath.sqrt(2 / mpmath.pi) * mpmath.exp(-a * a / 2)
    return (a + 1 / a) * g, (a**3 + 3 * a + 3 / a) * g


def mp_xi(x, eta):
    """The four bound functions transcribed literally, in 50-digit arithmetic."""
    x, eta = mpmath.mpf(x), mpmath.mpf(eta)
    i1, _ = mp_iota(x**eta)
    _, i2 = mp_iota(x**eta)
    e = mpmath.exp(-(x ** (2 * eta)) / 8)
    xi1 = 1 - (1 - i1) ** 2 * (1 - 2 * e) * (x + 2) / (x + x ** (mpmath.mpf(1) / 2 + eta) + 2 * x ** (2 * eta))
    xi2 = mpmath.mpf(3) / 2 - (3 - i2) / 2 * (1 - 2 * e) * (x + 1) / (x + x ** (mpmath.mpf(1) / 2 + eta) + x ** (2 * eta))
    k = 1 + 1 / (x ** (mpmath.mpf(1) / 2 - eta) - 1)
    xb1 = (1 + 2 / x) * k + 2 * (x + 2) * e - 1
    xb2 = mpmath.mpf(3) / 2 * (1 + 1 / x) * k + 2 * (x + 1) * e - mpmath.mpf(3) / 2
    return xi1, xi2, xb1, xb2


def test_iota_values():
    i1, i2 = iota(1.0)
    m1, m2 = mp_iota(1)
    assert i1 == pytest.approx(float(m1), rel=1e-15)
    assert i2 == pytest.approx(float(m2), rel=1e-15)
    assert i1 == pytest.approx(0.9679, abs=1e-4)
    # 7 sqrt(2/pi) e^(-1/2) = 3.38759..., quoted elsewhere as 3.3878
    assert i2 == pytest.approx(3.3878, abs=5e-4)
    assert max(iota(60.0)) < 1e-300
    with pytest.raises(DomainError):
        iota(0.0)
    with pytest.raises(DomainError):
        iota(-1.0)


@pytest.mark.parametrize("d", [5, 6, 10, 20, 100, 1000, 10**5, 10**8])
@pytest.mark.parametrize("eta", [0.1, 0.25, 0.4])
def test_xi_matches_high_precision(d, eta):
    x = xi_of_d(d, eta)
    a = mp_xi(d - 2, eta)
    b = mp_xi(d - 1, eta)
    for ours, ref in ((x.xi1, a[0]), (x.xi2, b[1]), (x.xibar1, a[2]), (x.xibar2, b[3])):
        assert ours == pytest.approx(float(ref), rel=1e-12, abs=1e-300)
    assert x.xi == max(x.xi1, x.xi2, x.xibar1, x.xibar2)
    strict = xi_of_d(d, eta, strict=True)
    assert strict.xi == pytest.approx(float(max(a[0], b[1], a[2], b[2])), rel=1e-12)


def test_xi_regression_fixture_at_ten():
    x = xi_of_d(10, 0.25)
    assert x.d1 == 8 and x.d2 == 9
    assert x.xi == pytest.approx(16.18916124879351, rel=1e-12)
    assert x.xi == x.xibar2


def test_xi_domain():
    for d in (1, 4):
        with pytest.raises(DomainError, match="d > 4"):
            xi_of_d(d)
    for eta in (0.0, 0.5, -0.1):
        with pytest.raises(DomainError):
            xi_of_d(10, eta)


def test_xi_positive_and_vanishing():
    for d in range(5, 2001):
        assert xi_of_d(d).xi > 0
    grid = np.unique(np.geomspace(1000, 1e8, 60).astype(int))
    values = [xi_of_d(int(d)).xi for d in grid]
    assert np.all(np.diff(values) < 0)
    # O(d^-(1/2 - eta)) decay
    assert xi_of_d(10**8).xi * (10**8) ** 0.25 < 2.0


def test_xi_decreases_as_eta_grows_at_100():
    vals = [xi_of_d(100, eta).xi for eta in (0.1, 0.25, 0.4)]
    assert vals[0] > vals[1] > vals[2]


@pytest.mark.xfail(strict=True, reason="xi peaks near d=256; the bound is not monotone on [10, 1000]")
def test_xi_trend_twenty_hundred_thousand():
    assert xi_of_d(1000).xi < xi_of_d(100).xi < xi_of_d(20).xi


@pytest.mark.xfail(strict=True, reason="xi peaks near d=256; the bound is not monotone on [10, 1000]")
def test_xi_decreasing_from_ten_to_thousand():
    values = [xi_of_d(d).xi for d in range(10, 1001)]
    assert np.all(np.diff(values) < 0)


@pytest.mark.xfail(strict=True, reason="at d=100 xi decreases as eta grows toward 1/2")
def test_xi_increases_with_eta_at_hundred():
    vals = [xi_of_d(100, eta).xi for eta in (0.1, 0.25, 0.4)]
    assert vals[0] < vals[1] < vals[2]


def test_pair_count():
    assert pair_count(10) == 2211
    for d in range(5, 51):
        M = d * (d + 3) // 2 + 1
        assert pair_count(d) == M * (M + 1) // 2


def test_probability_floor():
    assert probability_floor(10, 10**12, 0.1) == pytest.approx(1 - 2211 / (0.01 * 10**12))
    assert probability_floor(10, 10**30, 0.5) == pytest.approx(1.0)
    assert probability_floor(10, 100, 0.1) == 0.0
    assert probability_floor(10, 10**6, 0.1, C=2.0) == pytest.approx(1 - 2 * 2211 / 10**4)
    for bad in ((4, 10, 0.1), (10, 0, 0.1), (10, 10, 0.0), (10, 10, -1.0)):
        with pytest.raises(DomainError):
            probability_floor(*bad)
    with pytest.raises(DomainError):
        probability_floor(10, 10, 0.1, C=0.0)


def test_floor_constant_and_sum():
    assert FLOOR_CONSTANT >= 0.977
    assert FLOOR_CONSTANT == pytest.approx(0.977465, abs=1e-6)
    for d in range(5, 200):
        # S(d) - (3+pi)/(2pi) d/2 = (2d-2)/(4 pi d) >= 0
        assert floor_sum(d) - FLOOR_CONSTANT * d / 2 == pytest.approx((2 * d - 2) / (4 * math.pi * d), abs=1e-12)


@pytest.fixture(scope="module")
def run():
    W = generate_weights(10, 2000, seed=3)
    J = closed_form_J(column_geometry(W))
    basis = build_basis(W)
    geom = basis_geometry(basis)
    q = rayleigh_quotients(J, basis)
    return W, J, basis, geom, q, xi_of_d(10)


def test_certificate_at_observed_delta(run):
    W, J, basis, geom, q, xi = run
    ds = observed_delta(geom, xi)
    rep = certify_run(J, basis, geom, q, xi, ds)
    assert rep.passed, [c.as_dict() for c in rep.failures()]
    assert rep.delta_star == ds and rep.D == 2211
    claims = [c.claim for c in rep.checks]
    assert "trace_upper" in claims and "floor_constant" in claims
    assert sum(c.startswith("quotient:") for c in claims) == basis.size
    data = rep.as_dict()
    assert all({"claim", "lhs", "rhs", "margin", "pass"} <= set(c) for c in data["checks"])
    assert rep.to_json() == certify_run(J, basis, geom, q, xi, ds).to_json()
    lines = sweep_csv([rep]).splitlines()
    assert lines[0] == "d,p,seed,delta_star,xi,prob_floor,passed,total"
    assert lines[1].startswith("10,2000,3,")


def test_certificate_fails_at_tiny_delta(run):
    W, J, basis, geom, q, xi = run
    rep = certify_run(J, basis, geom, q, xi, 1e-9)
    failed = {c.claim for c in rep.failures()}
    assert {"norm:v0", "norm:row"} <= failed


def test_certificate_monotone_in_delta(run):
    W, J, basis, geom, q, xi = run
    deltas = np.linspace(0.0, 1.0, 41)
    status = np.array([[c.passed for c in certify_run(J, basis, geom, q, xi, d).checks] for d in deltas])
    assert np.all(status[1:] >= status[:-1])


def test_run_mismatch(run):
    W, J, basis, geom, q, xi = run
    other = build_basis(generate_weights(10, 2000, seed=4))
    with pytest.raises(RunMismatchError):
        certify_run(J, other, geom, q, xi, 0.5)
    with pytest.raises(RunMismatchError):
        certify_run(J, basis, geom, q, xi_of_d(11), 0.5)
    with pytest.raises(RunMismatchError):
        certify_run(np.eye(5), basis, geom, q, xi, 0.5)


def test_expected_gram_against_monte_carlo():
    d, p, seeds = 5, 3000, 40
    grams = np.stack([basis_geometry(build_basis(generate_weights(d, p, seed=s))).gram for s in range(seeds)])
    mean = grams.mean(axis=0)
    se = grams.std(axis=0, ddof=1) / np.sqrt(seeds)
    G = expected_gram(d)
    assert np.all(np.abs(mean - G) <= 5 * se + 1e-12)
    assert G[-1, -2] == pytest.approx(-1 / (d + 2))


def test_moment_spot_check_quick():
    out = moment_spot_check(20, 200_000, seed=3)
    assert out["cross"]["pass"] and out["fourth"]["pass"]
    # exact values by rotation invariance: d/(d+2) and 3d/(d+2)
    assert abs(out["cross"]["mean"] - 20 / 22) <= 5 * out["cross"]["stderr"]
    assert abs(out["fourth"]["mean"] - 60 / 22) <= 5 * out["fourth"]["stderr"]
    with pytest.raises(DomainError):
        moment_spot_check(4, 10)


def test_estimate_C():
    out = estimate_C(6, 300, range(20), delta=0.3)
    assert 0.0 <= out["exceed_fraction"] <= 1.0
    assert out["C_estimate"] == pytest.approx(out["exceed_fraction"] * 0.09 * 300 / pair_count(6))
    assert len(out["max_deviation"]) == 20


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 60), st.integers(1, 10**9), st.floats(1e-3, 5.0), st.floats(0.01, 100.0))
def test_probability_floor_bounded_and_monotone_in_p(d, p, delta, C):
    f = probability_floor(d, p, delta, C)
    assert 0.0 <= f < 1.0
    assert probability_floor(d, 2 * p, delta, C) >= f
    assert probability_floor(d, p, 2 * delta, C) >= f
