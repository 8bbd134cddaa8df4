"""Local randomizers, blanket distributions and the privacy amplification variable."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from shuffle_acct.accountant import _sample_outputs
from shuffle_acct.errors import DomainError
from shuffle_acct.mechanisms import (
    KRR, Blanket, GenGaussian, Law, Local, blanket_density, blanket_mass, density,
    mechanism_from_json, mechanism_to_json, par_distribution, par_moments, par_value,
    variance_l0,
)

K32 = KRR(3, 2.0)
P32 = math.exp(2) / (math.exp(2) + 2)
Q32 = 1 / (math.exp(2) + 2)
GG_SHAPES = (1.0, 1.5, 2.0)


# --- descriptors -----------------------------------------------------------

def test_krr_probabilities():
    assert K32.p == pytest.approx(P32, rel=1e-15)
    assert K32.q == pytest.approx(Q32, rel=1e-15)
    for k in (2, 3, 7):
        for e0 in (0.1, 1.0, 4.0):
            m = KRR(k, e0)
            assert m.p + (k - 1) * m.q == pytest.approx(1.0, abs=1e-15)


def test_validation():
    with pytest.raises(DomainError):
        KRR(1, 1.0)
    with pytest.raises(DomainError):
        GenGaussian(2.5, 1.0)
    with pytest.raises(DomainError):
        GenGaussian(2.0, -1.0)
    with pytest.raises(DomainError):
        par_value(K32, 1, 1, Blanket(), 0.0, 1)
    with pytest.raises(DomainError):
        variance_l0(K32, 2, 2, Blanket())
    with pytest.raises(DomainError):
        par_value(K32, 1, 4, Blanket(), 0.0, 1)


@pytest.mark.parametrize("beta", GG_SHAPES)
def test_gen_gaussian_density_normalised(beta):
    m = GenGaussian(beta, 1.7)
    total, _ = integrate.quad(lambda y: density(m, 0.3, y), -np.inf, np.inf, epsabs=1e-13)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_from_std_gives_requested_noise_std():
    for beta in GG_SHAPES:
        m = GenGaussian.from_std(2.0, beta)
        var, _ = integrate.quad(lambda y: y * y * density(m, 0.0, y), -np.inf, np.inf)
        assert math.sqrt(var) == pytest.approx(2.0, rel=1e-9)
    assert GenGaussian.from_std(2.0, 2.0).scale == pytest.approx(2.0 * math.sqrt(2.0), rel=1e-15)


def test_json_round_trip():
    for m in (K32, KRR(5, 0.5), GenGaussian(1.5, 2.0), GenGaussian(2.0, 1.0, (-1.0, 2.0))):
        assert mechanism_from_json(mechanism_to_json(m)) == m
    with pytest.raises(DomainError):
        mechanism_from_json('{"kind": "laplace"}')


# --- blanket ---------------------------------------------------------------

def test_blanket_mass_examples():
    assert blanket_mass(KRR(3, 0.0)) == pytest.approx(1.0, abs=1e-15)  # [TRIVIAL]
    assert blanket_mass(K32) == pytest.approx(3 / (math.exp(2) + 2), rel=1e-14)  # [DERIVED]
    assert blanket_mass(K32) == pytest.approx(0.319521, abs=5e-7)
    assert blanket_mass(GenGaussian(1.0, 1.0)) == pytest.approx(math.exp(-0.5), rel=1e-14)  # [DERIVED]


@pytest.mark.parametrize("beta", GG_SHAPES)
def test_blanket_mass_is_integral_of_pointwise_infimum(beta):
    m = GenGaussian.from_std(2.0, beta)
    xs = np.linspace(0, 1, 201)

    def inf_density(y):
        return min(density(m, 0.0, y), density(m, 1.0, y))

    mass, _ = integrate.quad(inf_density, -60, 60, points=[0.5], limit=400, epsabs=1e-13)
    assert blanket_mass(m) == pytest.approx(mass, rel=1e-9)
    # the infimum over the domain sits at an endpoint
    ys = np.linspace(-5, 6, 23)
    grid_inf = np.min([density(m, x, ys) for x in xs], axis=0)
    assert np.allclose(grid_inf, blanket_mass(m) * blanket_density(m, ys), rtol=1e-12)


def test_blanket_density_examples():
    assert blanket_density(K32, 1) == pytest.approx(1 / 3)  # [TRIVIAL]
    m = GenGaussian(2.0, 2.0)
    g = blanket_mass(m)
    assert blanket_density(m, 0.5) == pytest.approx(density(m, 0.0, 0.5) / g, rel=1e-15)
    assert blanket_density(m, 0.5) == pytest.approx(density(m, 1.0, 0.5) / g, rel=1e-15)
    m1 = GenGaussian(1.0, 1.0)
    total, _ = integrate.quad(lambda y: blanket_density(m1, y), -np.inf, np.inf, points=None)
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("mech", [K32, KRR(4, 1.0), GenGaussian(1.0, 1.0), GenGaussian(1.5, 2.0),
                                  GenGaussian.from_std(2.0, 2.0)])
def test_blanket_dominance(mech):
    g = blanket_mass(mech)
    if isinstance(mech, KRR):
        xs, ys = mech.inputs, np.arange(1, mech.k + 1)
    else:
        xs, ys = np.linspace(0, 1, 41), np.linspace(-20, 21, 401)
    low = g * np.asarray(blanket_density(mech, ys))
    for x in xs:
        assert np.all(low <= np.asarray(density(mech, x, ys)) + 1e-12)


# --- privacy amplification variable ----------------------------------------

def test_par_value_examples():
    # [DERIVED] l_0(1) = (p - q) / (1/3); the quoted 2.041470 carries a rounding slip
    assert par_value(K32, 1, 2, Blanket(), 0.0, 1) == pytest.approx(3 * (P32 - Q32), rel=1e-14)
    assert par_value(K32, 1, 2, Blanket(), 0.0, 1) == pytest.approx(2.04147, abs=1e-4)
    assert par_value(K32, 1, 2, Blanket(), 0.0, 3) == 0.0  # [TRIVIAL]


@pytest.mark.parametrize("beta", GG_SHAPES)
def test_par_value_vanishes_where_likelihood_ratio_is_e_eps(beta):
    m = GenGaussian(beta, 1.5)
    eps = 0.3
    # for beta > 1 the root is unique; it separates the two centres
    f = lambda y: density(m, 0.0, y) - math.exp(eps) * density(m, 1.0, y)  # noqa: E731
    from scipy.optimize import brentq
    y0 = brentq(f, -0.999, 0.999, xtol=1e-15) if f(-0.999) * f(0.999) < 0 else None
    if y0 is not None:
        assert abs(par_value(m, 0.0, 1.0, Blanket(), eps, y0)) <= 1e-12


def test_krr_pmf_examples():
    d = par_distribution(K32, 1, 2, Blanket(), 0.0, Law.REFERENCE)
    vals, probs = d.pmf
    a = 3 * (P32 - Q32)
    assert np.allclose(vals, [-a, 0.0, a], rtol=1e-14, atol=1e-15)
    assert np.allclose(probs, [1 / 3] * 3, rtol=1e-15)
    d1 = par_distribution(K32, 1, 2, Blanket(), 0.0, Law.HYPOTHESIS_X1)
    vals, probs = d1.pmf
    assert np.allclose(vals, [-a, 0.0, a], rtol=1e-14, atol=1e-15)
    assert np.allclose(probs, [Q32, Q32, P32], rtol=1e-14)


@given(st.integers(2, 6), st.floats(0.1, 5.0), st.floats(0.0, 3.0),
       st.sampled_from(list(Law)), st.booleans())
@settings(max_examples=120, deadline=None)
def test_krr_pmf_properties(k, eps0, eps, law, local_ref):
    m = KRR(k, eps0)
    ref = Local(k) if local_ref and k >= 3 else Blanket()
    d = par_distribution(m, 1, 2, ref, eps, law)
    vals, probs = d.pmf
    assert abs(probs.sum() - 1.0) <= 1e-14
    # cdf is the step function of the pmf
    for v, c in zip(vals, np.cumsum(probs)):
        assert d.cdf(v) == pytest.approx(min(c, 1.0), abs=1e-14)
        assert d.cdf(np.nextafter(v, -np.inf)) == pytest.approx(c - probs[vals == v].sum(), abs=1e-14)
    assert d.cdf(vals[-1]) == pytest.approx(1.0, abs=1e-14)
    if law is Law.REFERENCE:
        assert d.mean == pytest.approx(-math.expm1(eps), abs=1e-12)


@pytest.mark.parametrize("beta", GG_SHAPES)
@pytest.mark.parametrize("ref", [Blanket(), Local(0.5), Local(0.0)])
def test_reference_mean_identity_gen_gaussian(beta, ref):
    m = GenGaussian.from_std(2.0, beta)
    for eps in (0.0, 0.2, 1.0):
        m1, _, _ = par_moments(m, 0.0, 1.0, ref, eps, Law.REFERENCE)
        assert m1 == pytest.approx(-math.expm1(eps), abs=1e-8)


@pytest.mark.parametrize("beta", GG_SHAPES)
def test_gen_gaussian_moments_against_scipy_quadrature(beta):
    m = GenGaussian.from_std(2.0, beta)
    for law, centre in ((Law.HYPOTHESIS_X1, 0.0), (Law.HYPOTHESIS_X1_PRIME, 1.0)):
        ours = par_moments(m, 0.0, 1.0, Blanket(), 0.2, law)
        for j in (1, 2):
            oracle, _ = integrate.quad(
                lambda y: par_value(m, 0.0, 1.0, Blanket(), 0.2, y) ** j * density(m, centre, y),
                -80, 80, points=[0.0, 0.5, 1.0], limit=500, epsabs=1e-12, epsrel=1e-11)
            assert ours[j - 1] == pytest.approx(oracle, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("beta", GG_SHAPES)
@pytest.mark.parametrize("ref", [Blanket(), Local(0.5)])
@pytest.mark.parametrize("law", [Law.HYPOTHESIS_X1, Law.REFERENCE])
def test_gen_gaussian_cdf_matches_empirical_cdf(beta, ref, law):
    # [DERIVED] 10^6-sample Monte-Carlo empirical CDF, fixed seed
    m = GenGaussian.from_std(2.0, beta)
    d = par_distribution(m, 0.0, 1.0, ref, 0.2, law)
    n = 10 ** 6
    centre = 0.0 if law is Law.HYPOTHESIS_X1 else (None if isinstance(ref, Blanket) else ref.x)
    ys = _sample_outputs(m, centre, n, np.random.default_rng(5))
    ls = np.sort(par_value(m, 0.0, 1.0, ref, 0.2, ys))
    # interior points in value space; atoms of the Laplace case sit at the ends
    grid = np.linspace(ls[500], ls[-500], 1002)[1:-1]
    cdf = d.cdf(grid)
    assert np.all(np.diff(cdf) >= 0)
    ecdf = np.searchsorted(ls, grid, side="right") / n
    ks_se = 0.5 / math.sqrt(n)
    assert np.max(np.abs(cdf - ecdf)) <= 3 * ks_se


@pytest.mark.parametrize("beta", GG_SHAPES)
def test_gen_gaussian_cdf_structure(beta):
    m = GenGaussian.from_std(2.0, beta)
    d = par_distribution(m, 0.0, 1.0, Blanket(), 0.2, Law.HYPOTHESIS_X1)
    lo, hi = d.support
    u = np.linspace(max(lo, -50), min(hi, 50), 1000)
    cdf = d.cdf(u)
    assert np.all(np.diff(cdf) >= 0)
    assert np.allclose(cdf + d.sf(u), 1.0, atol=1e-12)
    assert d.cdf(-1e6) <= 1e-12 and d.cdf(1e6) >= 1 - 1e-12
    edges = np.linspace(-3, 3, 61)
    probs = d.interval_probs(edges)
    assert np.allclose(probs, np.diff(d.cdf(edges)), atol=1e-12)
    assert np.all(probs >= 0)


def test_laplace_has_atoms_and_gaussian_does_not():
    lap = par_distribution(GenGaussian(1.0, 1.0), 0.0, 1.0, Blanket(), 0.2, Law.REFERENCE)
    assert len(lap.atoms) == 2
    gau = par_distribution(GenGaussian(2.0, 1.0), 0.0, 1.0, Blanket(), 0.2, Law.REFERENCE)
    assert gau.atoms == ()


def test_single_piece_when_monotonicity_condition_holds():
    from shuffle_acct.mechanisms import _piece_set
    for beta in (1.5, 2.0):
        m = GenGaussian.from_std(2.0, beta)
        eps = 0.2
        assert eps <= math.log(2) - (1.0 / (2 * m.scale)) ** beta
        assert len(_piece_set(m, 0.0, 1.0, Local(0.5), eps).pieces) == 1


# --- variance of l_0 -------------------------------------------------------

def test_variance_l0_examples():
    # [DERIVED] 2k(p-q)^2; the quoted 2.778398 uses p-q = 0.680490, a slip for 0.680479
    assert variance_l0(K32, 1, 2, Blanket()) == pytest.approx(6 * (P32 - Q32) ** 2, rel=1e-14)
    assert variance_l0(K32, 1, 2, Blanket()) == pytest.approx(2.77831, abs=1e-5)
    assert variance_l0(K32, 1, 2, Local(3)) == pytest.approx(2 * (P32 - Q32) ** 2 / Q32, rel=1e-14)
    assert variance_l0(K32, 1, 2, Local(3)) == pytest.approx(8.695, abs=1e-3)


@pytest.mark.parametrize("beta", GG_SHAPES)
def test_variance_l0_gen_gaussian_against_scipy(beta):
    m = GenGaussian.from_std(2.0, beta)
    for ref in (Blanket(), Local(0.3)):
        oracle, _ = integrate.quad(
            lambda y: (density(m, 0.0, y) - density(m, 1.0, y)) ** 2 / (
                blanket_density(m, y) if isinstance(ref, Blanket) else density(m, ref.x, y)),
            -40, 41, points=[0.0, 0.3, 0.5, 1.0], limit=500, epsabs=1e-13, epsrel=1e-11)
        assert variance_l0(m, 0.0, 1.0, ref) == pytest.approx(oracle, rel=1e-8)
