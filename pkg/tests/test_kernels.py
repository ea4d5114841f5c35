import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special, stats

from sbdp.kernels import (Family, KernelPair, KernelSpec, classify_dispersal, cutoff_radius, evaluate, mass,
                          sample_displacement, sup_norm)

FAMILIES = st.sampled_from(["gaussian", "tophat", "exponential"])


def make(family, amp, scale, d=1):
    return {"gaussian": KernelSpec.gaussian, "tophat": KernelSpec.tophat,
            "exponential": KernelSpec.exponential}[family](amp, scale, d)


def test_evaluate_examples():
    assert evaluate(KernelSpec.gaussian(1, 1, 1), [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12)
    top = KernelSpec.tophat(0.5, 1.0, 1)
    assert evaluate(top, [0.7]) == 0.5
    assert evaluate(top, [1.3]) == 0.0
    assert evaluate(KernelSpec.zero(1), [3.2]) == 0.0


def test_mass_examples():
    assert mass(KernelSpec.gaussian(2, 1, 1)) == pytest.approx(2.0)
    assert mass(KernelSpec.tophat(0.5, 1.0, 1)) == pytest.approx(1.0)
    assert mass(KernelSpec.zero(2)) == 0.0


def test_sup_norm_examples():
    assert sup_norm(KernelSpec.gaussian(1, 1, 2)) == pytest.approx(1 / (2 * math.pi), rel=1e-12)
    assert sup_norm(KernelSpec.tophat(0.5, 3.0, 2)) == 0.5
    assert sup_norm(KernelSpec.zero(3)) == 0.0


def test_cutoff_examples():
    assert cutoff_radius(KernelSpec.tophat(1, 1, 1), 1e-3) == 1.0
    assert cutoff_radius(KernelSpec.zero(1)) == 0.0
    rc = cutoff_radius(KernelSpec.gaussian(1, 1, 1), 1e-6)
    # independent oracle: two-sided normal tail erfc(r / sqrt 2) = 1e-6
    oracle = math.sqrt(2) * special.erfcinv(1e-6)
    assert rc == pytest.approx(oracle, abs=1e-9)
    assert special.erfc(rc / math.sqrt(2)) <= 1e-6 * (1 + 1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("family", ["gaussian", "exponential"])
def test_truncation_error_matches_tail(family, d):
    k = make(family, 1.3, 0.8, d)
    assert k.truncation_error <= k.tail_tol * k.mass * (1 + 1e-9)
    assert k.truncation_error > 0


@given(FAMILIES, st.floats(0.1, 5), st.floats(0.3, 3))
def test_quadrature_reproduces_mass_d1(family, amp, scale):
    k = make(family, amp, scale, 1)
    rc = k.cutoff
    pts = [0.0] + ([scale] if family == "tophat" else [])
    val, err = integrate.quad(lambda x: float(evaluate(k, [x])), -rc, rc, points=[p for p in pts if -rc < p < rc],
                              limit=200, epsabs=1e-12, epsrel=1e-10)
    assert abs(val - k.mass) <= k.tail_tol * k.mass + 1e-7 * k.mass


@pytest.mark.parametrize("family", ["gaussian", "exponential", "tophat"])
@pytest.mark.parametrize("d", [2, 3])
def test_radial_quadrature_reproduces_mass(family, d):
    k = make(family, 1.7, 0.9, d)
    area = d * math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    val, _ = integrate.quad(lambda r: area * r ** (d - 1) * float(k.radial(r)), 0, k.cutoff, limit=200,
                            points=[k.scale] if family == "tophat" else None)
    assert abs(val - k.mass) <= k.tail_tol * k.mass + 1e-7


@given(FAMILIES, st.floats(0.1, 5), st.floats(0.3, 3), st.integers(1, 3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_evaluate_is_even(family, amp, scale, d, x):
    k = make(family, amp, scale, d)
    v = np.array(x[:d])
    assert evaluate(k, v) == evaluate(k, -v)


def test_tophat_sampling_uniform():
    rng = np.random.default_rng(1)
    x = sample_displacement(KernelSpec.tophat(1.0, 1.0, 1), rng, 100_000)[:, 0]
    assert abs(x.mean()) < 3 * math.sqrt(1 / 3 / 1e5)
    # variance of the sample variance for U(-1, 1): (mu4 - sigma^4) / n
    se = math.sqrt((1 / 5 - 1 / 9) / 1e5)
    assert abs(x.var() - 1 / 3) < 3 * se


def test_gaussian_sampling_variance():
    rng = np.random.default_rng(2)
    x = sample_displacement(KernelSpec.gaussian(1.0, 2.0, 1), rng, 100_000)[:, 0]
    se = math.sqrt(2 * 16 / 1e5)
    assert abs(x.var() - 4.0) < 3 * se


def test_sampling_replay_is_identical():
    k = KernelSpec.exponential(1.0, 1.5, 2)
    a = sample_displacement(k, np.random.default_rng(9), 1000)
    b = sample_displacement(k, np.random.default_rng(9), 1000)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("family,scale", [("gaussian", 1.0), ("exponential", 0.7), ("tophat", 1.2)])
def test_sampling_chi_square(family, scale):
    k = make(family, 1.0, scale, 1)
    rng = np.random.default_rng(3)
    x = sample_displacement(k, rng, 100_000)[:, 0]
    edges = np.linspace(-k.cutoff, k.cutoff, 51)
    obs, _ = np.histogram(x, edges)
    probs = np.array([integrate.quad(lambda u: float(evaluate(k, [u])), a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    probs /= probs.sum()
    keep = probs * len(x) >= 5
    exp = probs[keep] * len(x)
    o = obs[keep]
    chi2 = float(np.sum((o - exp) ** 2 / exp))
    p = stats.chi2.sf(chi2, keep.sum() - 1)
    assert p > 1e-3


def test_sampled_radius_d3_matches_law():
    k = KernelSpec.gaussian(1.0, 1.0, 3)
    r = np.linalg.norm(sample_displacement(k, np.random.default_rng(4), 50_000), axis=1)
    # |X| for a standard 3-d Gaussian is chi with 3 degrees of freedom
    assert stats.kstest(r, stats.chi(3).cdf).pvalue > 1e-3


def test_classify_examples():
    g = KernelSpec.gaussian(1.0, 1.0, 1)
    c = classify_dispersal(KernelPair(g, g.scaled(0.5)))
    assert c.short and c.theta == pytest.approx(0.5, rel=1e-9)
    assert classify_dispersal(KernelPair(KernelSpec.tophat(1, 1, 1), g)).short
    assert not classify_dispersal(KernelPair(KernelSpec.gaussian(1, 2, 1), KernelSpec.gaussian(1, 1, 1))).short


def test_tophat_theta_is_min_ratio():
    g = KernelSpec.gaussian(1.0, 1.0, 1)
    c = classify_dispersal(KernelPair(KernelSpec.tophat(1.0, 1.0, 1), g))
    assert c.theta == pytest.approx(float(evaluate(g, [1.0])), rel=1e-9)


def test_zero_dispersal_sentinel():
    c = classify_dispersal(KernelPair(KernelSpec.zero(1), KernelSpec.gaussian(1, 1, 1)))
    assert c.short and math.isinf(c.theta)


def test_zero_competition_is_long():
    assert not classify_dispersal(KernelPair(KernelSpec.gaussian(1, 1, 1), KernelSpec.zero(1))).short


@given(st.sampled_from(["gaussian", "exponential"]), st.sampled_from(["gaussian", "exponential"]),
       st.floats(0.5, 2), st.floats(0.5, 2), st.floats(0.1, 10))
def test_classification_scale_consistent(fp, fm, sp, sm, lam):
    plus, minus = make(fp, 1.0, sp), make(fm, 1.0, sm)
    a = classify_dispersal(KernelPair(plus, minus))
    b = classify_dispersal(KernelPair(plus, minus.scaled(lam)))
    assert a.short == b.short
    if a.short:
        assert b.theta == pytest.approx(lam * a.theta, rel=1e-9)


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelSpec.gaussian(-1, 1, 1)
    with pytest.raises(ValueError):
        KernelSpec.gaussian(1, 0, 1)
    with pytest.raises(ValueError):
        KernelSpec.gaussian(1, 1, 0)
    with pytest.raises(ValueError):
        KernelPair(KernelSpec.gaussian(1, 1, 1), KernelSpec.gaussian(1, 1, 2))
    assert Family("tophat") is Family.TOPHAT
