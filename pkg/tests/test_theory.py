import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbdp.kernels import KernelPair, KernelSpec, evaluate
from sbdp.theory import (DominationCertificate, EnvelopeCase, NormBoundInput, _sample_batches, adversarial_refine,
                         death_energy, envelope, envelope_series, find_domination_constants, margins,
                         operator_norm_bound, verify_domination)

G = KernelSpec.gaussian(1.0, 1.0, 1)
Z = KernelSpec.zero(1)


def test_norm_bound_example():
    value = operator_norm_bound(NormBoundInput(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0))
    e = math.e
    assert value == pytest.approx(8 / e**2 + (2 + e) / e, abs=1e-12)
    assert value == pytest.approx(2.8184411482357863, abs=1e-9)


def test_norm_bound_zero_kernels():
    inp = NormBoundInput.from_kernels(KernelPair(Z, Z), 0.0, 0.0, 1.0)
    assert operator_norm_bound(inp) == 0.0


def test_norm_bound_rejects_bad_theta():
    with pytest.raises(ValueError):
        NormBoundInput(1.0, 1.0, 1, 1, 1, 1, 1)


nonneg = st.floats(0.0, 5.0)


@given(nonneg, nonneg, nonneg, nonneg, nonneg, st.floats(-2, 2), st.floats(0.05, 3),
       st.sampled_from(["mass_plus", "mass_minus", "sup_plus", "sup_minus", "mortality"]))
def test_norm_bound_monotone(mp, mm, sp, sm, m, th, gap, field):
    base = NormBoundInput(th, th + gap, mp, mm, sp, sm, m)
    kw = dict(theta=th, theta_prime=th + gap, mass_plus=mp, mass_minus=mm, sup_plus=sp, sup_minus=sm, mortality=m)
    kw[field] += 0.01
    assert operator_norm_bound(NormBoundInput(**kw)) >= operator_norm_bound(base)


def test_norm_bound_decreasing_in_gap():
    thetas = np.linspace(-2.0, 0.9, 30)
    vals = [operator_norm_bound(NormBoundInput(t, 1.0, 1.0, 0.5, 0.4, 0.2, 0.3)) for t in thetas]
    assert np.all(np.diff(vals) > 0)


def test_singleton_margin_is_minus_b():
    cert = DominationCertificate(0.37, 0.5, 10_000, 0.0, (2, 6))
    pair = KernelPair(G, G.scaled(0.1))
    configs = [np.random.default_rng(0).normal(size=(50, 1, 1))]
    assert verify_domination(cert, pair, configs) == -0.37


def test_two_point_margin_closed_form():
    pair = KernelPair(G, KernelSpec.gaussian(1.0, 2.0, 1))
    b, theta = 0.1, 0.8
    for u in (0.0, 0.5, 1.3, 3.0):
        eta = np.array([[[0.0], [u]]])
        expect = 2 * (theta * float(evaluate(G, [u])) - float(evaluate(pair.competition, [u]))) - 2 * b
        assert margins(b, theta, pair, eta)[0] == pytest.approx(expect, abs=1e-15)


def test_short_pair_certificate_is_analytic():
    pair = KernelPair(G, G.scaled(0.5))
    cert = find_domination_constants(pair, 10_000, np.random.default_rng(1))
    assert cert.analytic and cert.b == 0.0
    assert cert.theta == pytest.approx(0.5, rel=1e-9) and cert.margin <= 0


def test_tophat_certificate_theta():
    pair = KernelPair(KernelSpec.tophat(1.0, 1.0, 1), G)
    cert = find_domination_constants(pair, 10_000, np.random.default_rng(2))
    assert cert.b == 0.0
    assert cert.theta == pytest.approx(float(evaluate(G, [1.0])), rel=1e-9)
    assert cert.margin <= 0


def test_gaussian_pair_certificate_survives_fresh_sample_and_local_search():
    pair = KernelPair(G, KernelSpec.gaussian(1.0, 2.0, 1))
    rng = np.random.default_rng(3)
    cert = find_domination_constants(pair, 100_000, rng)
    assert cert.valid
    fresh = _sample_batches(pair, 100_000, cert.sizes, rng)
    assert verify_domination(cert, pair, fresh) <= 0
    assert adversarial_refine(cert, pair, fresh, rng) <= 0


def test_long_pair_certificate_search():
    # sigma- < sigma+ is long dispersal: b > 0 is needed
    pair = KernelPair(KernelSpec.gaussian(1.0, 2.0, 1), G)
    rng = np.random.default_rng(4)
    cert = find_domination_constants(pair, 20_000, rng)
    assert not cert.analytic and cert.theta > 0 and cert.b > 0
    assert cert.margin <= 0
    fresh = _sample_batches(pair, 20_000, cert.sizes, rng)
    assert verify_domination(cert, pair, fresh) <= 0


def test_certificate_json():
    pair = KernelPair(G, G.scaled(0.5))
    cert = find_domination_constants(pair, 10_000, np.random.default_rng(5), seed=5)
    doc = json.loads(cert.to_json(pair))
    assert {"b", "theta", "budget", "margin", "seed", "kernels"} <= set(doc)


def test_budget_floor():
    with pytest.raises(ValueError):
        find_domination_constants(KernelPair(G, G), 100, np.random.default_rng(0))


def test_envelope_examples():
    assert envelope(EnvelopeCase("ii", 10.0, 3, 1.0, 1.5, C=2.0, eps=0.3)) == pytest.approx(8 * math.exp(-3))
    case3 = EnvelopeCase("iii", 5.0, 4, 0.0, 0.2, k0=1.0, death_rate=death_energy(KernelPair(Z, Z), 0.2,
                                                                                     np.zeros((4, 1))))
    assert envelope(case3) == pytest.approx(math.exp(-4), rel=1e-12)
    assert envelope(EnvelopeCase("i", 0.0, 3, 1.0, 0.5, C=1.7, delta=0.2)) == pytest.approx(1.7**3)
    assert envelope(EnvelopeCase("iii", 0.0, 2, 0.0, 0.2, k0=0.3, death_rate=1.0)) == 0.3


def test_envelope_case_constraints():
    with pytest.raises(ValueError):
        EnvelopeCase("ii", 1.0, 1, 1.0, 1.5, eps=0.6)
    with pytest.raises(ValueError):
        EnvelopeCase("i", 1.0, 1, 1.0, 0.5, delta=0.6)
    with pytest.raises(ValueError):
        EnvelopeCase("i", 1.0, 1, 1.0, 0.5, delta=0.5, short_dispersal=False)
    EnvelopeCase("i", 1.0, 1, 1.0, 0.5, delta=0.5, short_dispersal=True)
    with pytest.raises(ValueError):
        EnvelopeCase("iii", 1.0, 1, 1.0, 0.5)


def test_death_energy_with_competition():
    pair = KernelPair(Z, G)
    pts = np.array([[0.0], [1.0]])
    assert death_energy(pair, 0.2, pts) == pytest.approx(0.4 + 2 * float(evaluate(G, [1.0])))


def test_envelope_series_matches_pointwise():
    case = EnvelopeCase("ii", 0.0, 1, 1.0, 1.5, C=1.0, eps=0.45)
    t = np.linspace(0, 5, 11)
    assert np.allclose(envelope_series(case, t), np.exp(-0.45 * t))
