import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from sbdp.dynamics import (BIRTH, DEATH, AbsorbingStateError, Event, Model, PopulationCapError, SimState,
                           StaleEventError, replica_rng, run_replica, run_replicas, simulate)
from sbdp.kernels import KernelPair, KernelSpec, evaluate
from sbdp.pointset import PointConfig, Torus, sample_poisson

G = KernelSpec.gaussian(1.0, 1.0, 1)
Z = KernelSpec.zero(1)
TORUS = Torus(1, 20.0)


def state_for(positions, plus=G, minus=Z, m=0.2, torus=TORUS):
    model = Model(KernelPair(plus, minus), m)
    cfg = PointConfig.from_positions(torus, positions, model.kernels.max_cutoff)
    return SimState(cfg, model)


def test_total_rates_empty_is_absorbing(rng):
    st_ = state_for([])
    assert st_.total_rates() == (0.0, 0.0)
    with pytest.raises(AbsorbingStateError):
        st_.next_event(rng)


def test_total_rates_example():
    st_ = state_for([[1.0], [2.0], [5.0], [9.0], [15.0]])
    B, D = st_.total_rates()
    assert B == pytest.approx(5.0)
    assert D == pytest.approx(1.0)


def test_birth_rate_matches_quadrature(rng):
    pts = 20.0 * rng.random((3, 1))
    st_ = state_for(pts)
    L = 20.0

    def f(x):
        return sum(float(evaluate(G, [((x - p[0] + L / 2) % L) - L / 2])) for p in pts)

    val = sum(integrate.quad(f, a, a + 1.0, limit=200)[0] for a in range(20))
    assert st_.total_rates()[0] == pytest.approx(val, rel=1e-6)


def test_death_rates_match_pair_sums():
    pts = np.array([[1.0], [1.7], [3.0], [12.0]])
    st_ = state_for(pts, minus=G.scaled(0.4), m=0.3)
    for s, x in enumerate(pts):
        others = np.delete(pts[:, 0], s)
        expect = 0.3 + sum(float(evaluate(G.scaled(0.4), [x[0] - y])) for y in others)
        assert st_.rates[s] == pytest.approx(expect, rel=1e-12)


def test_no_births_means_death(rng):
    st_ = state_for([[1.0], [4.0]], plus=Z, minus=G, m=0.1)
    for _ in range(200):
        assert st_.next_event(rng).kind == DEATH


def test_single_point_birth_probability():
    rng = np.random.default_rng(170)
    st_ = state_for([[3.0]], minus=G.scaled(2.0), m=1.0)
    n = 100_000
    births = sum(st_.next_event(rng).kind == BIRTH for _ in range(n))
    assert abs(births / n - 0.5) < 3 * math.sqrt(0.25 / n)


def test_death_selection_frequencies():
    rng = np.random.default_rng(18)
    st_ = state_for([[3.0], [3.5]], plus=Z, minus=G, m=0.1)
    st_.config.insert([10.0])
    st_._full_recompute()
    w = st_.rates.copy()
    p = w / w.sum()
    n = 100_000
    counts = {int(h): 0 for h in st_.config.handles}
    for _ in range(n):
        counts[st_.next_event(rng).handle] += 1
    obs = np.array([counts[int(h)] for h in st_.config.handles])
    assert stats.chisquare(obs, p * n).pvalue > 1e-3


def test_exact_transition_law_small_system():
    """(kind, target) frequencies of single steps vs the exact discrete law."""
    rng = np.random.default_rng(19)
    torus = Torus(1, 12.0)
    st_ = state_for([[1.0], [1.8], [6.0]], plus=G.scaled(0.7), minus=G.scaled(0.5), m=0.3, torus=torus)
    B, D = st_.total_rates()
    probs = {("birth", int(h)): B / (B + D) / 3 for h in st_.config.handles}
    for s, h in enumerate(st_.config.handles):
        probs[("death", int(h))] = st_.rates[s] / (B + D)
    n = 100_000
    counts = dict.fromkeys(probs, 0)
    for _ in range(n):
        ev = st_.next_event(rng)
        counts[("birth" if ev.kind == BIRTH else "death", ev.handle)] += 1
    keys = sorted(probs)
    assert stats.chisquare([counts[k] for k in keys], [probs[k] * n for k in keys]).pvalue > 1e-3


def test_waiting_time_is_exponential():
    rng = np.random.default_rng(20)
    st_ = state_for([[1.0], [7.0]], minus=G, m=0.5)
    B, D = st_.total_rates()
    waits = [st_.next_event(rng).wait for _ in range(20_000)]
    assert stats.kstest(waits, stats.expon(scale=1 / (B + D)).cdf).pvalue > 1e-3


def test_death_of_only_point_is_absorbing():
    st_ = state_for([[2.0]])
    h = int(st_.config.handles[0])
    st_.apply_event(Event(DEATH, 0.1, h))
    assert len(st_.config) == 0 and st_.total_rates() == (0.0, 0.0)


def test_birth_then_death_restores_rates(rng):
    st_ = state_for(20.0 * rng.random((8, 1)), minus=G.scaled(0.8), m=0.2)
    before = {int(h): st_.death_rate(int(h)) for h in st_.config.handles}
    parent = int(st_.config.handles[0])
    st_.apply_event(Event(BIRTH, 0.1, parent, np.array([st_.config.position(parent)[0] + 0.3])))
    new = max(int(h) for h in st_.config.handles)
    st_.apply_event(Event(DEATH, 0.1, new))
    for h, w in before.items():
        assert st_.death_rate(h) == pytest.approx(w, abs=1e-12)


def test_stale_events_rejected():
    st_ = state_for([[2.0]])
    with pytest.raises(StaleEventError):
        st_.apply_event(Event(DEATH, 0.1, 999))


def test_cache_audit_after_random_events(rng):
    model = Model(KernelPair(G, G.scaled(0.5)), 0.0)
    st_ = SimState(sample_poisson(2.0, Torus(1, 50.0), rng, model.kernels.max_cutoff), model, recompute_period=0)
    for _ in range(10_000):
        st_.step(rng)
    assert st_.audit() < 1e-9


@given(st.integers(0, 2**32 - 1))
def test_cache_consistent_in_higher_dimensions(seed):
    rng = np.random.default_rng(seed)
    k = KernelSpec.gaussian(1.0, 0.8, 2)
    model = Model(KernelPair(k, k.scaled(0.7)), 0.1)
    torus = Torus(2, 12.0)
    st_ = SimState(sample_poisson(0.5, torus, rng, model.kernels.max_cutoff), model, recompute_period=0)
    for _ in range(200):
        try:
            st_.step(rng)
        except AbsorbingStateError:
            break
    assert st_.audit() < 1e-9


def test_pure_death_law():
    model = Model(KernelPair(Z, Z), 0.2)
    trajs = run_replicas(model, Torus(1, 100.0), 2.0, 5.0, [0.0, 5.0], 2024, 1000)
    d = np.array([t.densities[-1] for t in trajs])
    assert abs(d.mean() - 2 * math.exp(-1)) < 3 * d.std(ddof=1) / math.sqrt(len(d))


def test_empty_initial_stays_empty(rng):
    model = Model(KernelPair(G, G), 0.3)
    tr = simulate(PointConfig(Torus(1, 20.0)), model, 5.0, [0, 1, 2, 5], rng)
    assert tr.absorbed and list(tr.counts) == [0, 0, 0, 0]


def test_observation_grid_and_replay():
    model = Model(KernelPair(G, G.scaled(0.5)), 0.1)
    a = run_replica(model, TORUS, 1.0, 4.0, [0, 1, 2, 3, 4], 77, 3, keep_snapshots=True)
    b = run_replica(model, TORUS, 1.0, 4.0, [0, 1, 2, 3, 4], 77, 3, keep_snapshots=True)
    assert np.array_equal(a.counts, b.counts)
    assert all(np.array_equal(x, y) for x, y in zip(a.snapshots, b.snapshots))
    assert a.counts[0] == len(a.snapshots[0])


def test_parallel_replicas_match_serial():
    model = Model(KernelPair(G, G.scaled(0.5)), 0.1)
    serial = run_replicas(model, TORUS, 1.0, 2.0, [0, 1, 2], 5, 4, n_jobs=1)
    par = run_replicas(model, TORUS, 1.0, 2.0, [0, 1, 2], 5, 4, n_jobs=2)
    assert [t.counts.tolist() for t in serial] == [t.counts.tolist() for t in par]


def test_replica_streams_independent():
    a = replica_rng(1, 0).random(5)
    b = replica_rng(1, 1).random(5)
    c = replica_rng(1, 0, stream=1).random(5)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_population_cap_carries_partial_trajectory(rng):
    model = Model(KernelPair(G.scaled(3.0), Z), 0.0)
    cfg = sample_poisson(1.0, TORUS, rng, model.kernels.max_cutoff)
    with pytest.raises(PopulationCapError) as info:
        simulate(cfg, model, 50.0, np.arange(0, 51.0), rng, population_cap=100)
    tr = info.value.trajectory
    assert tr.cap_hit and len(tr.counts) < 51


def test_monotone_coupling_in_mortality():
    """Pure death with shared uniforms: a higher m never leaves more survivors."""
    rng = np.random.default_rng(21)
    n0 = 50
    lifetimes = rng.exponential(1.0, n0)
    for t in (0.5, 1.0, 3.0):
        survivors = [int(np.sum(lifetimes / m > t)) for m in (0.1, 0.2, 0.5, 1.0)]
        assert survivors == sorted(survivors, reverse=True)
    # the same holds for the engine fed identical seeds, in distribution
    model_lo = Model(KernelPair(Z, Z), 0.1)
    model_hi = Model(KernelPair(Z, Z), 0.5)
    lo = run_replicas(model_lo, TORUS, 2.0, 3.0, [3.0], 3, 200)
    hi = run_replicas(model_hi, TORUS, 2.0, 3.0, [3.0], 3, 200)
    assert np.mean([t.counts[-1] for t in hi]) < np.mean([t.counts[-1] for t in lo])


def test_stationary_run_has_no_drift():
    from sbdp.estimators import drift_test

    model = Model(KernelPair(G, G.scaled(0.5)), 0.0)
    obs = np.arange(0.0, 30.0 + 1e-9, 1.0)
    trajs = run_replicas(model, Torus(1, 60.0), 2.0, 30.0, obs, 31, 8)
    mean = np.mean([t.densities for t in trajs], axis=0)
    slope, p, drifting = drift_test(obs[5:], mean[5:])
    assert not drifting


def test_model_validation():
    with pytest.raises(ValueError):
        Model(KernelPair(G, G), -0.1)
    with pytest.raises(ValueError):
        Model(KernelPair(G, G), 0.1).check_torus(Torus(1, 8.0))
