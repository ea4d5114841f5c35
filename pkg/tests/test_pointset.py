import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.stateful import Bundle, RuleBasedStateMachine, consumes, invariant, rule
from scipy import stats

from sbdp.pointset import (PointConfig, Torus, brute_force_neighbors, read_snapshot, sample_poisson,
                           window_counts, write_snapshot)


def test_poisson_zero_density_is_empty(rng):
    assert len(sample_poisson(0.0, Torus(2, 10.0), rng)) == 0


def test_poisson_count_law():
    torus = Torus(1, 100.0)
    rng = np.random.default_rng(5)
    counts = np.array([len(sample_poisson(2.0, torus, rng)) for _ in range(10_000)])
    assert abs(counts.mean() - 200) < 3 * math.sqrt(200 / len(counts))
    # chi-square against Poisson(200) on pooled bins
    edges = np.arange(150, 252, 6)
    obs = np.histogram(counts, np.concatenate([[-1], edges, [10**6]]))[0]
    cdf = stats.poisson(200).cdf
    probs = np.diff([0.0] + [cdf(e - 1) for e in edges] + [1.0])
    exp = probs * len(counts)
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    assert stats.chi2.sf(chi2, len(obs) - 1) > 1e-3


def test_poisson_positions_uniform():
    cfg = sample_poisson(5.0, Torus(2, 20.0), np.random.default_rng(6))
    for axis in range(2):
        assert stats.kstest(cfg.positions[:, axis] / 20.0, "uniform").pvalue > 1e-3


def test_poisson_replay():
    a = sample_poisson(1.5, Torus(3, 8.0), np.random.default_rng(44))
    b = sample_poisson(1.5, Torus(3, 8.0), np.random.default_rng(44))
    assert np.array_equal(a.positions, b.positions)


def test_neighbors_examples():
    torus = Torus(1, 10.0)
    empty = PointConfig(torus, 1.0)
    assert empty.neighbors_within([3.0], 1.0) == []
    cfg = PointConfig.from_positions(torus, [[1.0], [1.5]], 1.0)
    assert cfg.neighbors_within([1.0], 0.6, exclude=0) == [1]
    assert cfg.neighbors_within([1.5], 0.6, exclude=1) == [0]
    assert cfg.neighbors_within([1.0], 0.4, exclude=0) == []


def test_neighbors_across_boundary():
    cfg = PointConfig.from_positions(Torus(1, 10.0), [[0.1], [9.9]], 1.0)
    assert cfg.neighbors_within([0.1], 0.3, exclude=0) == [1]


def test_neighbors_match_brute_force_random(rng):
    torus = Torus(2, 30.0)
    cfg = sample_poisson(200 / 900, torus, rng, 2.5)
    for _ in range(100):
        x = 30.0 * rng.random(2)
        r = float(rng.uniform(0, 7))
        assert cfg.neighbors_within(x, r) == brute_force_neighbors(cfg, x, r)


def test_query_radius_above_half_box_rejected():
    with pytest.raises(ValueError):
        PointConfig(Torus(1, 10.0)).neighbors_within([0.0], 5.5)


@given(st.integers(1, 3), st.floats(5, 30), st.floats(0.3, 4), st.integers(0, 2**32 - 1))
def test_cell_list_matches_brute_force_under_mutation(d, L, cell, seed):
    rng = np.random.default_rng(seed)
    torus = Torus(d, L)
    cfg = PointConfig(torus, min(cell, L))
    for _ in range(60):
        if len(cfg) and rng.random() < 0.4:
            cfg.remove(int(rng.choice(cfg.handles)))
        else:
            cfg.insert(L * rng.random(d) - L * 0.5)  # exercises wrapping
        x = L * rng.random(d)
        r = float(rng.uniform(0, L / 2))
        assert cfg.neighbors_within(x, r) == brute_force_neighbors(cfg, x, r)
    cfg.check_index()


@given(st.integers(1, 3), st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_insert_remove_restores_index(d, n, seed):
    rng = np.random.default_rng(seed)
    torus = Torus(d, 12.0)
    cfg = PointConfig.from_positions(torus, 12.0 * rng.random((n, d)), 1.5)
    before = cfg.index_state()
    h = cfg.insert(12.0 * rng.random(d))
    cfg.remove(h)
    assert cfg.index_state() == before
    assert h not in cfg


def test_handles_never_reused():
    cfg = PointConfig(Torus(1, 10.0), 1.0)
    a = cfg.insert([1.0])
    cfg.remove(a)
    assert cfg.insert([1.0]) != a


@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_min_image_metric(d, seed):
    rng = np.random.default_rng(seed)
    torus = Torus(d, 7.0)
    x, y, z = (7.0 * rng.random(d) for _ in range(3))
    dxy, dyx = torus.distance(x, y), torus.distance(y, x)
    assert dxy == dyx
    assert torus.distance(x, z) <= dxy + torus.distance(y, z) + 1e-12
    assert dxy <= math.sqrt(d) * 3.5 + 1e-12


def test_window_count_examples(rng):
    torus = Torus(2, 10.0)
    assert PointConfig(torus).window_count([0, 0], [10, 10]) == 0
    cfg = sample_poisson(1.0, torus, rng)
    assert cfg.window_count([0, 0], [10, 10]) == len(cfg)
    assert window_counts(cfg, 1.0).sum() == len(cfg)


def test_unit_window_mean_poisson():
    rng = np.random.default_rng(8)
    torus = Torus(1, 100.0)
    counts = np.concatenate([window_counts(sample_poisson(1.0, torus, rng), 1.0) for _ in range(50)])
    assert abs(counts.mean() - 1.0) < 3 * math.sqrt(1.0 / len(counts))


def test_window_counts_agree_with_boxes(rng):
    cfg = sample_poisson(3.0, Torus(2, 6.0), rng)
    w = window_counts(cfg, 2.0)
    for i in range(3):
        for j in range(3):
            assert w[i + 3 * j] == cfg.window_count([2 * i, 2 * j], [2 * i + 2, 2 * j + 2])


def test_snapshot_round_trip_is_bit_exact(tmp_path, rng):
    cfg = sample_poisson(2.0, Torus(3, 5.0), rng)
    path = tmp_path / "snap.txt"
    write_snapshot(path, cfg, time=1.25, seed=99)
    back, meta = read_snapshot(path)
    assert np.array_equal(back.positions, cfg.positions)
    assert back.torus == cfg.torus
    assert meta["time"] == 1.25 and meta["seed"] == 99


def test_torus_validation():
    with pytest.raises(ValueError):
        Torus(4, 10.0)
    with pytest.raises(ValueError):
        Torus(1, 0.0)
    with pytest.raises(ValueError):
        Torus(1, 5.0).check_interaction_range(3.0)


class CellListMachine(RuleBasedStateMachine):
    """Random interleavings of inserts, removals and queries against a dict model."""

    def __init__(self):
        super().__init__()
        self.torus = Torus(2, 10.0)
        self.cfg = PointConfig(self.torus, 1.7)
        self.model: dict[int, np.ndarray] = {}

    handles = Bundle("handles")

    @rule(target=handles, x=st.floats(-20, 20), y=st.floats(-20, 20))
    def insert(self, x, y):
        h = self.cfg.insert([x, y])
        self.model[h] = self.torus.wrap(np.array([x, y]))
        return h

    @rule(h=consumes(handles))
    def remove(self, h):
        self.cfg.remove(h)
        del self.model[h]

    @rule(x=st.floats(0, 10), y=st.floats(0, 10), r=st.floats(0, 5))
    def query(self, x, y, r):
        q = np.array([x, y])
        expect = sorted(h for h, p in self.model.items() if self.torus.distance(p, q) <= r)
        assert self.cfg.neighbors_within(q, r) == expect

    @invariant()
    def consistent(self):
        assert len(self.cfg) == len(self.model)
        for h, p in self.model.items():
            assert np.array_equal(self.cfg.position(h), p)
        self.cfg.check_index()


TestCellListMachine = CellListMachine.TestCase
