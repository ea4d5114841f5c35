"""Correlation-function and window factorial-moment estimators.

Accumulators keep integer sums (pair counts, falling-factorial products) so
merging replica accumulators in any order gives bit-identical estimates.

Pair counts are over *ordered* pairs ``(x, y)``, ``x != y``: a configuration
with two points at distance ``r`` contributes 2 to the bin holding ``r``.
This is the factorial-measure convention, under which a Poisson state of
density ``kappa`` has ``k2 = kappa**2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import spatial, stats

from .kernels import unit_ball_volume
from .pointset import Torus


# -- densities ---------------------------------------------------------------
def estimate_density(counts: Sequence[int], volume: float) -> tuple[float, float]:
    """Mean of ``n / V`` across replicas and its standard error.

    The standard error is NaN for a single replica.
    """
    x = np.asarray(counts, dtype=float) / volume
    if len(x) == 0:
        raise ValueError("no snapshots")
    if len(x) == 1:
        return float(x[0]), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


# -- pair correlation -------------------------------------------------------
def shell_volume(r_lo, r_hi, d: int):
    """Volume of the d-dimensional annulus r_lo <= |u| < r_hi."""
    return unit_ball_volume(d) * (np.asarray(r_hi, float) ** d - np.asarray(r_lo, float) ** d)


def ordered_pair_counts(positions: np.ndarray, torus: Torus, edges: np.ndarray) -> np.ndarray:
    """Ordered-pair counts per half-open distance bin [e_i, e_{i+1})."""
    edges = np.asarray(edges, dtype=float)
    pos = np.asarray(positions, dtype=float).reshape(-1, torus.dimension)
    if len(pos) < 2:
        return np.zeros(len(edges) - 1, dtype=np.int64)
    tree = spatial.cKDTree(pos, boxsize=torus.length)
    pairs = tree.query_pairs(float(edges[-1]), output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(len(edges) - 1, dtype=np.int64)
    dist = torus.distance(pos[pairs[:, 0]], pos[pairs[:, 1]])
    idx = np.searchsorted(edges, dist, side="right") - 1
    ok = (idx >= 0) & (idx < len(edges) - 1)
    return 2 * np.bincount(idx[ok], minlength=len(edges) - 1).astype(np.int64)


@dataclass
class PairAccumulator:
    """Mergeable pair-count sums; replicas are the independent samples."""

    edges: np.ndarray
    torus: Torus
    n_replicas: int = 0
    sum_counts: Optional[list] = None
    sum_sq: Optional[list] = None
    # each replica sample pools this many snapshots (e.g. a time average)
    snapshots_per_sample: int = 1

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        if np.any(np.diff(self.edges) <= 0) or self.edges[0] < 0:
            raise ValueError("bin edges must be nonnegative and strictly increasing")
        if self.edges[-1] > self.torus.length / 2:
            raise ValueError("largest bin edge exceeds half the box side")
        nb = len(self.edges) - 1
        if self.sum_counts is None:
            self.sum_counts = [0] * nb
            self.sum_sq = [0] * nb

    def add(self, *snapshots: np.ndarray) -> None:
        """Add one replica sample made of ``snapshots_per_sample`` snapshots."""
        if len(snapshots) != self.snapshots_per_sample:
            raise ValueError(f"expected {self.snapshots_per_sample} snapshots per sample")
        c = sum(ordered_pair_counts(p, self.torus, self.edges) for p in snapshots)
        for i, v in enumerate(c.tolist()):
            self.sum_counts[i] += v
            self.sum_sq[i] += v * v
        self.n_replicas += 1

    def merge(self, other: "PairAccumulator") -> "PairAccumulator":
        if (not np.array_equal(self.edges, other.edges) or self.torus != other.torus
                or self.snapshots_per_sample != other.snapshots_per_sample):
            raise ValueError("cannot merge accumulators with different binning")
        return PairAccumulator(
            self.edges, self.torus, self.n_replicas + other.n_replicas,
            [a + b for a, b in zip(self.sum_counts, other.sum_counts)],
            [a + b for a, b in zip(self.sum_sq, other.sum_sq)],
            self.snapshots_per_sample,
        )

    def estimate(self, time: float = math.nan) -> "CorrelationEstimate":
        return _pair_estimate(self, time)


@dataclass(frozen=True)
class CorrelationEstimate:
    r_lo: np.ndarray
    r_hi: np.ndarray
    k2: np.ndarray
    stderr: np.ndarray
    n_replicas: int
    time: float = math.nan
    k1: float = math.nan
    k1_stderr: float = math.nan

    def rows(self):
        for lo, hi, k, s in zip(self.r_lo, self.r_hi, self.k2, self.stderr):
            yield float(lo), float(hi), float(k), float(s)


def _pair_estimate(acc: PairAccumulator, time: float) -> CorrelationEstimate:
    R = acc.n_replicas
    if R == 0:
        raise ValueError("no replicas accumulated")
    norm = (acc.snapshots_per_sample * acc.torus.volume
            * shell_volume(acc.edges[:-1], acc.edges[1:], acc.torus.dimension))
    s1 = np.array(acc.sum_counts, dtype=float)
    mean_count = s1 / R
    k2 = mean_count / norm
    if R > 1:
        # exact integer sums: var = (sum x^2 - (sum x)^2 / R) / (R - 1)
        num = np.array([q * R - s * s for q, s in zip(acc.sum_sq, acc.sum_counts)], dtype=float)
        var = np.maximum(num, 0.0) / (R * (R - 1))
        stderr = np.sqrt(var / R) / norm
    else:
        stderr = np.full_like(k2, math.nan)
    return CorrelationEstimate(acc.edges[:-1].copy(), acc.edges[1:].copy(), k2, stderr, R, time)


def estimate_pair_correlation(snapshots: Iterable[np.ndarray], torus: Torus, edges,
                              time: float = math.nan) -> CorrelationEstimate:
    """Binned k2 estimate averaged over replica snapshots."""
    acc = PairAccumulator(np.asarray(edges, dtype=float), torus)
    counts = []
    for snap in snapshots:
        acc.add(snap)
        counts.append(len(snap))
    est = acc.estimate(time)
    k1, k1_se = estimate_density(counts, torus.volume)
    return CorrelationEstimate(est.r_lo, est.r_hi, est.k2, est.stderr, est.n_replicas, time, k1, k1_se)


# -- factorial moments ---------------------------------------------------------
MIN_MOMENT_SAMPLES = 1000


def falling_factorial(n: int, k: int) -> int:
    out = 1
    for j in range(k):
        out *= n - j
    return out


@dataclass
class MomentAccumulator:
    """Mergeable sums of falling factorials N(N-1)...(N-n+1) over samples."""

    n_max: int
    n_samples: int = 0
    sums: Optional[list] = None
    sums_sq: Optional[list] = None
    # cross moments with N, needed for the clustering-index delta method
    sum_cross: int = 0

    def __post_init__(self):
        if self.sums is None:
            self.sums = [0] * self.n_max
            self.sums_sq = [0] * self.n_max

    def add(self, counts: Iterable[int]) -> None:
        for c in counts:
            c = int(c)
            ff = 1
            for k in range(self.n_max):
                ff *= c - k
                self.sums[k] += ff
                self.sums_sq[k] += ff * ff
            self.sum_cross += c * c * (c - 1)
            self.n_samples += 1

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.n_max != self.n_max:
            raise ValueError("n_max differs")
        return MomentAccumulator(
            self.n_max, self.n_samples + other.n_samples,
            [a + b for a, b in zip(self.sums, other.sums)],
            [a + b for a, b in zip(self.sums_sq, other.sums_sq)],
            self.sum_cross + other.sum_cross,
        )

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample means M_1..M_nmax and their standard errors."""
        S = self.n_samples
        if S == 0:
            raise ValueError("no samples")
        mean = np.array([s / S for s in self.sums])
        if S > 1:
            var = np.array([(q * S - s * s) / (S * (S - 1)) for q, s in zip(self.sums_sq, self.sums)])
            se = np.sqrt(np.maximum(var, 0.0) / S)
        else:
            se = np.full(self.n_max, math.nan)
        return mean, se


@dataclass(frozen=True)
class MomentReport:
    """Window factorial moments with a geometric (Poisson-type) envelope fit.

    The envelope ``C * (kappa V)**n`` is fitted exactly through orders 1 and
    2 and then tested against the higher orders: a state whose factorial
    moments grow geometrically passes; n!-type growth (clustering) fails.
    """

    volume: float
    moments: np.ndarray
    stderr: np.ndarray
    C: float
    kappa: float
    sub_poissonian: bool
    n_samples: int
    slack: float = 3.0

    @property
    def envelope(self) -> np.ndarray:
        n = np.arange(1, len(self.moments) + 1)
        return self.C * (self.kappa * self.volume) ** n

    @property
    def excess(self) -> np.ndarray:
        """(M_n - envelope_n) in units of the standard error of M_n."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.moments - self.envelope) / self.stderr


def factorial_moments(counts, volume: float, n_max: int = 4, slack: float = 3.0,
                      min_samples: int = MIN_MOMENT_SAMPLES) -> MomentReport:
    """Factorial moments of window counts and the sub-Poissonian gate."""
    if isinstance(counts, MomentAccumulator):
        acc = counts
    else:
        acc = MomentAccumulator(n_max)
        acc.add(np.asarray(counts).ravel())
    return moment_report(acc, volume, slack, min_samples)


def moment_report(acc: MomentAccumulator, volume: float, slack: float = 3.0,
                  min_samples: int = MIN_MOMENT_SAMPLES) -> MomentReport:
    if not 2 <= acc.n_max <= 6:
        raise ValueError("n_max must lie in 2..6")
    if acc.n_samples < min_samples:
        raise ValueError(f"need at least {min_samples} window samples, got {acc.n_samples}")
    M, se = acc.moments()
    if M[0] <= 0 or M[1] <= 0:
        # empty or at most single occupancy: the envelope degenerates to zero
        C, kappa = float(M[0]), float(M[0]) / volume if M[0] > 0 else 0.0
        ok = bool(np.all(M[1:] <= slack * np.nan_to_num(se[1:])))
        return MomentReport(volume, M, se, C, kappa, ok, acc.n_samples, slack)
    kappa_v = M[1] / M[0]
    C = M[0] / kappa_v
    env = C * kappa_v ** np.arange(1, acc.n_max + 1)
    ok = bool(np.all(M[2:] <= env[2:] + slack * se[2:]))
    return MomentReport(volume, M, se, float(C), float(kappa_v / volume), ok, acc.n_samples, slack)


def clustering_index(counts) -> tuple[float, float]:
    """M_2 / M_1**2 of window counts with a delta-method standard error."""
    if isinstance(counts, MomentAccumulator):
        acc = counts
    else:
        acc = MomentAccumulator(2)
        acc.add(np.asarray(counts).ravel())
    S = acc.n_samples
    m1 = acc.sums[0] / S
    m2 = acc.sums[1] / S
    if m1 <= 0:
        raise ValueError("mean window count is zero")
    index = m2 / m1**2
    if S < 2:
        return index, math.nan
    v1 = (acc.sums_sq[0] - S * m1 * m1) / (S - 1)
    v2 = (acc.sums_sq[1] - S * m2 * m2) / (S - 1)
    c12 = (acc.sum_cross - S * m1 * m2) / (S - 1)
    g1 = -2 * m2 / m1**3
    g2 = 1 / m1**2
    var = (g1 * g1 * v1 + g2 * g2 * v2 + 2 * g1 * g2 * c12) / S
    return float(index), float(math.sqrt(max(var, 0.0)))


# -- decay rates -------------------------------------------------------------------
@dataclass(frozen=True)
class DecayFit:
    rate: float
    stderr: float
    intercept: float


def _log_slope(t: np.ndarray, y: np.ndarray):
    if np.any(y <= 0):
        raise ValueError("densities must be positive on the fit window")
    return stats.linregress(t, np.log(y))


def decay_rate_fit(times, densities, window: Optional[tuple[float, float]] = None) -> DecayFit:
    """Exponential decay rate ``eps`` from ``density ~ A exp(-eps t)``.

    ``densities`` is a single series, or an array (replicas, times) in which
    case the fit uses the replica-mean series and the standard error is a
    delete-one jackknife over replicas.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(densities, dtype=float)
    mask = np.ones(len(t), dtype=bool)
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
    if mask.sum() < 2:
        raise ValueError("fit window holds fewer than two times")
    t = t[mask]
    if y.ndim == 1:
        y = y[mask]
        if np.all(y == y[0]) and y[0] > 0:
            return DecayFit(0.0, 0.0, float(np.log(y[0])))
        res = _log_slope(t, y)
        return DecayFit(float(-res.slope), float(res.stderr), float(res.intercept))
    y = y[:, mask]
    R = y.shape[0]
    res = _log_slope(t, y.mean(axis=0))
    if R < 2:
        return DecayFit(float(-res.slope), math.nan, float(res.intercept))
    total = y.sum(axis=0)
    jack = np.array([-_log_slope(t, (total - y[i]) / (R - 1)).slope for i in range(R)])
    se = math.sqrt((R - 1) / R * np.sum((jack - jack.mean()) ** 2))
    return DecayFit(float(-res.slope), float(se), float(res.intercept))


def drift_test(times, values, level: float = 0.95) -> tuple[float, float, bool]:
    """Least-squares slope, its p-value, and whether the slope is significant."""
    res = stats.linregress(np.asarray(times, float), np.asarray(values, float))
    return float(res.slope), float(res.pvalue), bool(res.pvalue < 1 - level)
