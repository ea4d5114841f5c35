"""Explicit bounds for the correlation-function evolution.

* :func:`operator_norm_bound` evaluates the bound on the norm of the
  hierarchy generator between weighted spaces ``K_theta -> K_theta'``.
* :func:`find_domination_constants` searches for constants ``b >= 0``,
  ``theta > 0`` with ``b |eta| + Q-(eta) >= theta Q+(eta)`` where
  ``Q(eta) = sum_{x in eta} sum_{y in eta, y != x} a(x - y)``. A certificate
  means *no violation was found under the sampling budget*, not a proof.
* :func:`envelope` evaluates the upper envelopes for ``k_t`` in the three
  parameter regimes.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import KernelPair, KernelSpec, classify_dispersal


# -- operator norm bound ---------------------------------------------------------
@dataclass(frozen=True)
class NormBoundInput:
    theta: float
    theta_prime: float
    mass_plus: float
    mass_minus: float
    sup_plus: float
    sup_minus: float
    mortality: float

    def __post_init__(self):
        if not self.theta_prime > self.theta:
            raise ValueError(f"need theta' > theta, got theta={self.theta}, theta'={self.theta_prime}")
        if self.mortality < 0 or min(self.mass_plus, self.mass_minus, self.sup_plus, self.sup_minus) < 0:
            raise ValueError("masses, sup norms and mortality must be nonnegative")

    @classmethod
    def from_kernels(cls, pair: KernelPair, mortality: float, theta: float, theta_prime: float):
        return cls(theta, theta_prime, pair.dispersal.mass, pair.competition.mass,
                   pair.dispersal.sup, pair.competition.sup, mortality)


def operator_norm_bound(inp: NormBoundInput) -> float:
    gap = inp.theta_prime - inp.theta
    first = 4.0 * (inp.sup_plus + inp.sup_minus) / (math.e**2 * gap**2)
    second = (inp.mass_plus + inp.mortality + inp.mass_minus * math.exp(inp.theta_prime)) / (math.e * gap)
    return first + second


MIN_BUDGET = 10_000


# -- domination inequality -----------------------------------------------------------
def pair_sums(kernel: KernelSpec, configs: np.ndarray) -> np.ndarray:
    """Q(eta) for a batch of configurations of equal size, shape (B, n, d)."""
    configs = np.asarray(configs, dtype=float)
    if configs.shape[1] < 2:
        return np.zeros(configs.shape[0])
    diff = configs[:, :, None, :] - configs[:, None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    vals = kernel.radial_truncated(r)
    n = configs.shape[1]
    vals[:, np.arange(n), np.arange(n)] = 0.0
    return vals.sum(axis=(1, 2))


def margins(b: float, theta: float, pair: KernelPair, configs: np.ndarray) -> np.ndarray:
    """theta Q+(eta) - b |eta| - Q-(eta) per configuration; <= 0 means no violation."""
    n = np.asarray(configs).shape[1]
    return theta * pair_sums(pair.dispersal, configs) - b * n - pair_sums(pair.competition, configs)


@dataclass
class DominationCertificate:
    b: float
    theta: float
    budget: int
    margin: float
    sizes: tuple[int, int]
    analytic: bool = False
    seed: Optional[int] = None
    adversarial_margin: Optional[float] = None

    @property
    def valid(self) -> bool:
        return self.margin <= 0 and (self.adversarial_margin is None or self.adversarial_margin <= 0)

    def to_json(self, pair: KernelPair) -> str:
        doc = asdict(self)
        doc["sizes"] = list(self.sizes)
        doc["kernels"] = {"dispersal": pair.dispersal.to_dict(), "competition": pair.competition.to_dict()}
        doc["valid"] = self.valid
        return json.dumps(doc, indent=2, sort_keys=True)


def sample_configurations(pair: KernelPair, n_configs: int, size: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Configurations of ``size`` points drawn around the origin at mixed scales.

    Each configuration picks a spread from {tiny, each kernel scale, a few
    cutoffs} so samples cover both clumped and spread-out arrangements.
    """
    d = pair.dimension
    ls = [k.scale for k in (pair.dispersal, pair.competition) if not k.is_zero] or [1.0]
    cut = max(pair.max_cutoff, max(ls))
    spreads = np.array([0.05 * min(ls), *ls, 0.5 * cut, cut, 2 * cut])
    pick = rng.integers(len(spreads), size=n_configs)
    scale = spreads[pick] * rng.uniform(0.5, 1.5, size=n_configs)
    pts = rng.normal(size=(n_configs, size, d)) * scale[:, None, None]
    # a quarter of the batch: uniform in a box of the chosen spread
    uni = rng.random(n_configs) < 0.25
    pts[uni] = (rng.random((int(uni.sum()), size, d)) - 0.5) * 2 * scale[uni, None, None]
    return pts


def _sample_batches(pair: KernelPair, budget: int, sizes: tuple[int, int], rng: np.random.Generator):
    lo, hi = sizes
    per = np.full(hi - lo + 1, budget // (hi - lo + 1))
    per[: budget - per.sum()] += 1
    return [sample_configurations(pair, int(k), n, rng) for n, k in zip(range(lo, hi + 1), per)]


def verify_domination(cert: DominationCertificate, pair: KernelPair, configs) -> float:
    """Largest margin over the supplied configurations (a list of batches or
    arrays of shape (n, d) or (B, n, d))."""
    worst = -math.inf
    for batch in configs:
        batch = np.asarray(batch, dtype=float)
        if batch.ndim == 2:
            batch = batch[None]
        worst = max(worst, float(np.max(margins(cert.b, cert.theta, pair, batch))))
    return worst


def adversarial_refine(cert: DominationCertificate, pair: KernelPair, batches, rng: np.random.Generator,
                       n_seeds: int = 20, iterations: int = 200) -> float:
    """Hill-climb the worst sampled configurations towards larger margins.

    Returns the largest margin reached.
    """
    ls = [k.scale for k in (pair.dispersal, pair.competition) if not k.is_zero] or [1.0]
    worst = -math.inf
    for batch in batches:
        mg = margins(cert.b, cert.theta, pair, batch)
        order = np.argsort(mg)[::-1][:n_seeds]
        current = batch[order].copy()
        cur = mg[order]
        for it in range(iterations):
            step = min(ls) * (0.5 * (1 - it / iterations) + 0.01)
            trial = current + rng.normal(size=current.shape) * step
            new = margins(cert.b, cert.theta, pair, trial)
            better = new > cur
            current[better] = trial[better]
            cur = np.where(better, new, cur)
        worst = max(worst, float(cur.max()))
    return worst


def find_domination_constants(pair: KernelPair, budget: int = 100_000, rng: Optional[np.random.Generator] = None,
                              sizes: tuple[int, int] = (2, 6), seed: Optional[int] = None,
                              n_theta: int = 41, n_b: int = 41,
                              b_max: Optional[float] = None) -> DominationCertificate:
    """Constants (b, theta) validated on ``budget`` sampled configurations.

    For short dispersal the pointwise ratio gives b = 0 directly. Otherwise
    a log grid is searched: the largest theta with some validated
    ``b <= b_max`` (default: the dispersal mass), taking the smallest such b.
    Both of two independent samples must pass, and theta is then backed off
    one grid step as a safety margin. Without the cap on b the search is
    vacuous: for bounded configuration sizes a large enough b always works.
    """
    if budget < MIN_BUDGET:
        raise ValueError(f"budget must be at least {MIN_BUDGET} configurations")
    if rng is None:
        rng = np.random.default_rng(seed)
    plus = pair.dispersal
    cls = classify_dispersal(pair)
    if cls.short:
        theta = cls.theta if math.isfinite(cls.theta) else 1.0
        # the grid ratio carries round-off; back off so pointwise domination is strict
        theta *= 1.0 - 1e-12
        cert = DominationCertificate(0.0, theta, budget, -math.inf, sizes, True, seed)
        cert.margin = verify_domination(cert, pair, _sample_batches(pair, budget, sizes, rng))
        return cert

    sample_a = _sample_batches(pair, budget, sizes, rng)
    sample_b = _sample_batches(pair, budget, sizes, rng)
    q = []
    for batches in (sample_a, sample_b):
        rows = []
        for batch in batches:
            rows.append((batch.shape[1], pair_sums(plus, batch), pair_sums(pair.competition, batch)))
        q.append(rows)

    # theta up to the ratio of peaks (beyond it two coincident points already violate with b small)
    theta_hi = 10.0 * max(pair.competition.sup, 1e-12) / plus.sup
    thetas = np.geomspace(theta_hi * 1e-4, theta_hi, n_theta)[::-1]
    if b_max is None:
        b_max = plus.mass
    bs = np.concatenate([[0.0], np.geomspace(b_max * 1e-6, b_max, n_b - 1)])

    def required_b(theta: float, rows) -> float:
        # smallest b with theta Q+ - Q- <= b n over every sampled configuration
        need = 0.0
        for n, qp, qm in rows:
            need = max(need, float(np.max((theta * qp - qm) / n)))
        return need

    for i, theta in enumerate(thetas):
        need = max(required_b(theta, q[0]), required_b(theta, q[1]))
        feasible = bs[bs >= need]
        if len(feasible) == 0:
            continue
        # one grid step of safety in theta, keeping the b chosen for the larger theta
        theta_safe = float(thetas[min(i + 1, len(thetas) - 1)])
        b = float(feasible[0])
        cert = DominationCertificate(b, theta_safe, budget, -math.inf, sizes, False, seed)
        cert.margin = max(verify_domination(cert, pair, sample_a), verify_domination(cert, pair, sample_b))
        return cert
    return DominationCertificate(math.nan, math.nan, budget, math.inf, sizes, False, seed)


# -- envelopes ----------------------------------------------------------------------
@dataclass(frozen=True)
class EnvelopeCase:
    """Parameters of one regime of the k_t upper envelope.

    case "i":   mass_plus > 0, m <= mass_plus; needs C and delta
                (delta < m for long dispersal, delta <= m for short).
    case "ii":  mass_plus > 0, m > mass_plus; needs C and eps in (0, m - mass_plus).
    case "iii": mass_plus == 0; needs k0 and the configuration's E-(eta).
    """

    case: str
    t: float
    n: int
    mass_plus: float = 0.0
    mortality: float = 0.0
    C: float = 1.0
    delta: float = 0.0
    eps: float = 0.0
    short_dispersal: bool = True
    k0: float = 1.0
    death_rate: float = 0.0

    def __post_init__(self):
        if self.case not in ("i", "ii", "iii"):
            raise ValueError(f"unknown envelope case {self.case!r}")
        if self.t < 0 or self.n < 0:
            raise ValueError("t and n must be nonnegative")
        if self.case == "i":
            if not (self.mass_plus > 0 and 0 <= self.mortality <= self.mass_plus):
                raise ValueError("case (i) needs mass_plus > 0 and m in [0, mass_plus]")
            if self.short_dispersal and self.delta > self.mortality:
                raise ValueError("case (i), short dispersal: need delta <= m")
            if not self.short_dispersal and self.delta >= self.mortality:
                raise ValueError("case (i), long dispersal: need delta < m")
            if self.C <= 0:
                raise ValueError("C must be positive")
        elif self.case == "ii":
            if not (self.mass_plus > 0 and self.mortality > self.mass_plus):
                raise ValueError("case (ii) needs mass_plus > 0 and m > mass_plus")
            if not 0 < self.eps < self.mortality - self.mass_plus:
                raise ValueError("case (ii) needs eps in (0, m - mass_plus)")
            if self.C <= 0:
                raise ValueError("C must be positive")
        elif self.mass_plus != 0:
            raise ValueError("case (iii) needs mass_plus == 0")


def death_energy(pair: KernelPair, mortality: float, points: np.ndarray) -> float:
    """E-(eta) = m |eta| + sum_x sum_{y != x} a-(x - y)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return mortality * len(pts) + float(pair_sums(pair.competition, pts[None])[0])


def envelope(case: EnvelopeCase) -> float:
    """Upper bound on k_t for an n-point configuration."""
    if case.case == "i":
        return case.C**case.n * math.exp((case.mass_plus - case.delta) * case.n * case.t)
    if case.case == "ii":
        if case.n == 0:
            return 1.0
        return case.C**case.n * math.exp(-case.eps * case.t)
    return case.k0 * math.exp(-case.death_rate * case.t)


def envelope_series(case: EnvelopeCase, times: Sequence[float]) -> np.ndarray:
    from dataclasses import replace

    return np.array([envelope(replace(case, t=float(t))) for t in times])
