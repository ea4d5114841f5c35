"""Exact event-driven simulation of the birth-death process with competition.

A point at ``y`` produces offspring at ``y + z`` with rate density
``a_plus(z)``; a point at ``x`` dies with rate
``w(x) = m + sum_{y != x} a_minus(x - y)``. Total birth rate is
``mass(a_plus) * n``; deaths are selected by a prefix-sum walk over the
cached ``w``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import KernelPair, sample_displacement
from .pointset import PointConfig, Torus

log = logging.getLogger(__name__)

BIRTH = 0
DEATH = 1

DEFAULT_RECOMPUTE_PERIOD = 100_000
DEFAULT_POPULATION_CAP = 1_000_000


class AbsorbingStateError(RuntimeError):
    """No event can occur: total rate is zero."""


class StaleEventError(RuntimeError):
    pass


class PopulationCapError(RuntimeError):
    """Population exceeded the configured hard cap.

    ``trajectory`` holds the observations recorded before the cap was hit.
    """

    def __init__(self, message: str, trajectory: Optional["Trajectory"] = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class Model:
    kernels: KernelPair
    mortality: float

    def __post_init__(self):
        if self.mortality < 0:
            raise ValueError("mortality must be >= 0")

    @property
    def dimension(self) -> int:
        return self.kernels.dimension

    @property
    def birth_mass(self) -> float:
        # offspring are drawn from the truncated kernel, so B uses its mass
        return self.kernels.dispersal.truncated_mass

    def check_torus(self, torus: Torus) -> None:
        if torus.dimension != self.dimension:
            raise ValueError("torus and kernel dimensions differ")
        torus.check_interaction_range(self.kernels.max_cutoff)

    def new_config(self, torus: Torus, positions=()) -> PointConfig:
        self.check_torus(torus)
        return PointConfig.from_positions(torus, np.asarray(positions, dtype=float), self.kernels.max_cutoff)


@dataclass(frozen=True)
class Event:
    kind: int
    wait: float
    handle: int = -1
    position: Optional[np.ndarray] = None

    @property
    def is_birth(self) -> bool:
        return self.kind == BIRTH


class SimState:
    """Configuration plus cached death rates and running totals."""

    def __init__(self, config: PointConfig, model: Model, time: float = 0.0,
                 recompute_period: int = DEFAULT_RECOMPUTE_PERIOD):
        model.check_torus(config.torus)
        if config.cell_size < model.kernels.max_cutoff and config.cells_per_axis > 1:
            raise ValueError("configuration cell list is finer than the kernel cutoff")
        self.config = config
        self.model = model
        self.time = float(time)
        self.events = 0
        self.recompute_period = int(recompute_period)
        self.max_audit_drift = 0.0
        self.audits = 0
        a_minus = model.kernels.competition
        self._competition = None if a_minus.is_zero else a_minus
        self._rates = np.empty(max(len(config._pos), 1))
        self._d_sum = 0.0
        self._d_comp = 0.0
        self._full_recompute()

    # -- rate cache -----------------------------------------------------------
    @property
    def rates(self) -> np.ndarray:
        return self._rates[: len(self.config)]

    def death_rate(self, handle: int) -> float:
        return float(self._rates[self.config.slot_of(handle)])

    def _ensure_capacity(self) -> None:
        if len(self._rates) < len(self.config._pos):
            grown = np.empty(len(self.config._pos))
            grown[: len(self._rates)] = self._rates
            self._rates = grown

    def exact_rates(self) -> np.ndarray:
        """Death rates recomputed from scratch via the cell list."""
        cfg = self.config
        n = len(cfg)
        w = np.full(n, self.model.mortality)
        if self._competition is None:
            return w
        radius = self._competition.cutoff
        pos = cfg.positions
        for s in range(n):
            slots, dist = cfg.neighbor_slots(pos[s], radius, s)
            if len(slots):
                w[s] += float(np.sum(self._competition.radial_truncated(dist)))
        return w

    def _full_recompute(self) -> None:
        self._ensure_capacity()
        w = self.exact_rates()
        self._rates[: len(w)] = w
        self._d_sum = math.fsum(w.tolist())
        self._d_comp = 0.0

    def _add_to_total(self, value: float) -> None:
        # Kahan-compensated running sum of the death rates
        y = value - self._d_comp
        t = self._d_sum + y
        self._d_comp = (t - self._d_sum) - y
        self._d_sum = t

    def audit(self) -> float:
        """Compare caches with a full recomputation, then resynchronise.

        Returns the drift: the larger of the relative error of D and the
        max-norm relative error of the per-point rates.
        """
        w = self.exact_rates()
        cached = self.rates
        drift = 0.0
        if len(w):
            scale = float(np.max(np.abs(w)))
            if scale > 0:
                drift = float(np.max(np.abs(cached - w))) / scale
            d_exact = math.fsum(w.tolist())
            if d_exact > 0:
                drift = max(drift, abs(self._d_sum - d_exact) / d_exact)
        self.max_audit_drift = max(self.max_audit_drift, drift)
        self.audits += 1
        self._rates[: len(w)] = w
        self._d_sum = math.fsum(w.tolist())
        self._d_comp = 0.0
        return drift

    # -- totals -----------------------------------------------------------------
    def total_rates(self) -> tuple[float, float]:
        n = len(self.config)
        if n == 0:
            return 0.0, 0.0
        return self.model.birth_mass * n, max(self._d_sum, 0.0)

    # -- events -------------------------------------------------------------
    def next_event(self, rng: np.random.Generator) -> Event:
        B, D = self.total_rates()
        total = B + D
        if total <= 0:
            raise AbsorbingStateError("total event rate is zero")
        wait = rng.exponential(1.0 / total)
        n = len(self.config)
        if rng.random() * total < B:
            parent = int(rng.integers(n))
            handle = int(self.config.handles[parent])
            disp = sample_displacement(self.model.kernels.dispersal, rng)
            pos = self.config.torus.wrap(self.config.positions[parent] + disp)
            return Event(BIRTH, wait, handle, pos)
        w = self.rates
        if self._competition is None:
            slot = int(rng.integers(n))
        else:
            cum = np.cumsum(w)
            slot = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            slot = min(slot, n - 1)
        return Event(DEATH, wait, int(self.config.handles[slot]))

    def apply_event(self, event: Event) -> None:
        cfg = self.config
        m = self.model.mortality
        if event.kind == BIRTH:
            if event.handle not in cfg:
                raise StaleEventError(f"parent {event.handle} is not in the configuration")
            handle = cfg.insert(event.position)
            self._ensure_capacity()
            slot = cfg.slot_of(handle)
            w_new = m
            if self._competition is not None:
                slots, dist = cfg.neighbor_slots(cfg.positions[slot], self._competition.cutoff, slot)
                if len(slots):
                    contrib = self._competition.radial_truncated(dist)
                    self._rates[slots] += contrib
                    s = float(contrib.sum())
                    w_new += s
                    self._add_to_total(s)
            self._rates[slot] = w_new
            self._add_to_total(w_new)
        else:
            if event.handle not in cfg:
                raise StaleEventError(f"point {event.handle} is not in the configuration")
            slot = cfg.slot_of(event.handle)
            self._add_to_total(-float(self._rates[slot]))
            if self._competition is not None:
                slots, dist = cfg.neighbor_slots(cfg.positions[slot], self._competition.cutoff, slot)
                if len(slots):
                    contrib = self._competition.radial_truncated(dist)
                    self._rates[slots] -= contrib
                    self._add_to_total(-float(contrib.sum()))
            hole, moved_from = cfg.remove(event.handle)
            self._rates[hole] = self._rates[moved_from]
            if len(cfg) == 0:
                self._d_sum = 0.0
                self._d_comp = 0.0
        self.time += event.wait
        self.events += 1
        if self.recompute_period > 0 and self.events % self.recompute_period == 0:
            self.audit()

    def step(self, rng: np.random.Generator) -> Event:
        event = self.next_event(rng)
        self.apply_event(event)
        return event


@dataclass
class Trajectory:
    """Observations of one replica on a fixed time grid."""

    times: np.ndarray
    counts: np.ndarray
    volume: float
    snapshots: Optional[list] = None
    events: int = 0
    absorbed: bool = False
    cap_hit: bool = False
    max_audit_drift: float = 0.0
    seed: Optional[int] = None
    replica: int = 0

    @property
    def densities(self) -> np.ndarray:
        return self.counts / self.volume


def simulate(initial: PointConfig, model: Model, t_end: float, obs_times: Sequence[float],
             rng: np.random.Generator, *, keep_snapshots: bool = False,
             population_cap: int = DEFAULT_POPULATION_CAP,
             recompute_period: int = DEFAULT_RECOMPUTE_PERIOD) -> Trajectory:
    """Run one replica from ``initial`` (which is copied) up to ``t_end``.

    The state at an observation time is the state holding at that instant,
    i.e. after all events strictly before it. Raises PopulationCapError with
    the partial trajectory attached when the population exceeds the cap.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    obs = np.asarray(obs_times, dtype=float)
    if np.any(np.diff(obs) < 0) or (len(obs) and (obs[0] < 0 or obs[-1] > t_end)):
        raise ValueError("observation times must be sorted and lie in [0, t_end]")
    state = SimState(initial.copy(), model, recompute_period=recompute_period)
    counts = np.zeros(len(obs), dtype=np.int64)
    snaps: Optional[list] = [] if keep_snapshots else None
    k = 0
    absorbed = False

    def record_until(t_next: float) -> int:
        nonlocal k
        while k < len(obs) and obs[k] < t_next:
            counts[k] = len(state.config)
            if snaps is not None:
                snaps.append(state.config.positions.copy())
            k += 1
        return k

    def partial() -> Trajectory:
        return Trajectory(obs[:k].copy(), counts[:k].copy(), initial.torus.volume, snaps,
                          state.events, False, True, state.max_audit_drift)

    while True:
        try:
            event = state.next_event(rng)
        except AbsorbingStateError:
            absorbed = True
            record_until(math.inf)
            break
        t_next = state.time + event.wait
        record_until(t_next)
        if t_next > t_end:
            break
        state.apply_event(event)
        if len(state.config) > population_cap:
            raise PopulationCapError(
                f"population {len(state.config)} exceeded cap {population_cap} at t={state.time:.6g}",
                partial(),
            )
    record_until(math.inf)
    state.audit()
    return Trajectory(obs, counts, initial.torus.volume, snaps, state.events, absorbed, False,
                      state.max_audit_drift)


def replica_rng(master_seed: int, replica: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(master_seed, stream, replica)``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(stream, replica))
    return np.random.default_rng(ss)


def run_replica(model: Model, torus: Torus, density: float, t_end: float, obs_times,
                master_seed: int, replica: int, **kwargs) -> Trajectory:
    """Poisson initial condition plus one simulated trajectory."""
    from .pointset import sample_poisson

    rng = replica_rng(master_seed, replica)
    model.check_torus(torus)
    initial = sample_poisson(density, torus, rng, model.kernels.max_cutoff)
    traj = simulate(initial, model, t_end, obs_times, rng, **kwargs)
    traj.seed = master_seed
    traj.replica = replica
    return traj


def run_replicas(model: Model, torus: Torus, density: float, t_end: float, obs_times,
                 master_seed: int, n_replicas: int, n_jobs: int = 1, **kwargs) -> list[Trajectory]:
    """Independent replicas; results do not depend on ``n_jobs``."""
    if n_jobs == 1:
        return [run_replica(model, torus, density, t_end, obs_times, master_seed, r, **kwargs)
                for r in range(n_replicas)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(
        delayed(run_replica)(model, torus, density, t_end, obs_times, master_seed, r, **kwargs)
        for r in range(n_replicas)
    )
