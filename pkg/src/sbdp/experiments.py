"""Benchmark experiments with pass/fail verdicts.

Each criterion is a function ``(seed, replicas=None, t_end=None, n_jobs=1)``
returning a :class:`CriterionResult`. The ``verify`` subcommand and the
acceptance tests both run these, so the tolerances live here, once.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import estimators as est
from .dynamics import Model, SimState, replica_rng, run_replicas
from .hierarchy import Closure, Grid, HierarchyModel, HierarchyState, integrate
from .kernels import KernelPair, KernelSpec, classify_dispersal
from .pointset import PointConfig, Torus, brute_force_neighbors, sample_poisson, window_counts
from .theory import (DominationCertificate, NormBoundInput, _sample_batches, adversarial_refine,
                     find_domination_constants, operator_norm_bound, verify_domination)

BOX = 100.0
GAUSS = KernelSpec.gaussian(1.0, 1.0)
ZERO = KernelSpec.zero(1)


@dataclass
class CriterionResult:
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.summary}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- 1. stationary law -----------------------------------------------------------
@_timed
def stationary_law(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
                   n_jobs: int = 1, model: Optional[Model] = None, length: float = BOX,
                   density: Optional[float] = None, burn_in: float = 10.0,
                   bin_width: float = 0.25, r_max: float = 10.0) -> CriterionResult:
    """m = 0 and a- = theta a+: Poisson(1/theta) is stationary.

    Time-averaged density on [burn_in, t_end] within 5% of 1/theta, and the
    pair correlation flat at theta^-2 within 3 standard errors in every bin.
    """
    replicas = replicas or 20
    t_end = t_end or 50.0
    if model is None:
        model = Model(KernelPair(GAUSS, GAUSS.scaled(0.5)), 0.0)
    cls = classify_dispersal(model.kernels)
    plus, minus = model.kernels.dispersal, model.kernels.competition
    if (model.mortality != 0 or not cls.short or plus.family is not minus.family
            or plus.scale != minus.scale):
        raise ValueError("stationary-law check needs m = 0 and a- proportional to a+")
    theta = minus.amplitude / plus.amplitude
    target = 1.0 / theta
    density = target if density is None else density
    torus = Torus(1, length)
    obs = np.arange(0.0, t_end + 1e-9, 1.0)
    trajs = run_replicas(model, torus, density, t_end, obs, seed, replicas, n_jobs=n_jobs,
                         keep_snapshots=True)
    late = obs >= burn_in
    per_replica = np.array([t.densities[late].mean() for t in trajs])
    mean_density = float(per_replica.mean())
    rel = abs(mean_density - target) / target
    edges = np.arange(0.0, r_max + 1e-9, bin_width)
    acc = est.PairAccumulator(edges, torus, snapshots_per_sample=int(late.sum()))
    for t in trajs:
        acc.add(*[s for s, keep in zip(t.snapshots, late) if keep])
    pc = acc.estimate()
    z = (pc.k2 - target**2) / pc.stderr
    flat_ok = bool(np.all(np.abs(z) <= 3.0))
    density_ok = rel <= 0.05
    # density series must also show no significant drift
    mean_series = np.mean([t.densities for t in trajs], axis=0)
    slope, pval, drifting = est.drift_test(obs[late], mean_series[late])
    rows = [(lo, hi, k, s, pc.n_replicas) for lo, hi, k, s in pc.rows()]
    return CriterionResult(
        "stationary_law", density_ok and flat_ok,
        f"density {mean_density:.4f} vs {target:.4f} (rel {rel:.3%}, tol 5%); "
        f"k2 flat at {target**2:.3g}: max |z| = {np.max(np.abs(z)):.2f} over {len(z)} bins (tol 3)",
        {"mean_density": mean_density, "target": target, "rel_error": rel, "max_abs_z": float(np.max(np.abs(z))),
         "drift_slope": slope, "drift_pvalue": pval, "drift_significant": drifting,
         "events": int(sum(t.events for t in trajs)),
         "max_audit_drift": max(t.max_audit_drift for t in trajs)},
        {"pair_correlation": (["r_lo", "r_hi", "k2_hat", "stderr", "n_replicas"], rows),
         "density": (["t", "density_mean"], list(zip(obs.tolist(), mean_series.tolist())))},
    )


# -- 2. extinction -----------------------------------------------------------------
@_timed
def extinction(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
               n_jobs: int = 1, fit_window: tuple = (0.0, 6.0)) -> CriterionResult:
    """m = 1.5 > <a+> = 1, a- = 0.2 a+: density decays at rate >= 0.45.

    Also checks the density against the envelope k0 exp(-eps t) with
    eps = 0.45 (inside (0, m - <a+>)) at every observation time.
    """
    replicas = replicas or 50
    t_end = t_end or 8.0
    model = Model(KernelPair(GAUSS, GAUSS.scaled(0.2)), 1.5)
    torus = Torus(1, BOX)
    obs = np.arange(0.0, t_end + 1e-9, 0.5)
    trajs = run_replicas(model, torus, 1.0, t_end, obs, seed, replicas, n_jobs=n_jobs)
    dens = np.array([t.densities for t in trajs])
    fit = est.decay_rate_fit(obs, dens, fit_window)
    mean = dens.mean(axis=0)
    se = dens.std(axis=0, ddof=1) / math.sqrt(replicas)
    eps = 0.45
    env = 1.0 * np.exp(-eps * obs)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_se = np.where(mean > 0, se / mean, 0.0)
    env_ok = bool(np.all(mean <= env * (1 + 3 * rel_se)))
    ok = fit.rate >= 0.45
    return CriterionResult(
        "extinction", ok and env_ok,
        f"decay rate {fit.rate:.4f} +/- {fit.stderr:.4f} (need >= 0.45); "
        f"below k0*exp(-0.45 t) at all times: {env_ok}",
        {"rate": fit.rate, "stderr": fit.stderr, "envelope_ok": env_ok},
        {"density": (["t", "density_mean", "stderr", "envelope"],
                     list(zip(obs.tolist(), mean.tolist(), se.tolist(), env.tolist())))},
    )


# -- 3. degenerate exact laws --------------------------------------------------------
@_timed
def pure_death(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
               n_jobs: int = 1) -> CriterionResult:
    """No births, no competition, m = 0.2: E density(t) = 2 exp(-0.2 t)."""
    replicas = replicas or 1000
    t_end = t_end or 5.0
    model = Model(KernelPair(ZERO, ZERO), 0.2)
    torus = Torus(1, BOX)
    obs = [0.0, t_end]
    trajs = run_replicas(model, torus, 2.0, t_end, obs, seed, replicas, n_jobs=n_jobs)
    mean, se = est.estimate_density([t.counts[-1] for t in trajs], torus.volume)
    exact = 2.0 * math.exp(-0.2 * t_end)
    z = (mean - exact) / se
    return CriterionResult(
        "pure_death", abs(z) <= 3.0,
        f"density({t_end:g}) = {mean:.5f} +/- {se:.5f} vs exact {exact:.5f} (|z| = {abs(z):.2f}, tol 3)",
        {"mean": mean, "stderr": se, "exact": exact, "z": z},
    )


@_timed
def competition_envelope(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
                         n_jobs: int = 1) -> CriterionResult:
    """No births, Gaussian competition, m = 0.2: density <= 2 exp(-0.2 t)."""
    replicas = replicas or 100
    t_end = t_end or 5.0
    model = Model(KernelPair(ZERO, GAUSS), 0.2)
    torus = Torus(1, BOX)
    obs = np.arange(0.0, t_end + 1e-9, 0.5)
    trajs = run_replicas(model, torus, 2.0, t_end, obs, seed, replicas, n_jobs=n_jobs)
    dens = np.array([t.densities for t in trajs])
    mean = dens.mean(axis=0)
    se = dens.std(axis=0, ddof=1) / math.sqrt(replicas)
    env = 2.0 * np.exp(-0.2 * obs)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_se = np.where(mean > 0, se / mean, 0.0)
    ok = bool(np.all(mean <= env * (1 + 3 * rel_se)))
    return CriterionResult(
        "competition_envelope", ok,
        f"density below 2*exp(-0.2 t)(1 + 3 rel.se) at all {len(obs)} times: {ok} "
        f"(max ratio {float(np.max(mean / env)):.4f})",
        {"max_ratio": float(np.max(mean / env))},
        {"density": (["t", "density_mean", "stderr", "envelope"],
                     list(zip(obs.tolist(), mean.tolist(), se.tolist(), env.tolist())))},
    )


# -- 4. clustering vs self-regulation -----------------------------------------------------
def _window_stats(trajs, torus: Torus, k: int, window: float, n_max: int):
    acc = est.MomentAccumulator(n_max)
    for t in trajs:
        cfg = PointConfig.from_positions(torus, t.snapshots[k])
        acc.add(window_counts(cfg, window).tolist())
    return acc


@_timed
def clustering(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
               n_jobs: int = 1, window: float = 1.0, n_max: int = 4) -> CriterionResult:
    """Contact model (a- = 0) clusters; adding competition a- = a+ does not.

    Contact regime, m = 0.5, <a+> = 1: the clustering index M2/M1^2 exceeds
    its initial value by more than 3 standard errors at every later
    observation time, and the sub-Poissonian gate fails at t_end. With
    a- = a+ the gate passes at every observation time.
    """
    replicas = replicas or 20
    t_end = t_end or 10.0
    torus = Torus(1, BOX)
    obs = np.arange(0.0, t_end + 1e-9, 1.0)
    rows = []
    verdicts = {}
    for label, a_minus, stream in (("contact", ZERO, 0), ("competition", GAUSS, 1)):
        model = Model(KernelPair(GAUSS, a_minus), 0.5)
        trajs = run_replicas(model, torus, 1.0, t_end, obs, seed + stream, replicas,
                             n_jobs=n_jobs, keep_snapshots=True)
        idx, gates = [], []
        for k, t in enumerate(obs):
            acc = _window_stats(trajs, torus, k, window, n_max)
            rep = est.moment_report(acc, window ** 1)
            ci, ci_se = est.clustering_index(acc)
            idx.append((ci, ci_se))
            gates.append(rep.sub_poissonian)
            rows.append((label, float(t), ci, ci_se, rep.sub_poissonian, *rep.moments.tolist()))
        verdicts[label] = (idx, gates)
    idx, gates = verdicts["contact"]
    i0, s0 = idx[0]
    rising = all(ci - i0 > 3.0 * math.hypot(s0, se) for ci, se in idx[1:])
    contact_ok = rising and not gates[-1]
    comp_ok = all(verdicts["competition"][1])
    return CriterionResult(
        "clustering", contact_ok and comp_ok,
        f"contact: index {i0:.3f} -> {idx[-1][0]:.3f}, above start by >3 se at all later times: {rising}, "
        f"final gate sub-Poissonian: {gates[-1]}; competition: gate sub-Poissonian at all times: {comp_ok}",
        {"contact_index": [c for c, _ in idx], "contact_rising": rising,
         "contact_final_sub_poissonian": gates[-1], "competition_gates": verdicts["competition"][1]},
        {"moments": (["regime", "t", "clustering_index", "stderr", "sub_poissonian"]
                     + [f"M{n}" for n in range(1, n_max + 1)], rows)},
    )


# -- 5. hierarchy vs simulation --------------------------------------------------------
@_timed
def hierarchy_crossval(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
                       n_jobs: int = 1, closure: str = "kirkwood", density: float = 1.0,
                       n_grid: int = 1024, dt: float = 0.05) -> CriterionResult:
    """Closed hierarchy k1(t) vs Monte Carlo density, 10% relative on [0, t_end]."""
    replicas = replicas or 30
    t_end = t_end or 20.0
    model = Model(KernelPair(GAUSS, GAUSS.scaled(0.3)), 0.5)
    grid = Grid(n_grid, BOX)
    hm = HierarchyModel(model, grid)
    obs = np.arange(0.0, t_end + 1e-9, 1.0)
    stride = int(round(1.0 / dt))
    runs = {c: integrate(HierarchyState.poisson(density, grid), hm, c, t_end, dt, output_stride=stride)
            for c in (Closure(closure), *(c for c in Closure if c is not Closure(closure)))}
    trajs = run_replicas(model, Torus(1, BOX), density, t_end, obs, seed, replicas, n_jobs=n_jobs)
    mc = np.mean([t.densities for t in trajs], axis=0)
    mc_se = np.std([t.densities for t in trajs], axis=0, ddof=1) / math.sqrt(replicas)
    rel = {c.value: np.abs(r.k1 - mc) / mc for c, r in runs.items()}
    main = rel[Closure(closure).value]
    other = {k: float(v.max()) for k, v in rel.items() if k != Closure(closure).value}
    ok = bool(np.all(main <= 0.10))
    rows = [(float(t), float(m), float(s), *(float(runs[c].k1[i]) for c in runs)) for i, (t, m, s) in
            enumerate(zip(obs, mc, mc_se))]
    return CriterionResult(
        "hierarchy_crossval", ok,
        f"{closure} closure: max rel. deviation {main.max():.3%} (tol 10%, worst at t={obs[int(main.argmax())]:g}); "
        + ", ".join(f"{k} closure: {v:.3%}" for k, v in other.items()),
        {"max_rel": float(main.max()), "other_closures": other},
        {"k1": (["t", "mc_density", "mc_stderr", *(f"k1_{c.value}" for c in runs)], rows)},
    )


# -- 6. hierarchy stationarity -----------------------------------------------------------
@_timed
def hierarchy_stationarity(seed: int = 0, replicas: Optional[int] = None, t_end: Optional[float] = None,
                           n_jobs: int = 1, theta: float = 0.5, n_grid: int = 1024) -> CriterionResult:
    """Flat data k1 = 1/theta, k2 = theta^-2 is a fixed point (m = 0, a- = theta a+)."""
    t_end = t_end or 10.0
    model = Model(KernelPair(GAUSS, GAUSS.scaled(theta)), 0.0)
    grid = Grid(n_grid, BOX)
    hm = HierarchyModel(model, grid)
    state = HierarchyState(1 / theta, np.full(grid.n, theta**-2), grid)
    r1 = abs(hm.rhs_k1(state))
    r2 = float(np.max(np.abs(hm.rhs_k2(state, Closure.KIRKWOOD))))
    run = integrate(state, hm, Closure.KIRKWOOD, t_end, 0.05, output_stride=1000)
    dk1 = float(np.max(np.abs(run.k1 - 1 / theta)))
    dk2 = float(np.max(np.abs(run.states[-1].k2 - theta**-2)))
    ok = r1 <= 1e-8 and r2 <= 1e-8 and dk1 <= 1e-6 and dk2 <= 1e-6
    return CriterionResult(
        "hierarchy_stationarity", ok,
        f"|rhs_k1| = {r1:.2e}, max|rhs_k2| = {r2:.2e} (tol 1e-8); "
        f"k1 moved {dk1:.2e}, k2 moved {dk2:.2e} by t={t_end:g} (tol 1e-6)",
        {"rhs_k1": r1, "rhs_k2": r2, "dk1": dk1, "dk2": dk2},
    )


# -- 7. domination certificate --------------------------------------------------------------
@_timed
def domination(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
               n_jobs: int = 1, budget: int = 100_000) -> CriterionResult:
    """Gaussian pair sigma+ = 1, sigma- = 2: certificate with no violations."""
    pair = KernelPair(GAUSS, KernelSpec.gaussian(1.0, 2.0))
    rng = replica_rng(seed, 0, stream=7)
    cert = find_domination_constants(pair, budget, rng, seed=seed)
    fresh = _sample_batches(pair, budget, cert.sizes, rng)
    fresh_margin = verify_domination(cert, pair, fresh)
    cert.adversarial_margin = adversarial_refine(cert, pair, fresh, rng)
    ok = cert.margin <= 0 and fresh_margin <= 0 and cert.adversarial_margin <= 0
    return CriterionResult(
        "domination", ok,
        f"b = {cert.b:.4g}, theta = {cert.theta:.6g}; max margin {cert.margin:.3g} "
        f"(search), {fresh_margin:.3g} (fresh {budget}), {cert.adversarial_margin:.3g} (local search); need <= 0",
        {"b": cert.b, "theta": cert.theta, "margin": cert.margin, "fresh_margin": fresh_margin,
         "adversarial_margin": cert.adversarial_margin, "certificate": cert.to_json(pair)},
    )


# -- 8. norm bound ------------------------------------------------------------------------------
def _norm_bound_reference(mp, mm, sp, sm, m, th, thp):
    # written out separately from theory.operator_norm_bound
    e = math.exp(1.0)
    g = thp - th
    return 4 * (sp + sm) / (e * e * g * g) + (mp + m + mm * math.exp(thp)) / (e * g)


@_timed
def norm_bound(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
               n_jobs: int = 1, n_random: int = 100) -> CriterionResult:
    value = operator_norm_bound(NormBoundInput(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0))
    reference = 8 / math.e**2 + (2 + math.e) / math.e
    regression_ok = abs(value - reference) <= 1e-9
    rng = np.random.default_rng(seed)
    bad = 0
    names = ["mass_plus", "mass_minus", "sup_plus", "sup_minus", "mortality"]
    for _ in range(n_random):
        vals = dict(zip(names, rng.uniform(0.0, 3.0, 5)))
        th = rng.uniform(-2, 2)
        thp = th + rng.uniform(0.1, 3)
        base = operator_norm_bound(NormBoundInput(th, thp, **vals))
        if abs(base - _norm_bound_reference(*(vals[n] for n in names), th, thp)) > 1e-9 * max(1, base):
            bad += 1
        for n in names:
            bumped = dict(vals)
            bumped[n] += 1e-3
            if not operator_norm_bound(NormBoundInput(th, thp, **bumped)) > base:
                bad += 1
        # decreasing in the gap at fixed theta'
        if not operator_norm_bound(NormBoundInput(th - 0.01, thp, **vals)) < base:
            bad += 1
    ok = regression_ok and bad == 0
    return CriterionResult(
        "norm_bound", ok,
        f"value {value:.12f} vs independent {reference:.12f} (tol 1e-9); monotonicity failures {bad}/{n_random} inputs",
        {"value": value, "reference": reference, "failures": bad},
    )


# -- 9. engineering invariants ---------------------------------------------------------------
@_timed
def neighbor_queries(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
                     n_jobs: int = 1, cases: int = 1000) -> CriterionResult:
    """Cell-list queries agree with a brute-force scan on randomized cases."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for c in range(cases):
        d = int(rng.integers(1, 4))
        L = float(rng.uniform(10, 40))
        cell = float(rng.uniform(0.5, L / 3))
        torus = Torus(d, L)
        n = int(rng.integers(0, 60 if d > 1 else 200))
        cfg = PointConfig.from_positions(torus, torus.length * rng.random((n, d)), cell)
        for _ in range(int(rng.integers(0, 10))):
            if len(cfg) and rng.random() < 0.5:
                cfg.remove(int(rng.choice(cfg.handles)))
            else:
                cfg.insert(torus.length * rng.random(d))
        x = torus.length * rng.random(d)
        R = float(rng.uniform(0, min(cell * 2, L / 2)))
        if cfg.neighbors_within(x, R) != brute_force_neighbors(cfg, x, R):
            mismatches += 1
    return CriterionResult(
        "neighbor_queries", mismatches == 0, f"{mismatches} mismatches in {cases} randomized cases",
        {"mismatches": mismatches},
    )


@_timed
def rate_audit(seed: int, replicas: Optional[int] = None, t_end: Optional[float] = None,
               n_jobs: int = 1, events: int = 1_000_000, period: int = 100_000) -> CriterionResult:
    """Cached death rates stay within 1e-9 of a full recomputation."""
    model = Model(KernelPair(GAUSS, GAUSS.scaled(0.5)), 0.0)
    torus = Torus(1, BOX)
    rng = replica_rng(seed, 0, stream=9)
    state = SimState(sample_poisson(2.0, torus, rng, model.kernels.max_cutoff), model,
                     recompute_period=period)
    for _ in range(events):
        state.step(rng)
    state.audit()
    ok = state.max_audit_drift < 1e-9
    return CriterionResult(
        "rate_audit", ok,
        f"max drift {state.max_audit_drift:.2e} over {state.events} events, {state.audits} audits (tol 1e-9)",
        {"max_drift": state.max_audit_drift, "events": state.events, "audits": state.audits},
    )


CRITERIA: dict[str, Callable[..., CriterionResult]] = {
    "stationary_law": stationary_law,
    "extinction": extinction,
    "pure_death": pure_death,
    "competition_envelope": competition_envelope,
    "clustering": clustering,
    "hierarchy_crossval": hierarchy_crossval,
    "hierarchy_stationarity": hierarchy_stationarity,
    "domination": domination,
    "norm_bound": norm_bound,
    "neighbor_queries": neighbor_queries,
    "rate_audit": rate_audit,
}
