"""Command-line runner: ``sbdp <subcommand> --config PATH``.

Exit codes: 0 success, 1 failed verification, 2 invalid configuration or
domain error, 3 population cap hit (partial outputs written), 4 numeric
blow-up in the hierarchy solver.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import subprocess
import sys
import time
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import estimators as est
from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .dynamics import Model, PopulationCapError, replica_rng, run_replica, simulate
from .hierarchy import (BlowUpError, Closure, ClosureFloorError, Grid, GridTooCoarseError, HierarchyModel,
                        HierarchyState, NegativityError, integrate, write_state_csv)
from .kernels import classify_dispersal
from .pointset import PointConfig, Torus, read_snapshot, window_counts, write_snapshot
from .theory import (EnvelopeCase, NormBoundInput, _sample_batches, adversarial_refine, envelope_series,
                     find_domination_constants, operator_norm_bound, verify_domination)

log = logging.getLogger("sbdp")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAP, EXIT_BLOWUP = 0, 1, 2, 3, 4
CERT_STREAM = 7


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


class Outputs:
    """Single writer for one output directory; remembers a hash per file."""

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hashes: dict[str, str] = {}

    def _write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        path.write_bytes(data)
        self.hashes[name] = hashlib.sha256(data).hexdigest()
        return path

    def csv(self, name: str, header: list, rows: Iterable) -> Path:
        lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
        return self._write(name, "\n".join(lines) + "\n")

    def json(self, name: str, obj) -> Path:
        return self._write(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def adopt(self, name: str) -> None:
        # a file written by another helper (snapshots, hierarchy states)
        self.hashes[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()

    def manifest(self, command: str, seed: int, cfg: ExperimentConfig, wall: float, extra: dict) -> None:
        pair = cfg.model.kernels()
        doc = {
            "command": command,
            "version": version_string(),
            "seed": seed,
            "config": cfg.to_dict(),
            "truncation_error": {"dispersal": pair.dispersal.truncation_error,
                                 "competition": pair.competition.truncation_error},
            "wall_time_seconds": wall,
            "files": dict(sorted(self.hashes.items())),
            **extra,
        }
        (self.dir / "manifest.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


# -- shared setup -----------------------------------------------------------------
def _model(cfg: ExperimentConfig) -> tuple[Model, Torus]:
    model = Model(cfg.model.kernels(), cfg.model.mortality)
    torus = Torus(cfg.model.dimension, cfg.model.length)
    model.check_torus(torus)
    return model, torus


def _safe_replica(model, torus, cfg: ExperimentConfig, seed: int, r: int, obs, keep: bool,
                  initial: Optional[PointConfig]):
    kw = dict(keep_snapshots=keep, population_cap=cfg.run.population_cap,
              recompute_period=cfg.run.recompute_period)
    try:
        if initial is None:
            return run_replica(model, torus, cfg.run.density, cfg.run.t_end, obs, seed, r, **kw), None
        traj = simulate(initial, model, cfg.run.t_end, obs, replica_rng(seed, r), **kw)
        traj.seed, traj.replica = seed, r
        return traj, None
    except PopulationCapError as exc:
        exc.trajectory.seed, exc.trajectory.replica = seed, r
        return exc.trajectory, str(exc)


def _run_all(cfg, seed, threads, keep):
    model, torus = _model(cfg)
    initial = None
    if cfg.run.snapshot:
        initial, _ = read_snapshot(cfg.run.snapshot, model.kernels.max_cutoff)
        if initial.torus != torus:
            raise ConfigError("run.snapshot torus does not match model.dimension / model.length")
    obs = cfg.run.obs_times()
    args = [(model, torus, cfg, seed, r, obs, keep, initial) for r in range(cfg.run.replicas)]
    if threads == 1:
        results = [_safe_replica(*a) for a in args]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=threads)(delayed(_safe_replica)(*a) for a in args)
    trajs = [t for t, _ in results]
    errors = [e for _, e in results if e]
    return model, torus, obs, trajs, errors


def _write_trajectories(out: Outputs, trajs, torus: Torus, snapshots: bool) -> None:
    rows = []
    for tr in trajs:
        for t, n, rho in zip(tr.times, tr.counts, tr.densities):
            rows.append((float(t), tr.replica, int(n), float(rho)))
    out.csv("trajectory.csv", ["t", "replica", "n_points", "density"], rows)
    if snapshots:
        for tr in trajs:
            for k, (t, pos) in enumerate(zip(tr.times, tr.snapshots or [])):
                name = f"snapshots/replica{tr.replica:04d}_obs{k:04d}.txt"
                (out.dir / "snapshots").mkdir(exist_ok=True)
                write_snapshot(out.dir / name, PointConfig.from_positions(torus, pos), float(t), tr.seed)
                out.adopt(name)


def _run_meta(trajs, errors) -> dict:
    return {"replicas": [{"replica": t.replica, "events": t.events, "absorbed": t.absorbed, "cap_hit": t.cap_hit,
                          "max_audit_drift": t.max_audit_drift} for t in trajs],
            "population_cap_errors": errors}


# -- subcommands --------------------------------------------------------------------
def cmd_simulate(cfg, seed, threads, out: Outputs) -> tuple[int, dict]:
    """Simulate replicas and write per-replica density trajectories."""
    keep = cfg.outputs.snapshots
    model, torus, obs, trajs, errors = _run_all(cfg, seed, threads, keep)
    _write_trajectories(out, trajs, torus, keep)
    for e in errors:
        print(f"population cap: {e}", file=sys.stderr)
    return (EXIT_CAP if errors else EXIT_OK), _run_meta(trajs, errors)


def cmd_estimate(cfg, seed, threads, out: Outputs) -> tuple[int, dict]:
    """Simulate, then estimate density, pair correlation and factorial moments."""
    model, torus, obs, trajs, errors = _run_all(cfg, seed, threads, True)
    _write_trajectories(out, trajs, torus, cfg.outputs.snapshots)
    a = cfg.analysis
    n_obs = min(len(t.times) for t in trajs)
    times = np.asarray(obs[:n_obs])
    dens = np.array([t.densities[:n_obs] for t in trajs])
    rows = []
    for k, t in enumerate(times):
        m, se = est.estimate_density(dens[:, k] * torus.volume, torus.volume)
        rows.append((float(t), m, se, len(trajs)))
    out.csv("density.csv", ["t", "density", "stderr", "n_replicas"], rows)

    wanted = times if a.times is None else [t for t in times if any(abs(t - w) < 1e-9 for w in a.times)]
    edges = np.arange(0.0, a.r_max + 1e-12, a.bin_width)
    pair_rows, moment_rows = [], []
    window_volume = a.window**torus.dimension
    for t in wanted:
        k = int(np.argmin(np.abs(times - t)))
        pc = est.estimate_pair_correlation([tr.snapshots[k] for tr in trajs], torus, edges, float(t))
        pair_rows += [(float(t), lo, hi, k2, s, pc.n_replicas) for lo, hi, k2, s in pc.rows()]
        acc = est.MomentAccumulator(a.n_max)
        for tr in trajs:
            acc.add(window_counts(PointConfig.from_positions(torus, tr.snapshots[k]), a.window).tolist())
        try:
            rep = est.moment_report(acc, window_volume, a.slack)
        except ValueError as exc:
            log.warning("t=%g: moment gate skipped (%s)", t, exc)
            continue
        verdict = "sub-Poissonian" if rep.sub_poissonian else "not sub-Poissonian"
        for n in range(1, a.n_max + 1):
            moment_rows.append((float(t), window_volume, n, rep.moments[n - 1], rep.stderr[n - 1], verdict))
    out.csv("pair_correlation.csv", ["t", "r_lo", "r_hi", "k2_hat", "stderr", "n_replicas"], pair_rows)
    out.csv("moments.csv", ["t", "V", "n", "M_n", "stderr", "verdict"], moment_rows)
    extra = _run_meta(trajs, errors)
    if a.fit_window is not None:
        fit = est.decay_rate_fit(times, dens, tuple(a.fit_window))
        out.json("decay_fit.json", {"rate": fit.rate, "stderr": fit.stderr, "intercept": fit.intercept,
                                    "window": a.fit_window})
    return (EXIT_CAP if errors else EXIT_OK), extra


def cmd_hierarchy(cfg, seed, threads, out: Outputs) -> tuple[int, dict]:
    """Integrate the closed correlation hierarchy (d = 1)."""
    h = cfg.hierarchy
    model, _ = _model(cfg)
    if model.dimension != 1:
        raise ConfigError("the hierarchy solver supports model.dimension = 1 only")
    grid = Grid(h.n, cfg.model.length)
    hm = HierarchyModel(model, grid, k1_floor=h.k1_floor)
    rho0 = cfg.run.density if h.initial_density is None else h.initial_density
    run = integrate(HierarchyState.poisson(rho0, grid), hm, Closure(h.closure), h.t_end, h.dt,
                    output_stride=h.output_stride, k1_bound=h.k1_bound)
    out.csv("hierarchy_k1.csv", ["t", "k1"], zip(run.times.tolist(), run.k1.tolist()))
    (out.dir / "hierarchy").mkdir(exist_ok=True)
    for i, st in enumerate(run.states):
        name = f"hierarchy/state_{i:04d}.csv"
        write_state_csv(out.dir / name, st)
        out.adopt(name)
    return EXIT_OK, {"clipped_mass": run.clipped_total, "max_asymmetry": run.max_asymmetry,
                     "grid_mass_plus": hm.mass_plus, "grid_mass_minus": hm.mass_minus}


def cmd_certify(cfg, seed, threads, out: Outputs) -> tuple[int, dict]:
    """Search and validate domination constants (b, theta)."""
    c = cfg.certify
    pair = cfg.model.kernels()
    rng = replica_rng(seed, 0, stream=CERT_STREAM)
    sizes = (int(c.sizes[0]), int(c.sizes[1]))
    cert = find_domination_constants(pair, c.budget, rng, sizes=sizes, seed=seed, b_max=c.b_max)
    fresh = math.nan
    if math.isfinite(cert.b):
        batches = _sample_batches(pair, c.budget, sizes, rng)
        fresh = verify_domination(cert, pair, batches)
        cert.adversarial_margin = adversarial_refine(cert, pair, batches, rng, c.adversarial_seeds,
                                                     c.adversarial_iterations)
    doc = json.loads(cert.to_json(pair))
    doc["fresh_sample_margin"] = fresh
    doc["semantics"] = "no violation found within the sampling budget"
    out.json("certificate.json", doc)
    status = "validated" if cert.valid and fresh <= 0 and (cert.adversarial_margin or 0) <= 0 else "not validated"
    print(f"certificate {status}: b={cert.b:.6g} theta={cert.theta:.6g} margin={cert.margin:.3g}")
    return EXIT_OK, {"certificate_status": status}


def cmd_bound(cfg, seed, threads, out: Outputs) -> tuple[int, dict]:
    """Evaluate the operator norm bound and, optionally, a regime envelope."""
    b = cfg.bound
    pair = cfg.model.kernels()
    m = cfg.model.mortality
    value = operator_norm_bound(NormBoundInput.from_kernels(pair, m, b.theta, b.theta_prime))
    out.json("bound.json", {"theta": b.theta, "theta_prime": b.theta_prime, "operator_norm_bound": value})
    print(f"operator norm bound: {value:.17g}")
    if b.envelope_case is not None:
        times = cfg.run.obs_times()
        mp = pair.dispersal.mass
        short = classify_dispersal(pair).short
        n = b.envelope_n
        # case iii: k0 of a Poisson start, energy without competition (still an upper bound)
        case = EnvelopeCase(b.envelope_case, 0.0, n, mp, m, b.envelope_C, b.envelope_rate, b.envelope_rate,
                            short, cfg.run.density**n, m * n)
        env = envelope_series(case, times)
        out.csv("envelope.csv", ["t", "n", "envelope"], [(float(t), n, e) for t, e in zip(times, env)])
    return EXIT_OK, {}


def cmd_verify(cfg, seed, threads, out: Outputs) -> tuple[int, dict]:
    """Run benchmark criteria and print a pass/fail table."""
    from .experiments import CRITERIA

    v = cfg.verify
    model, torus = _model(cfg)
    rows, seconds = [], {}
    for name in v.criteria:
        kw = dict(replicas=v.replicas.get(name), t_end=v.t_end.get(name), n_jobs=threads)
        if name == "stationary_law":
            kw.update(model=model, length=cfg.model.length, density=cfg.run.density)
        res = CRITERIA[name](seed, **kw)
        print(res.line(), flush=True)
        rows.append((name, "PASS" if res.passed else "FAIL", res.summary.replace(",", ";")))
        seconds[name] = res.seconds
        for tname, (header, trows) in res.tables.items():
            out.csv(f"verify_{name}_{tname}.csv", header, trows)
    out.csv("verify.csv", ["criterion", "verdict", "summary"], rows)
    failed = [r[0] for r in rows if r[1] != "PASS"]
    print(f"{len(rows) - len(failed)}/{len(rows)} criteria passed")
    return (EXIT_FAIL if failed else EXIT_OK), {"criterion_seconds": seconds, "failed": failed}


COMMANDS = {
    "simulate": (cmd_simulate, ("model", "run", "outputs")),
    "estimate": (cmd_estimate, ("model", "run", "analysis", "outputs")),
    "hierarchy": (cmd_hierarchy, ("model", "run", "hierarchy")),
    "certify": (cmd_certify, ("model", "certify")),
    "bound": (cmd_bound, ("model", "run", "bound")),
    "verify": (cmd_verify, ("model", "run", "verify")),
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbdp", description="Spatial birth-death process experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (fn, _) in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__)
        sp.add_argument("--config", type=Path, help="YAML experiment config (defaults apply when omitted)")
        sp.add_argument("--seed", type=_u64, help="master seed (overrides run.seed)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for replicas")
        sp.add_argument("--out", type=Path, help="output directory (overrides outputs.directory)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    fn, sections = COMMANDS[args.command]
    try:
        cfg = load_config(args.config) if args.config else from_dict(ExperimentConfig, {})
        if args.seed is not None:
            cfg.run.seed = args.seed
        cfg.check(sections)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Outputs(args.out if args.out else Path(cfg.outputs.directory))
    t0 = time.perf_counter()
    try:
        code, extra = fn(cfg, cfg.run.seed, args.threads, out)
    except (ConfigError, GridTooCoarseError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUpError, ClosureFloorError, NegativityError) as exc:
        print(f"numeric blow-up: {exc}", file=sys.stderr)
        out.manifest(args.command, cfg.run.seed, cfg, time.perf_counter() - t0, {"error": str(exc)})
        return EXIT_BLOWUP
    except ValueError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.manifest(args.command, cfg.run.seed, cfg, time.perf_counter() - t0, {"exit_code": code, **extra})
    return code


if __name__ == "__main__":
    sys.exit(main())
