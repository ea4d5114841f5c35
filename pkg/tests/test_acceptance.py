"""Benchmark criteria, one printed pass/fail line each.

The same functions back ``sbdp verify``; seeds are fixed so every line is
reproducible. Runtime is a few minutes on one core.
"""
import time
from pathlib import Path

import pytest

from sbdp import experiments as ex
from sbdp.cli import main

from conftest import ACCEPTANCE_LINES

ROOT = Path(__file__).resolve().parents[1]
SEED = 20240611


def report(label: str, result) -> None:
    line = f"{label} {result.line()} [{result.seconds:.0f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    if not result.passed:
        pytest.fail(result.summary, pytrace=False)


def test_ac1_stationary_law():
    report("AC1", ex.stationary_law(SEED))


def test_ac2_extinction():
    report("AC2", ex.extinction(SEED))


def test_ac3a_pure_death():
    report("AC3a", ex.pure_death(SEED))


def test_ac3b_competition_envelope():
    report("AC3b", ex.competition_envelope(SEED))


def test_ac4_clustering_vs_self_regulation():
    report("AC4", ex.clustering(SEED))


def test_ac5_hierarchy_crossval_kirkwood():
    report("AC5", ex.hierarchy_crossval(SEED))


def test_ac6_hierarchy_stationarity():
    report("AC6", ex.hierarchy_stationarity(SEED))


def test_ac7_domination_certificate():
    report("AC7", ex.domination(SEED))


def test_ac8_norm_bound():
    report("AC8", ex.norm_bound(SEED))


def test_ac9a_neighbor_queries():
    report("AC9a", ex.neighbor_queries(SEED))


def test_ac9b_rate_audit():
    report("AC9b", ex.rate_audit(SEED))


def _outputs(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_ac9c_verify_replay_is_byte_identical(tmp_path):
    t0 = time.perf_counter()
    cfg = str(ROOT / "configs" / "stationary.yaml")
    codes = [main(["verify", "--config", cfg, "--out", str(tmp_path / name)]) for name in ("a", "b")]
    a, b = _outputs(tmp_path / "a"), _outputs(tmp_path / "b")
    rows = a["verify.csv"].decode().splitlines()[1:]
    covered = sorted(r.split(",")[0] for r in rows)
    passed = codes == [0, 0] and a == b and covered == sorted(
        ["stationary_law", "extinction", "pure_death", "competition_envelope"])
    result = ex.CriterionResult(
        "verify_replay", passed,
        f"exit codes {codes}; {len(a)} output files, byte-identical: {a == b}; criteria covered: {covered}")
    result.seconds = time.perf_counter() - t0
    report("AC9c", result)
