"""Domination constants (b, theta) across competition ranges.

Holds a+ Gaussian (c = 1, sigma = 1) and scans sigma- of a Gaussian a-;
sigma- >= sigma+ is short dispersal (analytic b = 0), narrower a- needs a
positive b from the sampled search.

    python scripts/certificate_scan.py --budget 20000
"""
from __future__ import annotations

import argparse
import csv
from dataclasses import dataclass, field
from pathlib import Path

from sbdp.dynamics import replica_rng
from sbdp.kernels import KernelPair, KernelSpec, classify_dispersal
from sbdp.theory import _sample_batches, find_domination_constants, verify_domination


@dataclass
class CertScanConfig:
    sigmas: list = field(default_factory=lambda: [0.5, 0.75, 1.0, 1.5, 2.0, 3.0])
    budget: int = 20_000
    seed: int = 3
    out: Path = Path("out/certificates")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sigmas", type=float, nargs="+", default=CertScanConfig().sigmas)
    p.add_argument("--budget", type=int, default=CertScanConfig.budget)
    p.add_argument("--seed", type=int, default=CertScanConfig.seed)
    p.add_argument("--out", type=Path, default=CertScanConfig.out)
    a = p.parse_args()
    cfg = CertScanConfig(a.sigmas, a.budget, a.seed, a.out)
    plus = KernelSpec.gaussian(1.0, 1.0, 1)
    rows = []
    for i, s in enumerate(cfg.sigmas):
        pair = KernelPair(plus, KernelSpec.gaussian(1.0, s, 1))
        rng = replica_rng(cfg.seed, i, stream=7)
        cert = find_domination_constants(pair, cfg.budget, rng, seed=cfg.seed)
        fresh = verify_domination(cert, pair, _sample_batches(pair, cfg.budget, cert.sizes, rng))
        rows.append((s, classify_dispersal(pair).label, cert.b, cert.theta, cert.margin, fresh))
        print("sigma-={:g} {:>6s} b={:.4g} theta={:.4g} margin={:.3g} fresh={:.3g}".format(*rows[-1]))
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "certificates.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([["sigma_minus", "dispersal", "b", "theta", "margin", "fresh_margin"], *rows])


if __name__ == "__main__":
    main()
