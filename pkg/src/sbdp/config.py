"""Experiment configuration: nested dataclasses loaded from YAML/JSON.

Unknown keys anywhere are rejected; every value is checked on load.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .kernels import DEFAULT_TAIL_TOL, Family, KernelPair, KernelSpec


class ConfigError(ValueError):
    pass


@dataclass
class KernelConfig:
    family: str = "zero"
    amplitude: float = 0.0
    scale: float = 1.0

    def build(self, d: int, tail_tol: float) -> KernelSpec:
        try:
            fam = Family(self.family)
        except ValueError:
            raise ConfigError(f"unknown kernel family {self.family!r}") from None
        try:
            return KernelSpec(fam, self.amplitude, self.scale, d, tail_tol)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class ModelConfig:
    dimension: int = 1
    length: float = 100.0
    mortality: float = 0.0
    tail_tol: float = DEFAULT_TAIL_TOL
    dispersal: KernelConfig = field(default_factory=KernelConfig)
    competition: KernelConfig = field(default_factory=KernelConfig)

    def kernels(self) -> KernelPair:
        return KernelPair(self.dispersal.build(self.dimension, self.tail_tol),
                          self.competition.build(self.dimension, self.tail_tol))

    def check(self):
        if self.dimension not in (1, 2, 3):
            raise ConfigError("model.dimension must be 1, 2 or 3")
        if self.mortality < 0:
            raise ConfigError("model.mortality must be >= 0")
        if not 0 < self.tail_tol < 1:
            raise ConfigError("model.tail_tol must lie in (0, 1)")
        pair = self.kernels()
        if not self.length > 2 * pair.max_cutoff:
            raise ConfigError(f"model.length must exceed twice the kernel cutoff {pair.max_cutoff:.4g}")


@dataclass
class RunConfig:
    density: float = 1.0
    snapshot: Optional[str] = None
    t_end: float = 10.0
    observe_every: float = 1.0
    replicas: int = 1
    seed: int = 0
    population_cap: int = 1_000_000
    recompute_period: int = 100_000

    def obs_times(self):
        n = int(math.floor(self.t_end / self.observe_every + 1e-9))
        return [k * self.observe_every for k in range(n + 1)]

    def check(self):
        if self.density < 0:
            raise ConfigError("run.density must be >= 0")
        if not self.t_end > 0 or not self.observe_every > 0:
            raise ConfigError("run.t_end and run.observe_every must be positive")
        if self.replicas < 1:
            raise ConfigError("run.replicas must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        if self.population_cap < 1:
            raise ConfigError("run.population_cap must be >= 1")


@dataclass
class AnalysisConfig:
    bin_width: float = 0.25
    r_max: float = 10.0
    window: float = 1.0
    n_max: int = 4
    slack: float = 3.0
    fit_window: Optional[list] = None
    times: Optional[list] = None

    def check(self):
        if not self.bin_width > 0 or not self.r_max > 0 or not self.window > 0:
            raise ConfigError("analysis.bin_width, r_max and window must be positive")
        if not 2 <= self.n_max <= 6:
            raise ConfigError("analysis.n_max must lie in 2..6")
        if self.fit_window is not None and (len(self.fit_window) != 2 or self.fit_window[0] >= self.fit_window[1]):
            raise ConfigError("analysis.fit_window must be [t_lo, t_hi] with t_lo < t_hi")


@dataclass
class HierarchyConfig:
    n: int = 1024
    dt: float = 0.05
    t_end: float = 20.0
    closure: str = "kirkwood"
    k1_floor: float = 1e-8
    k1_bound: float = 1e6
    initial_density: Optional[float] = None
    output_stride: int = 20

    def check(self):
        if self.closure not in ("kirkwood", "poisson"):
            raise ConfigError(f"hierarchy.closure must be kirkwood or poisson, got {self.closure!r}")
        if self.n < 8 or not self.dt > 0 or not self.t_end > 0 or self.output_stride < 1:
            raise ConfigError("hierarchy.n >= 8, dt > 0, t_end > 0 and output_stride >= 1 required")


@dataclass
class CertifyConfig:
    budget: int = 100_000
    sizes: list = field(default_factory=lambda: [2, 6])
    b_max: Optional[float] = None
    adversarial_seeds: int = 20
    adversarial_iterations: int = 200

    def check(self):
        if self.budget < 10_000:
            raise ConfigError("certify.budget must be at least 10000")
        if len(self.sizes) != 2 or not 2 <= self.sizes[0] <= self.sizes[1]:
            raise ConfigError("certify.sizes must be [lo, hi] with 2 <= lo <= hi")


@dataclass
class BoundConfig:
    theta: float = 0.0
    theta_prime: float = 1.0
    envelope_case: Optional[str] = None
    envelope_C: float = 1.0
    envelope_rate: float = 0.0
    envelope_n: int = 1

    def check(self):
        if not self.theta_prime > self.theta:
            raise ConfigError(
                f"bound.theta_prime ({self.theta_prime}) must exceed bound.theta ({self.theta})"
            )
        if self.envelope_case not in (None, "i", "ii", "iii"):
            raise ConfigError("bound.envelope_case must be i, ii or iii")


@dataclass
class VerifyConfig:
    criteria: list = field(default_factory=lambda: ["stationary_law", "extinction", "pure_death",
                                                    "competition_envelope"])
    replicas: dict = field(default_factory=dict)
    t_end: dict = field(default_factory=dict)

    def check(self):
        from .experiments import CRITERIA

        for name in self.criteria:
            if name not in CRITERIA:
                raise ConfigError(f"unknown verify criterion {name!r}; known: {sorted(CRITERIA)}")
        for key in list(self.replicas) + list(self.t_end):
            if key not in CRITERIA:
                raise ConfigError(f"unknown verify criterion {key!r}")


@dataclass
class OutputConfig:
    directory: str = "out"
    snapshots: bool = False


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    run: RunConfig = field(default_factory=RunConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    bound: BoundConfig = field(default_factory=BoundConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def check(self, sections=None) -> "ExperimentConfig":
        for f in dataclasses.fields(self):
            if sections is not None and f.name not in sections:
                continue
            section = getattr(self, f.name)
            if hasattr(section, "check"):
                section.check()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is list and not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    if tp is dict and not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping, got {value!r}")
    return value


def from_dict(cls, data: Any, where: str = "config"):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return from_dict(ExperimentConfig, data)
