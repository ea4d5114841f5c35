"""Second-order truncation of the correlation-function hierarchy (d = 1).

For a translation-invariant state the first two correlation functions are a
density ``k1`` and a pair function ``k2(u)`` of the displacement ``u``.
Their evolution is

    dk1/dt = (<a+> - m) k1 - int a-(u) k2(u) du
    dk2/dt = -2 (m + a-(u)) k2(u) + 2 a+(u) k1 + 2 (a+ * k2)(u)
             - 2 int a-(v) k3(u, v) dv

where ``k3(u, v)`` is the triple function of points with pair separations
``u``, ``v`` and ``u - v``, supplied by a closure. The displacement grid is
periodic, matching the torus used by the simulator. Kernel masses are the
grid (trapezoid) sums of the sampled truncated kernels, so every identity
that holds for the continuum equations holds on the grid to round-off.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import Model

log = logging.getLogger(__name__)

DEFAULT_K1_FLOOR = 1e-8


class Closure(str, enum.Enum):
    POISSON = "poisson"
    KIRKWOOD = "kirkwood"


class ClosureFloorError(ValueError):
    pass


class GridTooCoarseError(ValueError):
    pass


class BlowUpError(RuntimeError):
    pass


class NegativityError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform periodic displacement grid on [-L/2, L/2) with N nodes."""

    n: int
    length: float

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def u(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.h

    def mirror(self, f: np.ndarray) -> np.ndarray:
        """f(-u) on the grid (index i <-> N - i around the centre)."""
        c = self.n // 2
        idx = (2 * c - np.arange(self.n)) % self.n
        return f[idx]


@dataclass
class HierarchyState:
    k1: float
    k2: np.ndarray
    grid: Grid
    t: float = 0.0
    clipped_mass: float = 0.0

    def copy(self) -> "HierarchyState":
        return replace(self, k2=self.k2.copy())

    @classmethod
    def poisson(cls, density: float, grid: Grid) -> "HierarchyState":
        return cls(density, np.full(grid.n, density**2), grid)


class HierarchyModel:
    """Kernels sampled on the grid plus the operators acting on (k1, k2)."""

    def __init__(self, model: Model, grid: Grid, k1_floor: float = DEFAULT_K1_FLOOR,
                 check_resolution: bool = True):
        if model.dimension != 1:
            raise ValueError("the hierarchy solver supports d = 1 only")
        self.model = model
        self.grid = grid
        self.m = model.mortality
        self.k1_floor = k1_floor
        plus, minus = model.kernels.dispersal, model.kernels.competition
        if check_resolution:
            scales = [k.scale for k in (plus, minus) if not k.is_zero]
            if scales and grid.h > min(scales) / 10:
                raise GridTooCoarseError(
                    f"grid spacing {grid.h:.4g} does not resolve kernel scale {min(scales):.4g}"
                )
        if grid.length / 2 < model.kernels.max_cutoff:
            raise GridTooCoarseError("grid half-width is smaller than the kernel cutoff")
        u = grid.u
        h = grid.h
        self.a_plus = np.asarray(plus.radial_truncated(np.abs(u)), dtype=float)
        self.a_minus = np.asarray(minus.radial_truncated(np.abs(u)), dtype=float)
        self.mass_plus = float(h * self.a_plus.sum())
        self.mass_minus = float(h * self.a_minus.sum())
        self.sup_minus = float(self.a_minus.max())
        # kernels stored with u = 0 at index 0 for circular convolution
        self._fa_plus = np.fft.rfft(np.fft.ifftshift(self.a_plus))
        self._fa_minus = np.fft.rfft(np.fft.ifftshift(self.a_minus))

    # -- convolution helpers ---------------------------------------------------
    def conv(self, f_hat: np.ndarray, g: np.ndarray) -> np.ndarray:
        """h * sum_j f(u - u_j) g(u_j) with f given by its centred rfft."""
        n = self.grid.n
        gs = np.fft.ifftshift(g)
        out = np.fft.irfft(f_hat * np.fft.rfft(gs), n)
        return self.grid.h * np.fft.fftshift(out)

    def conv_direct(self, f: np.ndarray, g: np.ndarray, i: int) -> float:
        """Same convolution at grid index ``i`` by explicit summation."""
        n = self.grid.n
        c = n // 2
        j = np.arange(n)
        # u_i - u_j lands on index (i - j + c) mod n
        return float(self.grid.h * np.sum(f[(i - j + c) % n] * g))

    # -- right-hand sides ----------------------------------------------------------
    def competition_k1(self, state: HierarchyState) -> float:
        return float(self.grid.h * np.sum(self.a_minus * state.k2))

    def rhs_k1(self, state: HierarchyState) -> float:
        return (self.mass_plus - self.m) * state.k1 - self.competition_k1(state)

    def competition_k2(self, state: HierarchyState, closure: Closure) -> np.ndarray:
        """int a-(v) k3(u, v) dv on the grid for the chosen closure."""
        k1, k2 = state.k1, state.k2
        closure = Closure(closure)
        if closure is Closure.KIRKWOOD:
            if k1 < self.k1_floor:
                raise ClosureFloorError(f"k1 = {k1:.3g} is below the Kirkwood floor {self.k1_floor:.3g}")
            # k2(u)/k1^3 * sum_v a-(v) k2(v) k2(u - v)
            fa = np.fft.rfft(np.fft.ifftshift(self.a_minus * k2))
            return k2 * self.conv(fa, k2) / k1**3
        # zero third cumulant: k1 k2(u) + k1 k2(v) + k1 k2(u - v) - 2 k1^3
        h = self.grid.h
        return (
            k1 * k2 * self.mass_minus
            + k1 * h * np.sum(self.a_minus * k2)
            + k1 * self.conv(self._fa_minus, k2)
            - 2 * k1**3 * self.mass_minus
        )

    def rhs_k2(self, state: HierarchyState, closure: Closure) -> np.ndarray:
        k1, k2 = state.k1, state.k2
        out = -2 * (self.m + self.a_minus) * k2
        out += 2 * self.a_plus * k1
        out += 2 * self.conv(self._fa_plus, k2)
        out -= 2 * self.competition_k2(state, closure)
        return out

    def rhs_k2_direct(self, state: HierarchyState, closure: Closure, i: int) -> float:
        """rhs_k2 at grid index ``i`` by direct summation (no FFT)."""
        k1, k2 = state.k1, state.k2
        h = self.grid.h
        n = self.grid.n
        c = n // 2
        j = np.arange(n)
        k2_u_minus_v = k2[(i - j + c) % n]
        if Closure(closure) is Closure.KIRKWOOD:
            comp = h * np.sum(self.a_minus * k2[i] * k2 * k2_u_minus_v) / k1**3
        else:
            k3 = k1 * k2[i] + k1 * k2 + k1 * k2_u_minus_v - 2 * k1**3
            comp = h * np.sum(self.a_minus * k3)
        return float(
            -2 * (self.m + self.a_minus[i]) * k2[i]
            + 2 * self.a_plus[i] * k1
            + 2 * self.conv_direct(self.a_plus, k2, i)
            - 2 * comp
        )

    def stable_dt(self, k1_max: float) -> float:
        return 0.1 / (self.m + self.mass_plus + self.sup_minus * k1_max)


def close_k3(closure: Closure, k1: float, k2_u: float, k2_v: float, k2_uv: float,
             floor: float = DEFAULT_K1_FLOOR) -> float:
    """Closure value of the triple function from its three pair values."""
    closure = Closure(closure)
    if closure is Closure.KIRKWOOD:
        if k1 < floor:
            raise ClosureFloorError(f"k1 = {k1:.3g} is below the Kirkwood floor {floor:.3g}")
        return k2_u * k2_v * k2_uv / k1**3
    return k1 * (k2_u + k2_v + k2_uv) - 2 * k1**3


@dataclass
class HierarchyRun:
    times: np.ndarray
    k1: np.ndarray
    states: list
    clipped_total: float = 0.0
    max_asymmetry: float = 0.0


def integrate(state0: HierarchyState, hmodel: HierarchyModel, closure: Closure, t_end: float,
              dt: float, output_stride: int = 1, k1_bound: float = 1e6,
              clip_tol: float = 1e-6) -> HierarchyRun:
    """Classical RK4 in time; k2 is symmetrised and clipped at zero each step.

    ``states`` holds a copy of the state every ``output_stride`` steps (and
    the final one). Raises BlowUpError if k1 exceeds ``k1_bound`` and
    NegativityError if one step clips more than ``clip_tol * max|k2|``.
    """
    if not dt > 0 or not t_end > 0:
        raise ValueError("dt and t_end must be positive")
    closure = Closure(closure)
    grid = hmodel.grid
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    dt = t_end / n_steps
    s = state0.copy()
    times = [s.t]
    k1s = [s.k1]
    states = [s.copy()]
    clipped_total = 0.0
    max_asym = 0.0

    def f(k1, k2):
        st = HierarchyState(k1, k2, grid)
        return hmodel.rhs_k1(st), hmodel.rhs_k2(st, closure)

    for step in range(1, n_steps + 1):
        k1, k2 = s.k1, s.k2
        a1, b1 = f(k1, k2)
        a2, b2 = f(k1 + 0.5 * dt * a1, k2 + 0.5 * dt * b1)
        a3, b3 = f(k1 + 0.5 * dt * a2, k2 + 0.5 * dt * b2)
        a4, b4 = f(k1 + dt * a3, k2 + dt * b3)
        k1_new = k1 + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        k2_new = k2 + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        mirrored = grid.mirror(k2_new)
        max_asym = max(max_asym, float(np.max(np.abs(k2_new - mirrored))))
        k2_new = 0.5 * (k2_new + mirrored)
        neg = k2_new < 0
        if np.any(neg):
            clipped = float(-grid.h * k2_new[neg].sum())
            scale = float(np.max(np.abs(k2_new)))
            if clipped > clip_tol * max(scale, 1e-300):
                raise NegativityError(f"clipped mass {clipped:.3g} at t={s.t + dt:.4g}")
            clipped_total += clipped
            k2_new[neg] = 0.0
        if k1_new < 0:
            k1_new = 0.0
        if not np.isfinite(k1_new) or k1_new > k1_bound:
            raise BlowUpError(f"k1 = {k1_new:.4g} exceeded bound {k1_bound:.4g} at t={s.t + dt:.4g}")
        s = HierarchyState(float(k1_new), k2_new, grid, state0.t + step * dt, clipped_total)
        if step % output_stride == 0 or step == n_steps:
            times.append(s.t)
            k1s.append(s.k1)
            states.append(s.copy())
    if clipped_total > 0:
        log.info("clipped total k2 mass %.3g", clipped_total)
    return HierarchyRun(np.array(times), np.array(k1s), states, clipped_total, max_asym)


def write_state_csv(path, state: HierarchyState) -> None:
    """One file per output time: ``t,<t>`` and ``k1,<k1>`` lines, then ``u,k2`` rows."""
    lines = [f"t,{state.t:.17g}", f"k1,{state.k1:.17g}", "u,k2"]
    lines += [f"{u:.17g},{v:.17g}" for u, v in zip(state.grid.u, state.k2)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_state_csv(path, length: float) -> HierarchyState:
    rows = Path(path).read_text().splitlines()
    t = float(rows[0].split(",")[1])
    k1 = float(rows[1].split(",")[1])
    data = np.array([[float(v) for v in r.split(",")] for r in rows[3:] if r])
    grid = Grid(len(data), length)
    return HierarchyState(k1, data[:, 1], grid, t)
