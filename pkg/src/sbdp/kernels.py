"""Isotropic dispersal and competition kernels.

Every kernel is a nonnegative radial function ``a(x) = amplitude * f(|x|)``
belonging to L1 and L-infinity. Kernels are hard-truncated at a cutoff radius
``R_c`` that leaves out at most ``tail_tol`` of the mass; the truncated
kernel is what the simulator and the hierarchy solver both see.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize, special

DEFAULT_TAIL_TOL = 1e-6


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    TOPHAT = "tophat"
    EXPONENTIAL = "exponential"
    ZERO = "zero"


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def unit_sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d=1)."""
    return d * unit_ball_volume(d)


@dataclass(frozen=True)
class KernelSpec:
    """A parametric isotropic kernel on R^d.

    ``amplitude`` is the total mass for the Gaussian and exponential families
    (they are ``amplitude`` times a probability density) and the height for
    the top-hat. ``scale`` is sigma, the range r, or the decay length lambda.
    """

    family: Family
    amplitude: float = 0.0
    scale: float = 1.0
    dimension: int = 1
    tail_tol: float = DEFAULT_TAIL_TOL
    _cutoff: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.dimension < 1:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if not 0.0 < self.tail_tol < 1.0:
            raise ValueError(f"tail_tol must lie in (0, 1), got {self.tail_tol}")
        if self.family is Family.ZERO:
            object.__setattr__(self, "amplitude", 0.0)
        elif self.family is Family.TOPHAT:
            if self.amplitude < 0:
                raise ValueError("top-hat height must be >= 0")
        elif self.amplitude <= 0:
            raise ValueError(f"{self.family.value} amplitude must be > 0")
        if self.family is not Family.ZERO and self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        object.__setattr__(self, "_cutoff", _cutoff(self, self.tail_tol))

    # -- constructors -----------------------------------------------------
    @classmethod
    def gaussian(cls, c: float, sigma: float, d: int = 1, tail_tol: float = DEFAULT_TAIL_TOL):
        return cls(Family.GAUSSIAN, c, sigma, d, tail_tol)

    @classmethod
    def tophat(cls, h: float, r: float, d: int = 1, tail_tol: float = DEFAULT_TAIL_TOL):
        return cls(Family.TOPHAT, h, r, d, tail_tol)

    @classmethod
    def exponential(cls, c: float, lam: float, d: int = 1, tail_tol: float = DEFAULT_TAIL_TOL):
        return cls(Family.EXPONENTIAL, c, lam, d, tail_tol)

    @classmethod
    def zero(cls, d: int = 1):
        return cls(Family.ZERO, 0.0, 1.0, d)

    def scaled(self, factor: float) -> "KernelSpec":
        """Return ``factor * self``; a zero factor yields the Zero kernel."""
        if factor < 0:
            raise ValueError("scale factor must be >= 0")
        if factor == 0 or self.is_zero:
            return KernelSpec.zero(self.dimension)
        return replace(self, amplitude=self.amplitude * factor)

    # -- derived quantities ----------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.family is Family.ZERO or self.amplitude == 0.0

    @property
    def mass(self) -> float:
        return mass(self)

    @property
    def sup(self) -> float:
        return sup_norm(self)

    @property
    def cutoff(self) -> float:
        return self._cutoff

    @property
    def truncation_error(self) -> float:
        """Fraction of the mass discarded by truncating at the cutoff."""
        if self.is_zero:
            return 0.0
        return _tail_fraction(self, self._cutoff)

    @property
    def truncated_mass(self) -> float:
        """Mass of the kernel as simulated, i.e. cut off at ``cutoff``."""
        return self.mass * (1.0 - self.truncation_error)

    def radial(self, r):
        """Untruncated family value at radius ``r`` (array friendly)."""
        r = np.asarray(r, dtype=float)
        d = self.dimension
        if self.is_zero:
            return np.zeros_like(r)
        if self.family is Family.GAUSSIAN:
            s2 = self.scale**2
            return self.amplitude * np.exp(-0.5 * r * r / s2) / (2 * math.pi * s2) ** (d / 2)
        if self.family is Family.TOPHAT:
            return np.where(r <= self.scale, self.amplitude, 0.0)
        norm = unit_sphere_area(d) * math.gamma(d) * self.scale**d
        return self.amplitude * np.exp(-r / self.scale) / norm

    def radial_truncated(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self._cutoff, self.radial(r), 0.0)

    def __call__(self, x):
        return evaluate(self, x)

    def length_scale(self) -> float:
        return 0.0 if self.is_zero else self.scale

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "amplitude": self.amplitude,
            "scale": self.scale,
            "dimension": self.dimension,
            "tail_tol": self.tail_tol,
        }


def evaluate(kernel: KernelSpec, x) -> np.ndarray | float:
    """Truncated kernel value at displacement(s) ``x``.

    ``x`` is a d-vector or an array of shape (..., d); for d = 1 a scalar or
    1-D array of displacements is also accepted.
    """
    arr = np.asarray(x, dtype=float)
    d = kernel.dimension
    if d == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        r = np.abs(arr)
    else:
        if arr.ndim == 0 or arr.shape[-1] != d:
            raise ValueError(f"displacement has shape {arr.shape}, kernel dimension is {d}")
        r = np.sqrt(np.sum(arr * arr, axis=-1))
    out = kernel.radial_truncated(r)
    return float(out) if out.ndim == 0 else out


def mass(kernel: KernelSpec) -> float:
    """Integral of the (untruncated) kernel over R^d."""
    if kernel.is_zero:
        return 0.0
    if kernel.family is Family.TOPHAT:
        return kernel.amplitude * unit_ball_volume(kernel.dimension) * kernel.scale**kernel.dimension
    return kernel.amplitude


def sup_norm(kernel: KernelSpec) -> float:
    # all implemented families are radially nonincreasing
    return float(kernel.radial(0.0))


def _tail_fraction(kernel: KernelSpec, radius: float) -> float:
    d = kernel.dimension
    if kernel.family is Family.GAUSSIAN:
        return float(special.gammaincc(d / 2, radius**2 / (2 * kernel.scale**2)))
    if kernel.family is Family.EXPONENTIAL:
        return float(special.gammaincc(d, radius / kernel.scale))
    return 0.0 if radius >= kernel.scale else 1.0 - (radius / kernel.scale) ** d


def _cutoff(kernel: KernelSpec, tail_tol: float) -> float:
    if kernel.is_zero:
        return 0.0
    if kernel.family is Family.TOPHAT:
        return float(kernel.scale)
    hi = kernel.scale
    while _tail_fraction(kernel, hi) > tail_tol:
        hi *= 2.0
    root = optimize.brentq(lambda r: _tail_fraction(kernel, r) - tail_tol, 0.0, hi, xtol=1e-14, rtol=1e-15)
    # step to the side of the root where the tail is within tolerance
    while _tail_fraction(kernel, root) > tail_tol:
        root = math.nextafter(root, math.inf)
    return float(root)


def cutoff_radius(kernel: KernelSpec, tail_tol: Optional[float] = None) -> float:
    """Smallest radius whose complement carries at most ``tail_tol * mass``."""
    if tail_tol is None:
        return kernel.cutoff
    if not 0.0 < tail_tol < 1.0:
        raise ValueError(f"tail_tol must lie in (0, 1), got {tail_tol}")
    return _cutoff(kernel, tail_tol)


def sample_displacement(kernel: KernelSpec, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw displacements from the normalized truncated kernel density.

    Returns a d-vector, or an array of shape (size, d) when ``size`` is given.
    Draws beyond the cutoff are rejected and redrawn.
    """
    if kernel.is_zero:
        raise ValueError("cannot sample from the zero kernel")
    n = 1 if size is None else int(size)
    d = kernel.dimension
    out = np.empty((n, d))
    filled = 0
    while filled < n:
        m = n - filled
        if kernel.family is Family.GAUSSIAN:
            draw = rng.normal(0.0, kernel.scale, size=(m, d))
        else:
            if kernel.family is Family.TOPHAT:
                radius = kernel.scale * rng.random(m) ** (1.0 / d)
            else:
                radius = rng.gamma(d, kernel.scale, size=m)
            if d == 1:
                direction = np.where(rng.random(m) < 0.5, -1.0, 1.0)[:, None]
            else:
                direction = rng.normal(size=(m, d))
                direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            draw = radius[:, None] * direction
        keep = np.sqrt(np.sum(draw * draw, axis=1)) <= kernel.cutoff
        k = int(keep.sum())
        out[filled:filled + k] = draw[keep]
        filled += k
    return out[0] if size is None else out


@dataclass(frozen=True)
class KernelPair:
    dispersal: KernelSpec
    competition: KernelSpec

    def __post_init__(self):
        if self.dispersal.dimension != self.competition.dimension:
            raise ValueError(
                f"kernel dimensions differ: {self.dispersal.dimension} vs {self.competition.dimension}"
            )

    @property
    def dimension(self) -> int:
        return self.dispersal.dimension

    @property
    def max_cutoff(self) -> float:
        return max(self.dispersal.cutoff, self.competition.cutoff)


@dataclass(frozen=True)
class Dispersal:
    """Outcome of :func:`classify_dispersal`.

    ``theta`` is the domination ratio for short dispersal, ``inf`` when the
    dispersal kernel vanishes identically, and ``None`` for long dispersal.
    """

    short: bool
    theta: Optional[float] = None

    @property
    def label(self) -> str:
        return "short" if self.short else "long"


def _tail_decides_long(plus: KernelSpec, minus: KernelSpec) -> bool:
    """True if a-(r)/a+(r) -> 0 along the support of a+."""
    fp, fm = plus.family, minus.family
    if fp is Family.TOPHAT:
        # finite range: a- must cover the whole ball
        return fm is Family.TOPHAT and minus.scale < plus.scale
    if fm is Family.TOPHAT:
        return True
    if fp is fm:
        return minus.scale < plus.scale
    # Gaussian decays faster than any exponential
    return fm is Family.GAUSSIAN


def classify_dispersal(pair: KernelPair) -> Dispersal:
    """Decide whether a- >= theta a+ everywhere for some theta > 0."""
    plus, minus = pair.dispersal, pair.competition
    if plus.is_zero:
        return Dispersal(True, math.inf)
    if minus.is_zero or _tail_decides_long(plus, minus):
        return Dispersal(False)
    scales = [k.scale for k in (plus, minus) if not k.is_zero]
    step = 1e-3 * max(scales)
    if plus.family is Family.TOPHAT:
        r_max = plus.scale
    else:
        r_max = max(plus.cutoff, minus.cutoff)
    r = np.append(np.arange(0.0, r_max, step), r_max)
    candidates = [r]
    if plus.family is Family.GAUSSIAN and minus.family is Family.EXPONENTIAL:
        # log ratio -r/lam + r^2/(2 sigma^2) is minimal at sigma^2/lam
        candidates.append(np.array([plus.scale**2 / minus.scale]))
    r = np.concatenate(candidates)
    ap = plus.radial(r)
    support = ap > 0
    with np.errstate(over="ignore"):  # tiny a+ tails overflow to inf; only the min matters
        ratio = minus.radial(r[support]) / ap[support]
    theta = float(ratio.min())
    if theta <= 0:
        return Dispersal(False)
    return Dispersal(True, theta)
