"""Finite point configurations on a periodic box with a cell-list index."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np


@dataclass(frozen=True)
class Torus:
    dimension: int
    length: float

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"torus dimension must be 1, 2 or 3, got {self.dimension}")
        if not self.length > 0:
            raise ValueError(f"torus side must be positive, got {self.length}")

    @property
    def volume(self) -> float:
        return self.length**self.dimension

    def wrap(self, x: np.ndarray) -> np.ndarray:
        y = np.mod(x, self.length)
        # mod can round up to exactly L for tiny negative inputs
        return np.where(y >= self.length, 0.0, y)

    def displacement(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Minimum-image displacement x - y."""
        L = self.length
        dx = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return dx - L * np.round(dx / L)

    def distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dx = self.displacement(x, y)
        return np.sqrt(np.sum(dx * dx, axis=-1))

    def check_interaction_range(self, radius: float) -> None:
        if not self.length > 2 * radius:
            raise ValueError(
                f"torus side {self.length} must exceed twice the interaction range {radius}"
            )


_EMPTY_SLOTS = np.empty(0, dtype=np.int64)
_EMPTY_DIST = np.empty(0)


class PointConfig:
    """Points on a torus with stable integer handles and a cell list.

    Coordinates live in a contiguous slot array; removal swaps the last slot
    into the hole. Handles are never reused within one configuration, so
    callers can key per-point caches by handle (or mirror the slot moves
    reported by :meth:`remove`).
    """

    def __init__(self, torus: Torus, cell_side: float = 0.0, capacity: int = 64):
        self.torus = torus
        d = torus.dimension
        L = torus.length
        n_cells = int(math.floor(L / cell_side)) if cell_side > 0 else 1
        self.cells_per_axis = max(1, n_cells)
        self.cell_size = L / self.cells_per_axis
        self._pos = np.empty((max(capacity, 1), d))
        self._handles = np.empty(max(capacity, 1), dtype=np.int64)
        self._slot: dict[int, int] = {}
        # cell -> set of slots; slot -> cell
        self._cells: dict[int, set[int]] = {}
        self._cell_of: list[int] = []
        self._n = 0
        self._next_handle = 0
        self._strides = np.array([self.cells_per_axis**k for k in range(d)], dtype=np.int64)
        self._offsets = self._ring_offsets(1)
        self._offset_list = self._offsets.tolist()

    # -- basic container protocol ----------------------------------------
    def __len__(self) -> int:
        return self._n

    @property
    def positions(self) -> np.ndarray:
        """View of the coordinates, ordered by slot."""
        return self._pos[: self._n]

    @property
    def handles(self) -> np.ndarray:
        return self._handles[: self._n]

    def slot_of(self, handle: int) -> int:
        return self._slot[handle]

    def position(self, handle: int) -> np.ndarray:
        return self._pos[self._slot[handle]].copy()

    def __contains__(self, handle: int) -> bool:
        return handle in self._slot

    def copy(self) -> "PointConfig":
        new = PointConfig.__new__(PointConfig)
        new.torus = self.torus
        new.cells_per_axis = self.cells_per_axis
        new.cell_size = self.cell_size
        new._pos = self._pos.copy()
        new._handles = self._handles.copy()
        new._slot = dict(self._slot)
        new._cells = {k: set(v) for k, v in self._cells.items()}
        new._cell_of = list(self._cell_of)
        new._n = self._n
        new._next_handle = self._next_handle
        new._strides = self._strides
        new._offsets = self._offsets
        new._offset_list = self._offset_list
        return new

    # -- cell bookkeeping --------------------------------------------------
    def _cell_coords(self, x: np.ndarray) -> np.ndarray:
        c = np.floor(np.asarray(x) / self.cell_size).astype(np.int64)
        return np.mod(c, self.cells_per_axis)

    def cell_index(self, x: np.ndarray) -> int:
        n_c = self.cells_per_axis
        index = 0
        stride = 1
        for v in x:
            index += (int(math.floor(v / self.cell_size)) % n_c) * stride
            stride *= n_c
        return index

    def _ring_offsets(self, rings: int) -> np.ndarray:
        d = self.torus.dimension
        span = range(-rings, rings + 1)
        return np.array(list(itertools.product(span, repeat=d)), dtype=np.int64)

    def _candidate_cells(self, x, rings: int) -> Iterable[int]:
        n_c = self.cells_per_axis
        if 2 * rings + 1 >= n_c or (2 * rings + 1) ** self.torus.dimension > len(self._cells):
            return list(self._cells.keys())
        offsets = self._offset_list if rings == 1 else self._ring_offsets(rings).tolist()
        center = [int(math.floor(v / self.cell_size)) for v in x]
        out = []
        for off in offsets:
            index = 0
            stride = 1
            for c, o in zip(center, off):
                index += ((c + o) % n_c) * stride
                stride *= n_c
            out.append(index)
        return out

    # -- mutation -----------------------------------------------------------
    def insert(self, x) -> int:
        """Add a point (wrapped into the box) and return its new handle."""
        x = self.torus.wrap(np.asarray(x, dtype=float).reshape(self.torus.dimension))
        if self._n == len(self._pos):
            self._pos = np.concatenate([self._pos, np.empty_like(self._pos)])
            self._handles = np.concatenate([self._handles, np.empty_like(self._handles)])
        slot = self._n
        handle = self._next_handle
        self._next_handle += 1
        self._pos[slot] = x
        self._handles[slot] = handle
        self._slot[handle] = slot
        cell = self.cell_index(x)
        self._cells.setdefault(cell, set()).add(slot)
        if slot == len(self._cell_of):
            self._cell_of.append(cell)
        else:
            self._cell_of[slot] = cell
        self._n += 1
        return handle

    def remove(self, handle: int) -> tuple[int, int]:
        """Remove a point; returns ``(hole, moved_from)`` slot indices.

        The point formerly in slot ``moved_from`` now occupies ``hole``
        (equal when the removed point was last).
        """
        slot = self._slot.pop(handle)
        cell = self._cell_of[slot]
        members = self._cells[cell]
        members.discard(slot)
        if not members:
            del self._cells[cell]
        last = self._n - 1
        if slot != last:
            moved = int(self._handles[last])
            self._pos[slot] = self._pos[last]
            self._handles[slot] = moved
            self._slot[moved] = slot
            moved_cell = self._cell_of[last]
            moved_members = self._cells[moved_cell]
            moved_members.discard(last)
            moved_members.add(slot)
            self._cell_of[slot] = moved_cell
        self._cell_of.pop()
        self._n -= 1
        return slot, last

    def index_state(self) -> tuple:
        """Hashable summary of the index (for restore checks)."""
        return (
            self._n,
            self._pos[: self._n].tobytes(),
            tuple(self._handles[: self._n].tolist()),
            tuple(sorted((k, tuple(sorted(v))) for k, v in self._cells.items())),
            tuple(self._cell_of),
        )

    def check_index(self) -> None:
        """Raise AssertionError if any point sits in the wrong cell."""
        seen = 0
        for cell, members in self._cells.items():
            for slot in members:
                assert self.cell_index(self._pos[slot]) == cell, slot
                assert self._cell_of[slot] == cell, slot
                seen += 1
        assert seen == self._n == len(self._cell_of)
        for h, slot in self._slot.items():
            assert self._handles[slot] == h

    # -- queries --------------------------------------------------------------
    def neighbor_slots(self, x, radius: float, exclude_slot: int = -1) -> tuple[np.ndarray, np.ndarray]:
        """Slots and distances of points within ``radius`` of ``x``."""
        rings = max(1, math.ceil(radius / self.cell_size))
        cand: list[int] = []
        cells = self._cells
        for cell in self._candidate_cells(x, rings):
            members = cells.get(cell)
            if members:
                cand.extend(members)
        if not cand:
            return _EMPTY_SLOTS, _EMPTY_DIST
        slots = np.array(cand, dtype=np.int64)
        L = self.torus.length
        dx = self._pos[slots] - x
        dx -= L * np.round(dx / L)
        if dx.shape[1] == 1:
            dist = np.abs(dx[:, 0])
        else:
            dist = np.sqrt((dx * dx).sum(axis=1))
        keep = dist <= radius
        if exclude_slot >= 0:
            keep &= slots != exclude_slot
        return slots[keep], dist[keep]

    def neighbors_within(self, x, radius: float, exclude: Optional[int] = None) -> list[int]:
        """Handles of points within minimum-image distance ``radius`` of ``x``.

        ``exclude`` drops one handle (the query point itself when it is a member).
        """
        if radius > self.torus.length / 2:
            raise ValueError(f"query radius {radius} exceeds half the box side")
        x = np.asarray(x, dtype=float).reshape(self.torus.dimension)
        skip = self._slot[exclude] if exclude is not None else -1
        slots, _ = self.neighbor_slots(x, radius, skip)
        return sorted(int(h) for h in self._handles[slots])

    def window_count(self, lower, upper) -> int:
        """Number of points in the axis-aligned box [lower, upper)."""
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.torus.dimension,))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.torus.dimension,))
        if np.any(lower < 0) or np.any(upper > self.torus.length) or np.any(upper < lower):
            raise ValueError("window must lie inside the fundamental domain")
        p = self.positions
        inside = np.all((p >= lower) & (p < upper), axis=1)
        return int(inside.sum())

    # -- construction helpers ---------------------------------------------
    @classmethod
    def from_positions(cls, torus: Torus, positions, cell_side: float = 0.0) -> "PointConfig":
        pts = torus.wrap(np.asarray(positions, dtype=float).reshape(-1, torus.dimension))
        n = len(pts)
        cfg = cls(torus, cell_side, capacity=max(64, 2 * n))
        # bulk version of n inserts: handles 0..n-1 in slot order
        cfg._pos[:n] = pts
        cfg._handles[:n] = np.arange(n)
        cfg._slot = dict(zip(range(n), range(n)))
        cells = (np.mod(np.floor(pts / cfg.cell_size).astype(np.int64), cfg.cells_per_axis) @ cfg._strides).tolist()
        cfg._cell_of = cells
        for slot, cell in enumerate(cells):
            cfg._cells.setdefault(cell, set()).add(slot)
        cfg._n = n
        cfg._next_handle = n
        return cfg


def brute_force_neighbors(config: PointConfig, x, radius: float, exclude: Optional[int] = None) -> list[int]:
    """O(n) reference scan used to check the cell list."""
    dist = config.torus.distance(config.positions, np.asarray(x, dtype=float))
    hits = config.handles[dist <= radius]
    return sorted(int(h) for h in hits if h != exclude)


def sample_poisson(density: float, torus: Torus, rng: np.random.Generator, cell_side: float = 0.0) -> PointConfig:
    """Homogeneous Poisson configuration: Poisson(kappa * L^d) uniform points."""
    if density < 0:
        raise ValueError("density must be >= 0")
    n = rng.poisson(density * torus.volume)
    pts = torus.length * rng.random((n, torus.dimension))
    return PointConfig.from_positions(torus, torus.wrap(pts), cell_side)


def window_counts(config: PointConfig, window_side: float) -> np.ndarray:
    """Counts in the disjoint cubic windows of side ``window_side`` tiling the box.

    Only whole windows are used; leftover slabs at the upper edges are ignored.
    """
    L = config.torus.length
    d = config.torus.dimension
    per_axis = int(math.floor(L / window_side + 1e-12))
    if per_axis < 1:
        raise ValueError("window larger than the box")
    p = config.positions
    idx = np.floor(p / window_side).astype(np.int64)
    ok = np.all(idx < per_axis, axis=1)
    flat = idx[ok] @ np.array([per_axis**k for k in range(d)], dtype=np.int64)
    return np.bincount(flat, minlength=per_axis**d)


# -- snapshot files -------------------------------------------------------------
def write_snapshot(path, config: PointConfig, time: float = 0.0, seed: Optional[int] = None) -> None:
    """Plain-text snapshot: ``# key value`` header lines, then one row per point."""
    d = config.torus.dimension
    lines = [
        f"# d {d}",
        f"# L {config.torus.length:.17g}",
        f"# count {len(config)}",
        f"# time {time:.17g}",
        f"# seed {'' if seed is None else seed}",
    ]
    for x in config.positions:
        lines.append(" ".join(f"{v:.17g}" for v in x))
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path, cell_side: float = 0.0) -> tuple[PointConfig, dict]:
    header: dict = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            header[key] = value.strip()
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    d = int(header["d"])
    torus = Torus(d, float(header["L"]))
    meta = {
        "time": float(header["time"]),
        "seed": int(header["seed"]) if header.get("seed") else None,
        "count": int(header["count"]),
    }
    if meta["count"] != len(rows):
        raise ValueError(f"snapshot header says {meta['count']} points, found {len(rows)}")
    pts = np.array(rows, dtype=float).reshape(-1, d)
    return PointConfig.from_positions(torus, pts, cell_side), meta
