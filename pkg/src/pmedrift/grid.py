"""Uniform space-time grids, sampled fields, regions and intrinsic cylinders.

Everything downstream works on a centered box [-L, L]^d split into n cells per
axis, with uniformly spaced time levels. A field's time level ``j`` represents
the slab of duration ``dt`` ending at ``t0 + j*dt``; regions therefore have
duration ``n_levels * dt`` and cylinders snap their depth to whole levels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BOUNDARY_CONDITIONS = ("periodic", "no-flux", "dirichlet")


class InvalidParameter(ValueError):
    pass


class InvalidRegion(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    d: int
    n_cells: int
    L: float
    dt: float = 1.0
    bc: str = "no-flux"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidParameter(f"d must be 1 or 2, got {self.d}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise InvalidParameter(f"n_cells must be an integer >= 4, got {self.n_cells}")
        if not self.L > 0:
            raise InvalidParameter("L must be positive")
        if not self.dt > 0:
            raise InvalidParameter("dt must be positive")
        if self.bc not in BOUNDARY_CONDITIONS:
            raise InvalidParameter(f"unknown boundary condition {self.bc!r}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n_cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_cells,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def centers_1d(self) -> np.ndarray:
        return -self.L + (np.arange(self.n_cells) + 0.5) * self.h

    def nodes_1d(self) -> np.ndarray:
        return -self.L + np.arange(self.n_cells + 1) * self.h

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinate arrays, one per axis, each of ``self.shape``."""
        c = self.centers_1d()
        return tuple(np.meshgrid(*([c] * self.d), indexing="ij"))

    def radius(self, center: Sequence[float] | float = 0.0) -> np.ndarray:
        """Distance of every cell center from ``center``."""
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.d,))
        r2 = sum((x - c) ** 2 for x, c in zip(self.mesh(), center))
        return np.sqrt(r2)

    def with_dt(self, dt: float) -> "Grid":
        return Grid(self.d, self.n_cells, self.L, dt, self.bc)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.d, self.n_cells * factor, self.L, self.dt, self.bc)

    def to_dict(self) -> dict:
        return {"d": self.d, "n_cells": self.n_cells, "L": self.L, "dt": self.dt, "bc": self.bc}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        return cls(
            d=int(data["d"]),
            n_cells=int(data["n_cells"]),
            L=float(data["L"]),
            dt=float(data.get("dt", 1.0)),
            bc=str(data.get("bc", "no-flux")),
        )

    @classmethod
    def from_json(cls, text: str) -> "Grid":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a scalar on ``grid`` at uniformly spaced time levels.

    ``values`` has shape ``(n_levels, *grid.shape)``; level ``j`` sits at time
    ``t0 + j * grid.dt``.
    """

    grid: Grid
    values: np.ndarray
    t0: float = 0.0
    tag: str = "u"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape == self.grid.shape:
            vals = vals[None]
        if vals.shape[1:] != self.grid.shape:
            raise InvalidParameter(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidParameter("field samples must be finite")
        if self.tag in ("u", "v") and vals.min() < -1e-12:
            raise InvalidParameter(f"{self.tag}-fields must be nonnegative (min {vals.min():.3e})")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_levels(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_levels) * self.grid.dt

    def level_of(self, t: float) -> int:
        j = int(round((t - self.t0) / self.grid.dt))
        if not 0 <= j < self.n_levels:
            raise InvalidRegion(f"time {t} lies outside the field's levels")
        return j

    def at(self, j: int) -> np.ndarray:
        return self.values[j]

    def map(self, fn, tag: str | None = None) -> "Field":
        return Field(self.grid, fn(self.values), self.t0, self.tag if tag is None else tag)

    @classmethod
    def from_function(cls, grid: Grid, fn, times: Sequence[float] | None = None, tag: str = "u") -> "Field":
        """Sample ``fn(*coords, t)`` (or ``fn(*coords)`` when ``times`` is None)."""
        coords = grid.mesh()
        if times is None:
            return cls(grid, np.asarray(fn(*coords), dtype=float)[None], 0.0, tag)
        times = np.asarray(times, dtype=float)
        vals = np.stack([np.broadcast_to(fn(*coords, t), grid.shape) for t in times])
        return cls(grid, vals, float(times[0]), tag)


@dataclass(frozen=True, eq=False)
class DriftField:
    """Vector field B sampled at cell centers and, for the solver, at faces.

    ``values`` has shape ``(n_levels, *grid.shape, d)`` with ``n_levels == 1``
    for time-independent drifts. ``faces[a]`` holds the axis-``a`` normal
    component on the ``n_cells + 1`` faces along that axis (shape
    ``grid.shape`` with axis ``a`` extended by one). For periodic grids the
    first and last face along an axis are the same physical face and carry
    identical values.
    """

    grid: Grid
    values: np.ndarray
    faces: tuple[np.ndarray, ...] | None = None
    cap: float | None = None
    cap_events: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape == (*self.grid.shape, self.grid.d):
            vals = vals[None]
        if vals.shape[1:] != (*self.grid.shape, self.grid.d):
            raise InvalidParameter(f"drift shape {vals.shape} does not match grid")
        if not np.all(np.isfinite(vals)):
            raise InvalidParameter("drift samples must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.faces is None:
            object.__setattr__(self, "faces", _faces_from_cells(self.grid, vals[0]))

    @property
    def magnitude(self) -> np.ndarray:
        """|B| per level and cell, shape ``(n_levels, *grid.shape)``."""
        return np.sqrt(np.sum(self.values**2, axis=-1))

    @property
    def is_zero(self) -> bool:
        cached = self.__dict__.get("_zero")
        if cached is None:
            cached = not any(np.any(f) for f in self.faces)
            object.__setattr__(self, "_zero", cached)
        return cached

    @property
    def is_static(self) -> bool:
        return self.values.shape[0] == 1

    def divergence(self) -> np.ndarray:
        """Discrete face-flux divergence per cell."""
        h = self.grid.h
        return sum(np.diff(f, axis=a) / h for a, f in enumerate(self.faces))

    def max_divergence(self) -> float:
        return float(np.max(np.abs(self.divergence())))

    def max_outflow_speed(self) -> float:
        """Largest total outward normal speed of any cell (sum over its faces)."""
        cached = self.__dict__.get("_outflow")
        if cached is not None:
            return cached
        out = np.zeros(self.grid.shape)
        for a, f in enumerate(self.faces):
            lo = np.take(f, np.arange(self.grid.n_cells), axis=a)
            hi = np.take(f, np.arange(1, self.grid.n_cells + 1), axis=a)
            # velocity of the transported quantity is -B
            out += np.maximum(lo, 0.0) + np.maximum(-hi, 0.0)
        speed = float(out.max())
        object.__setattr__(self, "_outflow", speed)
        return speed

    @classmethod
    def zeros(cls, grid: Grid) -> "DriftField":
        return cls(grid, np.zeros((*grid.shape, grid.d)))

    @classmethod
    def constant(cls, grid: Grid, b: Sequence[float]) -> "DriftField":
        b = np.broadcast_to(np.asarray(b, dtype=float), (grid.d,))
        return cls(grid, np.broadcast_to(b, (*grid.shape, grid.d)).copy())

    @classmethod
    def from_function(cls, grid: Grid, fn, cap: float | None = None) -> "DriftField":
        """Sample a static drift ``fn(*coords) -> sequence of d component arrays``.

        Cell values use cell centers, face values use face centers. Components
        are clamped to ``|B| <= cap`` when a cap is given; the number of clamped
        samples is recorded in ``cap_events``.
        """
        coords = grid.mesh()
        cells = np.stack([np.broadcast_to(c, grid.shape) for c in fn(*coords)], axis=-1).astype(float)
        events = 0
        if cap is not None:
            cells, events = _cap_vectors(cells, cap)
        faces = []
        c1 = grid.centers_1d()
        n1 = grid.nodes_1d()
        for a in range(grid.d):
            axes = [c1] * grid.d
            axes[a] = n1
            fc = np.meshgrid(*axes, indexing="ij")
            if grid.bc == "periodic":
                fc[a] = fc[a].copy()
                last = [slice(None)] * grid.d
                last[a] = -1
                fc[a][tuple(last)] = n1[0]
            comps = [np.broadcast_to(c, fc[0].shape) for c in fn(*fc)]
            vec = np.stack(comps, axis=-1).astype(float)
            if cap is not None:
                vec, ev = _cap_vectors(vec, cap)
                events += ev
            faces.append(np.ascontiguousarray(vec[..., a]))
        return cls(grid, cells, tuple(faces), cap, events)


def _cap_vectors(vec: np.ndarray, cap: float) -> tuple[np.ndarray, int]:
    mag = np.sqrt(np.sum(vec**2, axis=-1, keepdims=True))
    over = mag > cap
    scale = np.where(over, cap / np.where(mag > 0, mag, 1.0), 1.0)
    return vec * scale, int(np.count_nonzero(over))


def _faces_from_cells(grid: Grid, cells: np.ndarray) -> tuple[np.ndarray, ...]:
    """Face normals by averaging neighbouring cells (edge value at walls)."""
    faces = []
    for a in range(grid.d):
        comp = cells[..., a]
        mode = "wrap" if grid.bc == "periodic" else "edge"
        pad = [(0, 0)] * grid.d
        pad[a] = (1, 1)
        p = np.pad(comp, pad, mode=mode)
        lo = np.take(p, np.arange(grid.n_cells + 1), axis=a)
        hi = np.take(p, np.arange(1, grid.n_cells + 2), axis=a)
        faces.append(0.5 * (lo + hi))
    return tuple(faces)


@dataclass(frozen=True)
class Region:
    """Cell mask plus a half-open range of time levels ``[start, stop)``."""

    mask: np.ndarray
    start: int
    stop: int

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        if not m.any() or self.stop <= self.start:
            raise InvalidRegion("region is empty")
        if self.start < 0:
            raise InvalidRegion("region starts before the first time level")

    @property
    def n_levels(self) -> int:
        return self.stop - self.start

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    def levels(self) -> slice:
        return slice(self.start, self.stop)

    def volume(self, grid: Grid) -> float:
        return self.n_cells * grid.cell_volume

    def duration(self, grid: Grid) -> float:
        return self.n_levels * grid.dt

    def check_in(self, f: Field | DriftField) -> None:
        if self.mask.shape != f.grid.shape:
            raise InvalidRegion("region mask does not match the grid")
        n = f.values.shape[0]
        if self.stop > n:
            raise InvalidRegion("region extends past the last time level")

    def contains(self, other: "Region") -> bool:
        return (
            self.start <= other.start
            and other.stop <= self.stop
            and not np.any(other.mask & ~self.mask)
        )

    def intersect(self, other: "Region") -> "Region":
        return Region(self.mask & other.mask, max(self.start, other.start), min(self.stop, other.stop))

    def with_levels(self, start: int, stop: int) -> "Region":
        return Region(self.mask, start, stop)

    @classmethod
    def full(cls, f: Field | DriftField) -> "Region":
        return cls(np.ones(f.grid.shape, dtype=bool), 0, f.values.shape[0])

    @classmethod
    def box(cls, grid: Grid, lo: Sequence[float], hi: Sequence[float], start: int = 0, stop: int = 1) -> "Region":
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (grid.d,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (grid.d,))
        mask = np.ones(grid.shape, dtype=bool)
        for x, a, b in zip(grid.mesh(), lo, hi):
            mask &= (x >= a) & (x <= b)
        return cls(mask, start, stop)

    @classmethod
    def ball(cls, grid: Grid, center, rho: float, start: int = 0, stop: int = 1) -> "Region":
        return cls(grid.radius(center) < rho, start, stop)


@dataclass(frozen=True)
class Cylinder:
    """Intrinsic cylinder K_rho(x0) x (t0 - theta k^-beta rho^2, t0]."""

    center: tuple[float, ...]
    t0: float
    rho: float
    k: float
    theta: float
    m: float

    @property
    def beta(self) -> float:
        return (self.m - 1.0) / self.m

    @property
    def depth(self) -> float:
        return self.theta * self.k ** (-self.beta) * self.rho**2

    def realize(self, f: Field, strict: bool = True) -> Region:
        """Snap to the field's lattice: ball cells and the nearest whole number of levels.

        With ``strict=False`` the time window is clipped at the first level
        instead of raising.
        """
        top = f.level_of(self.t0)
        n = max(1, int(round(self.depth / f.grid.dt)))
        start = top - n + 1
        if start < 0:
            if strict:
                raise InvalidRegion("cylinder extends below the first time level")
            start = 0
        center = np.broadcast_to(np.asarray(self.center, dtype=float), (f.grid.d,))
        return Region.ball(f.grid, center, self.rho, start, top + 1)

    def realized_depth(self, f: Field) -> float:
        return max(1, int(round(self.depth / f.grid.dt))) * f.grid.dt

    def fits(self, f: Field) -> bool:
        """True when the ball and the time window lie inside the field's lattice."""
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (f.grid.d,))
        if np.any(np.abs(c) + self.rho > f.grid.L + 1e-12):
            return False
        try:
            self.realize(f)
        except InvalidRegion:
            return False
        return True


def intrinsic_cylinder(center, t0: float, k: float, rho: float, theta: float, m: float) -> Cylinder:
    """Build Q_{k,rho}(theta) with top at ``t0``; depth is theta * k^-beta * rho^2."""
    for name, val in (("k", k), ("rho", rho), ("theta", theta)):
        if not (val > 0 and math.isfinite(val)):
            raise InvalidParameter(f"{name} must be positive, got {val}")
    if not m >= 1:
        raise InvalidParameter(f"m must be >= 1, got {m}")
    center = tuple(float(c) for c in np.atleast_1d(np.asarray(center, dtype=float)))
    return Cylinder(center, float(t0), float(rho), float(k), float(theta), float(m))


@dataclass(frozen=True, eq=False)
class FieldView:
    """Samples of ``field`` restricted to ``region``."""

    field: Field
    region: Region

    @property
    def samples(self) -> np.ndarray:
        """Array of shape ``(n_levels, n_cells)`` in C order of the mask."""
        return self.field.values[self.region.levels()][:, self.region.mask]


def restrict(f: Field | FieldView, region: Region) -> FieldView:
    if isinstance(f, FieldView):
        if not f.region.contains(region):
            raise InvalidRegion("nested restriction must lie inside the current view")
        base = f.field
    else:
        base = f
    region.check_in(base)
    return FieldView(base, region)


def oscillation(f: Field | FieldView, region: Region | None = None) -> float:
    """Discrete essential oscillation: max minus min over the region."""
    view = f if region is None else restrict(f, region)
    if region is None and not isinstance(view, FieldView):
        view = FieldView(view, Region.full(view))
    s = view.samples
    if s.size == 0:
        raise InvalidRegion("empty region")
    return float(s.max() - s.min())


def extrema(f: Field, region: Region) -> tuple[float, float]:
    """(min, max) over the region."""
    s = restrict(f, region).samples
    return float(s.min()), float(s.max())
