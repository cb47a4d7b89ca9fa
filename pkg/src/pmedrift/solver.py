"""Explicit conservative finite-volume scheme for u_t = Δu^m + ∇·(B u).

Face flux F = (u^m_right - u^m_left)/h + B_face * u_upwind, cell update
u += dt/h * (F_hi - F_lo) per axis. The transported velocity is -B, so the
upwind cell across a face is the right one when B_face > 0. Under the step
bound the update is a monotone map: positivity and comparison follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import DriftField, Field, Grid, InvalidParameter
from .norms import gradient

EPS = 1e-30
LIMITERS = ("none", "minmod")


class StabilityError(RuntimeError):
    pass


class SchemeFailure(RuntimeError):
    pass


class InvalidTestFunction(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    m: float = 1.0
    safety: float = 0.4
    limiter: str = "none"
    max_steps: int = 10_000_000
    n_out: int = 10
    dt_max: float = 1.0

    def __post_init__(self):
        if not self.m >= 1:
            raise InvalidParameter(f"m must be >= 1, got {self.m}")
        if not 0 < self.safety <= 1:
            raise InvalidParameter(f"safety must lie in (0, 1], got {self.safety}")
        if self.limiter not in LIMITERS:
            raise InvalidParameter(f"unknown limiter {self.limiter!r}")
        if self.n_out < 1:
            raise InvalidParameter("n_out must be >= 1")


@dataclass
class SolverState:
    grid: Grid
    u: np.ndarray
    t: float = 0.0
    steps: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != self.grid.shape:
            raise InvalidParameter("state shape does not match the grid")
        if self.u.min() < -1e-12:
            raise SchemeFailure(f"negative state (min {self.u.min():.3e})")

    @property
    def mass(self) -> float:
        """Exactly rounded total mass ∫u."""
        return total_mass(self.u, self.grid)

    @classmethod
    def from_field(cls, f: Field, level: int = -1) -> "SolverState":
        return cls(f.grid, np.array(f.values[level]), float(f.times[level]))


def total_mass(u: np.ndarray, grid: Grid) -> float:
    return math.fsum(np.ravel(u)) * grid.cell_volume


def _power(u: np.ndarray, m: float) -> np.ndarray:
    if m == 1:
        return u
    return np.maximum(u, 0.0) ** m


def stable_dt(u: np.ndarray, B: DriftField, cfg: SolverConfig, grid: Grid | None = None) -> float:
    """safety * min(h^2 / (2 d m max(u)^(m-1)), h / max|B|), capped at cfg.dt_max.

    max|B| is measured as the largest total outflow speed of a cell, which
    equals |B| for uniform drifts and guards divergent face patterns.
    """
    grid = B.grid if grid is None else grid
    h, d = grid.h, grid.d
    umax = float(np.max(u)) if np.size(u) else 0.0
    diff = 2 * d * cfg.m * (max(umax, 0.0) ** (cfg.m - 1) if cfg.m != 1 else 1.0)
    bmax = B.max_outflow_speed() * _drift_factor(cfg)
    dt = cfg.safety * min(h * h / (diff + EPS), h / (bmax + EPS))
    return min(dt, cfg.dt_max)


def _sl(ndim: int, axis: int, sl: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _drift_factor(cfg: SolverConfig) -> float:
    # the limited reconstruction halves the admissible transport step
    return 2.0 if cfg.limiter == "minmod" else 1.0


def _pad(u: np.ndarray, axis: int, bc: str) -> np.ndarray:
    """One ghost layer on each side of ``axis``."""
    first = u[_sl(u.ndim, axis, slice(0, 1))]
    last = u[_sl(u.ndim, axis, slice(-1, None))]
    if bc == "periodic":
        lo, hi = last, first
    elif bc == "no-flux":
        lo, hi = first, last
    else:
        lo = hi = np.zeros_like(first)
    return np.concatenate([lo, u, hi], axis=axis)


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def face_fluxes(u: np.ndarray, B: DriftField, cfg: SolverConfig, grid: Grid) -> list[np.ndarray]:
    """Total flux ∇u^m + B u on every face, one array per axis (n+1 faces)."""
    h = grid.h
    nd = grid.d
    um = _power(u, cfg.m)
    out = []
    for a in range(nd):
        up = _pad(u, a, grid.bc)
        ump = _pad(um, a, grid.bc)
        diff = np.diff(ump, axis=a) / h
        b = B.faces[a]
        if B.is_zero:
            out.append(diff)
            if grid.bc == "no-flux":
                diff[_sl(nd, a, 0)] = 0.0
                diff[_sl(nd, a, -1)] = 0.0
            continue
        lo = up[_sl(nd, a, slice(None, -1))]
        hi = up[_sl(nd, a, slice(1, None))]
        if cfg.limiter == "minmod":
            fwd = np.diff(_pad(up, a, grid.bc), axis=a)
            # slope index j belongs to cell j - 1 (cells -1 .. n)
            slope = _minmod(fwd[_sl(nd, a, slice(None, -1))], fwd[_sl(nd, a, slice(1, None))])
            lo = lo + 0.5 * slope[_sl(nd, a, slice(None, -1))]
            hi = hi - 0.5 * slope[_sl(nd, a, slice(1, None))]
        F = diff + b * np.where(b > 0, hi, lo)
        if grid.bc == "no-flux":
            F[_sl(nd, a, 0)] = 0.0
            F[_sl(nd, a, -1)] = 0.0
        out.append(F)
    return out


def max_step_allowed(u: np.ndarray, B: DriftField, cfg: SolverConfig, grid: Grid) -> float:
    """Largest dt keeping every cell's self-coefficient nonnegative."""
    h, d = grid.h, grid.d
    umax = max(float(np.max(u)), 0.0)
    dmax = cfg.m * umax ** (cfg.m - 1) if cfg.m != 1 else 1.0
    rate = 2 * d * dmax / (h * h) + _drift_factor(cfg) * B.max_outflow_speed() / h
    return math.inf if rate == 0 else 1.0 / rate


def step(state: SolverState, B: DriftField, cfg: SolverConfig, dt: float) -> SolverState:
    grid = state.grid
    if not dt > 0:
        raise InvalidParameter("dt must be positive")
    limit = max_step_allowed(state.u, B, cfg, grid)
    if dt > limit * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.3e} exceeds the monotone step bound {limit:.3e}")
    F = face_fluxes(state.u, B, cfg, grid)
    div = sum(np.diff(Fa, axis=a) for a, Fa in enumerate(F)) / grid.h
    u_new = state.u + dt * div
    if u_new.min() < -1e-12:
        raise SchemeFailure(f"negative value {u_new.min():.3e} after step")
    new = SolverState.__new__(SolverState)
    new.grid = grid
    new.u = u_new
    new.t = state.t + dt
    new.steps = state.steps + 1
    return new


@dataclass
class RunRecord:
    """Solution snapshots plus the per-step diagnostics of a run."""

    field: Field
    mass_trace: list[float] = field(default_factory=list)
    dt_trace: list[float] = field(default_factory=list)
    max_divergence: float = 0.0
    cap: float | None = None
    cap_events: int = 0
    min_value: float = 0.0  # smallest unclipped cell value seen over all steps

    def metadata(self) -> dict:
        return {
            "mass_trace": self.mass_trace,
            "min_value": self.min_value,
            "dt_trace_summary": {
                "n_steps": len(self.dt_trace),
                "min": min(self.dt_trace) if self.dt_trace else None,
                "max": max(self.dt_trace) if self.dt_trace else None,
            },
            "divergence_flag": self.max_divergence,
            "cap": self.cap,
            "cap_events": self.cap_events,
        }


def simulate(u0: Field | np.ndarray, B: DriftField, cfg: SolverConfig, T: float, t0: float = 0.0,
             dt_fixed: float | None = None, record_steps: bool = False) -> RunRecord:
    """Advance from ``u0`` over duration ``T`` and record ``cfg.n_out`` uniform snapshots.

    The output Field lives on the grid with ``dt = T / n_out`` and has
    ``n_out + 1`` levels (the initial state included). ``T = 0`` returns the
    initial state only.
    """
    grid = B.grid
    init = u0.values[-1] if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    if isinstance(u0, Field):
        t0 = float(u0.times[-1])
    state = SolverState(grid, np.array(init), t0)
    if T <= 0:
        return RunRecord(Field(grid, state.u[None], t0, "u"), [state.mass], [],
                         B.max_divergence(), B.cap, B.cap_events, float(state.u.min()))
    n_out = cfg.n_out
    out_dt = T / n_out
    snaps = [state.u.copy()]
    masses = [state.mass]
    dts: list[float] = []
    lowest = float(state.u.min())
    for j in range(1, n_out + 1):
        t_target = t0 + j * out_dt
        while state.t < t_target - 1e-14 * max(1.0, abs(t_target)):
            if state.steps >= cfg.max_steps:
                raise StabilityError("max_steps exceeded")
            dt = dt_fixed if dt_fixed is not None else stable_dt(state.u, B, cfg, grid)
            dt = min(dt, t_target - state.t)
            state = step(state, B, cfg, dt)
            lowest = min(lowest, float(state.u.min()))
            if record_steps:
                masses.append(state.mass)
            dts.append(dt)
        state.t = t_target
        snaps.append(state.u.copy())
        if not record_steps:
            masses.append(state.mass)
    out = Field(grid.with_dt(out_dt), np.maximum(np.stack(snaps), 0.0), t0, "u")
    return RunRecord(out, masses, dts, B.max_divergence(), B.cap, B.cap_events, lowest)


# -- closed-form reference solutions ---------------------------------------------


def heat_kernel(x, t: float, d: int = 1, mass: float = 1.0):
    """(4 pi t)^{-d/2} exp(-|x|^2 / 4t) for the unit-diffusivity heat equation."""
    r2 = np.asarray(x, dtype=float) ** 2 if d == 1 else x
    return mass * (4 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))


@dataclass(frozen=True)
class Barenblatt:
    """Source-type self-similar solution of u_t = Δu^m (m > 1).

    U(x, t) = t^{-a} (C - c |x|^2 t^{-2a/d})_+^{1/(m-1)},
    a = d / (d(m-1) + 2), c = a (m-1) / (2 m d).
    """

    m: float = 2.0
    d: int = 1
    C: float = 1.0

    @property
    def alpha(self) -> float:
        return self.d / (self.d * (self.m - 1) + 2)

    @property
    def c(self) -> float:
        return self.alpha * (self.m - 1) / (2 * self.m * self.d)

    def __call__(self, r, t: float):
        a = self.alpha
        xi2 = np.asarray(r, dtype=float) ** 2 * t ** (-2 * a / self.d)
        core = np.maximum(self.C - self.c * xi2, 0.0)
        return t ** (-a) * core ** (1.0 / (self.m - 1))

    def front(self, t: float) -> float:
        return math.sqrt(self.C / self.c) * t ** (self.alpha / self.d)


def support_radius(u: np.ndarray, grid: Grid, rel_threshold: float = 1e-3, center=0.0) -> float:
    """Largest cell-center distance where u exceeds rel_threshold * max u."""
    mask = u > rel_threshold * float(np.max(u))
    if not mask.any():
        return 0.0
    return float(grid.radius(center)[mask].max())


# -- weak formulation -------------------------------------------------------------


def weak_residual(u: Field, B: DriftField, phi: Field, m: float, collar: int = 1) -> float:
    """∫∫ u φ_t + ∫u(t_0)φ(t_0) - ∫u(T)φ(T) - ∫∫ (∇u^m + uB)·∇φ.

    Time integrals use the trapezoid rule over the field's levels and
    gradients are centered differences. ``phi`` must share u's levels and
    vanish on a ``collar`` of cells at the domain boundary. With φ(t_0) = 0
    the initial-time term drops and this is the usual weak identity.
    """
    g = u.grid
    if phi.values.shape != u.values.shape:
        raise InvalidTestFunction("test function must be sampled on the solution's levels")
    edge = np.zeros(g.shape, dtype=bool)
    for a in range(g.d):
        idx = [slice(None)] * g.d
        idx[a] = np.r_[0:collar, g.n_cells - collar : g.n_cells]
        edge[tuple(idx)] = True
    if np.any(np.abs(phi.values[:, edge]) > 0):
        raise InvalidTestFunction("test function does not vanish on the boundary collar")
    vol = g.cell_volume
    nt = u.n_levels
    w = np.full(nt, g.dt)
    if nt > 1:
        w[0] = w[-1] = 0.5 * g.dt
    axes = tuple(range(1, g.d + 1))
    end_terms = (np.sum(u.values[0] * phi.values[0]) - np.sum(u.values[-1] * phi.values[-1])) * vol
    if nt > 1:
        phi_t = np.gradient(phi.values, g.dt, axis=0)
        time_term = float(np.sum(w * np.sum(u.values * phi_t, axis=axes)) * vol)
    else:
        time_term = 0.0
    um = _power(u.values, m)
    gu = gradient(um, g)
    gphi = gradient(phi.values, g)
    bv = B.values if not B.is_static else np.broadcast_to(B.values, (nt, *B.values.shape[1:]))
    flux_dot = sum((gu[a] + u.values * bv[..., a]) * gphi[a] for a in range(g.d))
    flux_term = float(np.sum(w * np.sum(flux_dot, axis=axes)) * vol) if nt > 1 else float(np.sum(flux_dot) * vol)
    return float(time_term + end_terms - flux_term)


def bump(grid: Grid, center=0.0, radius: float = 0.5) -> np.ndarray:
    """C^1 bump (1 - |x-c|^2/R^2)^2_+ sampled at cell centers."""
    r = grid.radius(center)
    return np.where(r < radius, (1 - (r / radius) ** 2) ** 2, 0.0)
