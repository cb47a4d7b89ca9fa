"""Level-set diagnostics: truncations, energy inequalities, iteration and oscillation decay.

Every inequality is evaluated as a gap: both sides are computed by grid
quadrature with the abstract constant left out, and the smallest constant
that makes the inequality hold on the data is reported as ``minimal_C``.

All estimates act on the pressure-like variable ``v = u^m``; convert solver
output with :func:`pressure_variable` first. Extremes ``mu_plus`` and
``mu_minus`` are discrete max/min over the realized cylinder unless an upper
(lower) bound is passed explicitly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .grid import (
    Cylinder,
    DriftField,
    Field,
    Grid,
    InvalidParameter,
    InvalidRegion,
    Region,
    intrinsic_cylinder,
)
from .norms import ExponentSpec, ModulusProfile, drift_norm, gradient, mixed_norm

SIGNS = ("plus", "minus")
DIVFREE_TOL = 1e-10


class InvalidCutoff(ValueError):
    pass


class PreconditionViolation(ValueError):
    pass


def pressure_variable(u: Field, m: float) -> Field:
    """v = u^m as a field tagged ``v``."""
    return u.map(lambda a: np.power(np.maximum(a, 0.0), m), tag="v")


def _region_of(v: Field, cyl: Cylinder | Region) -> Region:
    region = cyl.realize(v) if isinstance(cyl, Cylinder) else cyl
    region.check_in(v)
    return region


def _check_drift(v: Field, B: DriftField) -> None:
    if B.grid.shape != v.grid.shape or not math.isclose(B.grid.h, v.grid.h):
        raise InvalidParameter("drift and field live on different spatial grids")


def _check_sign(sign: str) -> None:
    if sign not in SIGNS:
        raise InvalidParameter(f"sign must be one of {SIGNS}")


# -- truncations and level sets ------------------------------------------------


@dataclass(frozen=True, eq=False)
class Truncation:
    """v_plus = (v - mu_plus + k)_+ or v_minus = (v - mu_minus - k)_- on a region."""

    region: Region
    mu_plus: float
    mu_minus: float
    k: float
    sign: str
    samples: np.ndarray

    @property
    def level(self) -> float:
        """Threshold value of v at which the truncation switches on."""
        return self.mu_plus - self.k if self.sign == "plus" else self.mu_minus + self.k


def _extremes(v: Field, region: Region, mu_plus: float | None, mu_minus: float | None):
    s = v.values[region.levels()][:, region.mask]
    lo, hi = float(s.min()), float(s.max())
    if mu_plus is None:
        mu_plus = hi
    elif mu_plus < hi - 1e-12 * max(1.0, abs(hi)):
        raise InvalidParameter("mu_plus must bound v from above on the region")
    if mu_minus is None:
        mu_minus = lo
    elif mu_minus > lo + 1e-12 * max(1.0, abs(lo)):
        raise InvalidParameter("mu_minus must bound v from below on the region")
    return float(mu_plus), float(mu_minus)


def _truncate_values(values: np.ndarray, mu_plus: float, mu_minus: float, k: float, sign: str) -> np.ndarray:
    if sign == "plus":
        return np.clip(values - mu_plus + k, 0.0, k)
    return np.clip(mu_minus + k - values, 0.0, k)


def truncate(v: Field, cyl: Cylinder | Region, k: float, sign: str = "plus",
             mu_plus: float | None = None, mu_minus: float | None = None) -> Truncation:
    _check_sign(sign)
    if not k > 0:
        raise InvalidParameter("k must be positive")
    region = _region_of(v, cyl)
    mp, mm = _extremes(v, region, mu_plus, mu_minus)
    s = v.values[region.levels()][:, region.mask]
    return Truncation(region, mp, mm, float(k), sign, _truncate_values(s, mp, mm, k, sign))


def level_set_fraction(v: Field, cyl: Cylinder | Region, k: float, sign: str = "plus",
                       per_time: bool = False, mu_plus: float | None = None,
                       mu_minus: float | None = None):
    """|A^{+-}_{k,rho}| / |Q_rho|, or the per-level spatial fractions."""
    tr = truncate(v, cyl, k, sign, mu_plus, mu_minus)
    hits = tr.samples > 0
    if per_time:
        return hits.mean(axis=1)
    return float(hits.mean())


# -- cutoffs -----------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """Radial piecewise-linear ramp, optionally times a linear ramp in time.

    zeta(x, t) = clip((rho - |x - x0|)/width, 0, 1) * clip((t - t_bottom)/time_width, 0, 1)

    With ``time_width=None`` the cutoff is time-independent. The spatial
    factor vanishes on |x - x0| >= rho; the time factor vanishes at the
    cylinder's bottom time.
    """

    center: tuple[float, ...]
    rho: float
    width: float
    time_width: float | None = None

    def __post_init__(self):
        if not (self.width > 0 and self.width <= self.rho):
            raise InvalidCutoff("ramp width must lie in (0, rho]")
        if self.time_width is not None and not self.time_width > 0:
            raise InvalidCutoff("time ramp width must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @classmethod
    def for_cylinder(cls, cyl: Cylinder, width_fraction: float = 0.5,
                     time_fraction: float | None = None) -> "Cutoff":
        tw = None if time_fraction is None else time_fraction * cyl.depth
        return cls(cyl.center, cyl.rho, width_fraction * cyl.rho, tw)

    @property
    def time_dependent(self) -> bool:
        return self.time_width is not None

    def _dist(self, grid: Grid) -> np.ndarray:
        return grid.radius(np.asarray(self.center))

    def spatial(self, grid: Grid) -> np.ndarray:
        return np.clip((self.rho - self._dist(grid)) / self.width, 0.0, 1.0)

    def spatial_gradient_sq(self, grid: Grid) -> np.ndarray:
        """|grad zeta_x|^2: 1/width^2 inside the ramp, 0 elsewhere."""
        r = self._dist(grid)
        ramp = (r > self.rho - self.width) & (r < self.rho)
        return np.where(ramp, 1.0 / self.width**2, 0.0)

    def temporal(self, times: np.ndarray, t_bottom: float) -> tuple[np.ndarray, np.ndarray]:
        """(zeta_t factor, its time derivative) at the given times."""
        times = np.asarray(times, dtype=float)
        if self.time_width is None:
            return np.ones_like(times), np.zeros_like(times)
        s = (times - t_bottom) / self.time_width
        val = np.clip(s, 0.0, 1.0)
        der = np.where((s > 0) & (s < 1), 1.0 / self.time_width, 0.0)
        return val, der

    def check_against(self, center, rho: float) -> None:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if c.shape != np.shape(self.center) or not np.allclose(c, self.center, atol=1e-12):
            raise InvalidCutoff("cutoff must be centred on the cylinder")
        if self.rho > rho * (1 + 1e-12):
            raise InvalidCutoff("cutoff support exceeds the cylinder ball")


@dataclass(frozen=True, eq=False)
class _Sampled:
    """Cutoff and truncation sampled on the full spatial grid of a region's levels."""

    zeta: np.ndarray
    zeta_t: np.ndarray
    grad_zeta_sq: np.ndarray
    w: np.ndarray
    grad_w: list
    times: np.ndarray


def _level_times(v: Field, region: Region) -> np.ndarray:
    return v.times[region.levels()]


def _sample(v: Field, region: Region, cutoff: Cutoff, mp: float, mm: float, k: float, sign: str) -> _Sampled:
    g = v.grid
    times = _level_times(v, region)
    t_bottom = times[0] - g.dt
    zx = cutoff.spatial(g)
    ft, dft = cutoff.temporal(times, t_bottom)
    shape = (len(times),) + (1,) * g.d
    zeta = ft.reshape(shape) * zx
    zeta_t = dft.reshape(shape) * zx
    grad_sq = (ft.reshape(shape) ** 2) * cutoff.spatial_gradient_sq(g)
    w = _truncate_values(v.values[region.levels()], mp, mm, k, sign)
    return _Sampled(zeta, zeta_t, grad_sq, w, gradient(w, g), times)


# -- energy reports ---------------------------------------------------------------


@dataclass
class EnergyReport:
    """Both sides of an energy inequality with the abstract constant removed."""

    kind: str
    lhs_terms: dict
    rhs_terms: dict
    lhs: float
    rhs: float
    minimal_C: float
    parameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


def _minimal_C(lhs: float, rhs: float) -> float:
    if lhs <= 0:
        return 0.0
    if rhs <= 0:
        return math.inf
    return lhs / rhs


def _weighted(weight: float, integral: float) -> float:
    """weight * integral, treating 0 * inf as 0 (an empty integral needs no weight)."""
    return 0.0 if integral == 0 else weight * integral


def _report(kind: str, lhs_terms: dict, rhs_terms: dict, params: dict) -> EnergyReport:
    for name, val in {**lhs_terms, **rhs_terms}.items():
        if val < 0 or math.isnan(val):
            raise ArithmeticError(f"energy component {name} is {val}")
    lhs = float(sum(lhs_terms.values()))
    rhs = float(sum(rhs_terms.values()))
    return EnergyReport(kind, {k: float(x) for k, x in lhs_terms.items()},
                        {k: float(x) for k, x in rhs_terms.items()}, lhs, rhs, _minimal_C(lhs, rhs), params)


def _level_measure_integral(w_region: np.ndarray, grid: Grid, spec: ExponentSpec) -> float:
    """[ int A(t)^{q1/q2} dt ]^{2(1+kappa)/q1} with A(t) = |{w(t) > 0}|."""
    meas = np.count_nonzero(w_region > 0, axis=1) * grid.cell_volume
    inner = float(np.sum(meas ** (spec.q1 / spec.q2)) * grid.dt)
    return inner ** (2.0 * (1.0 + spec.kappa) / spec.q1)


def _prepare(v: Field, cyl: Cylinder | Region, k: float, cutoff: Cutoff, sign: str,
             mu_plus: float | None, mu_minus: float | None):
    _check_sign(sign)
    if not k > 0:
        raise InvalidParameter("k must be positive")
    if isinstance(cyl, Cylinder):
        cutoff.check_against(cyl.center, cyl.rho)
    region = _region_of(v, cyl)
    mp, mm = _extremes(v, region, mu_plus, mu_minus)
    return region, mp, mm


def _common_integrals(v: Field, region: Region, cutoff: Cutoff, mp: float, mm: float, k: float, sign: str):
    g = v.grid
    s = _sample(v, region, cutoff, mp, mm, k, sign)
    mask = region.mask
    dV = g.cell_volume
    zeta, w = s.zeta, s.w
    # grad(w zeta) = zeta grad w + w grad zeta; the cutoff gradient is radial
    r = g.radius(np.asarray(cutoff.center))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = [np.where(r > 0, (x - c) / np.where(r > 0, r, 1.0), 0.0)
                for x, c in zip(g.mesh(), cutoff.center)]
    grad_zeta_mag = np.sqrt(s.grad_zeta_sq)
    gp_sq = np.zeros_like(w)
    for a in range(g.d):
        comp = zeta * s.grad_w[a] - w * grad_zeta_mag * unit[a]
        gp_sq += comp**2
    sup_term = float(np.max(np.sum((w**2 * zeta**2)[:, mask], axis=1)) * dV)
    grad_term = float(np.sum(gp_sq[:, mask]) * dV * g.dt)
    return s, sup_term, grad_term


def energy_gap(v: Field, B: DriftField, cyl: Cylinder | Region, k: float, cutoff: Cutoff,
               spec: ExponentSpec, sign: str = "plus", mu_plus: float | None = None,
               mu_minus: float | None = None) -> EnergyReport:
    """Local energy inequality for v_+ (sign="plus") or v_- (sign="minus").

    plus:  mu+^{-b} sup_t int v+^2 z^2 + iint |grad(v+ z)|^2
           vs (mu+ - k)^{-b} iint v+^2 |z z_t| + iint v+^2 |grad z|^2
              + mu+^{2/m} ||B||^2 [int A+(t)^{q1/q2} dt]^{2(1+kappa)/q1}
    minus: (mu- + k)^{-b} sup_t int v-^2 z^2 + iint |grad(v- z)|^2
           vs (mu- + k)^{-b} k iint v- |z z_t| + iint v-^2 |grad z|^2
              + (mu- + k)^{2/m} ||B||^2 [int A-(t)^{q1/q2} dt]^{2(1+kappa)/q1}
    with b = (m-1)/m taken from ``spec.m``.
    """
    _check_drift(v, B)
    region, mp, mm = _prepare(v, cyl, k, cutoff, sign, mu_plus, mu_minus)
    g = v.grid
    beta, m = spec.beta, spec.m
    s, sup_term, grad_term = _common_integrals(v, region, cutoff, mp, mm, k, sign)
    mask, dV, dt = region.mask, g.cell_volume, g.dt
    w = s.w[:, mask]
    zz_t = np.abs(s.zeta * s.zeta_t)[:, mask]
    gz = s.grad_zeta_sq[:, mask]
    bnorm = drift_norm(B, region, spec, v.grid)
    levels = _level_measure_integral(w, g, spec)
    if sign == "plus":
        lhs_weight = mp ** (-beta) if beta else 1.0
        time_int = float(np.sum(w**2 * zz_t) * dV * dt)
        time_term = _weighted((mp - k) ** (-beta) if beta else 1.0, time_int)
        drift_term = _weighted(mp ** (2.0 / m) * bnorm**2, levels)
    else:
        lhs_weight = (mm + k) ** (-beta) if beta else 1.0
        time_int = float(np.sum(w * zz_t) * dV * dt)
        time_term = _weighted(lhs_weight * k, time_int)
        drift_term = _weighted((mm + k) ** (2.0 / m) * bnorm**2, levels)
    space_term = float(np.sum(w**2 * gz) * dV * dt)
    return _report(
        f"energy-{sign}",
        {"sup": _weighted(lhs_weight, sup_term), "gradient": grad_term},
        {"time_cutoff": time_term, "space_cutoff": space_term, "drift": drift_term},
        {"k": k, "mu_plus": mp, "mu_minus": mm, "drift_norm": bnorm, "spec": spec.to_dict()},
    )


def energy_gap_critical(v: Field, B: DriftField, cyl: Cylinder | Region, k: float, cutoff: Cutoff,
                        spec: ExponentSpec, mu_plus: float | None = None) -> EnergyReport:
    """Energy inequality for divergence-free drifts (plus truncation).

    RHS: k^2 (mu+ - k)^{-b} iint_{v+>0} |z z_t| + k^2 iint_{v+>0} |grad z|^2
         + (mu+ - k)^{-2b} ||B||^2 ||v+ z||^2_{L^{q1}_t L^{q2}_x}
    """
    _check_drift(v, B)
    scale = float(np.abs(B.values).max()) if B.values.size else 0.0
    if B.max_divergence() > DIVFREE_TOL * max(scale, 1e-300) and scale > 0:
        raise PreconditionViolation("drift is not discretely divergence-free")
    region, mp, mm = _prepare(v, cyl, k, cutoff, "plus", mu_plus, None)
    g = v.grid
    beta = spec.beta
    s, sup_term, grad_term = _common_integrals(v, region, cutoff, mp, mm, k, "plus")
    mask, dV, dt = region.mask, g.cell_volume, g.dt
    w = s.w[:, mask]
    on = w > 0
    zz_t = np.abs(s.zeta * s.zeta_t)[:, mask]
    gz = s.grad_zeta_sq[:, mask]
    gap_weight = (mp - k) ** (-beta) if beta else 1.0
    time_int = float(np.sum(np.where(on, zz_t, 0.0)) * dV * dt)
    space_int = float(np.sum(np.where(on, gz, 0.0)) * dV * dt)
    bnorm = drift_norm(B, region, spec, v.grid)
    wz = w * s.zeta[:, mask]
    wz_norm = mixed_norm(wz, spec.q1, spec.q2, grid=g) if wz.size else 0.0
    drift_term = _weighted(gap_weight**2 * bnorm**2, wz_norm**2)
    lhs_weight = mp ** (-beta) if beta else 1.0
    return _report(
        "energy-critical",
        {"sup": _weighted(lhs_weight, sup_term), "gradient": grad_term},
        {"time_cutoff": _weighted(k * k * gap_weight, time_int), "space_cutoff": k * k * space_int,
         "drift": drift_term},
        {"k": k, "mu_plus": mp, "mu_minus": mm, "drift_norm": bnorm, "divergence": B.max_divergence(),
         "spec": spec.to_dict()},
    )


# -- logarithmic estimate ----------------------------------------------------------


def log_psi(v_value, delta: float, k: float, mu_plus: float):
    """ln^+ [ k / ((1+delta)k - (v - mu_plus + k)_+) ], bounded by ln(1/delta)."""
    if not 0 < delta <= 0.5:
        raise InvalidParameter("delta must lie in (0, 1/2]")
    if not k > 0:
        raise InvalidParameter("k must be positive")
    v = np.asarray(v_value, dtype=float)
    if np.any(v > mu_plus + 1e-12 * max(1.0, abs(mu_plus))):
        raise InvalidParameter("log_psi needs v <= mu_plus")
    w = np.clip(v - mu_plus + k, 0.0, k)
    out = np.maximum(np.log(k / ((1.0 + delta) * k - w)), 0.0)
    return float(out) if out.ndim == 0 else out


def log_energy_gap(v: Field, B: DriftField, center, rho: float, t_start: float, t_end: float,
                   delta: float, k: float, cutoff: Cutoff, spec: ExponentSpec,
                   mu_plus: float | None = None) -> EnergyReport:
    """Logarithmic estimate on K_rho(center) x (t_start, t_end].

    LHS: int Psi^2 z^2 at t_end minus the same at t_start (may be negative,
    in which case minimal_C is 0).
    RHS: mu+^b iint Psi |grad z|^2
         + ln(1/delta) (mu+^{1/m}/(delta k) + mu+^{1+1/m}/(delta^2 k^2)) ||B||^2 [int A+(t)^{q1/q2}]^{2(1+kappa)/q1}
    """
    _check_drift(v, B)
    if cutoff.time_dependent:
        raise InvalidCutoff("the logarithmic estimate needs a time-independent cutoff")
    cutoff.check_against(center, rho)
    if not t_end > t_start:
        raise InvalidParameter("t_end must exceed t_start")
    j0, j1 = v.level_of(t_start), v.level_of(t_end)
    if j1 <= j0:
        raise InvalidRegion("time window covers no level")
    c = np.broadcast_to(np.asarray(center, dtype=float), (v.grid.d,))
    region = Region.ball(v.grid, c, rho, j0 + 1, j1 + 1)
    region.check_in(v)
    window = Region.ball(v.grid, c, rho, j0, j1 + 1)
    mp, _ = _extremes(v, window, mu_plus, None)
    if not k <= mp:
        raise InvalidParameter("k must not exceed mu_plus")
    g = v.grid
    beta, m = spec.beta, spec.m
    dV = g.cell_volume
    zx = cutoff.spatial(g)[region.mask]
    gz = cutoff.spatial_gradient_sq(g)[region.mask]

    def endpoint(j):
        psi = log_psi(v.values[j][region.mask], delta, k, mp)
        return float(np.sum(psi**2 * zx**2) * dV)

    lhs = endpoint(j1) - endpoint(j0)
    psi_all = log_psi(v.values[region.levels()][:, region.mask], delta, k, mp)
    grad_term = _weighted(mp**beta, float(np.sum(psi_all * gz) * dV * g.dt))
    w = np.clip(v.values[region.levels()][:, region.mask] - mp + k, 0.0, k)
    bnorm = drift_norm(B, region, spec, v.grid)
    levels = _level_measure_integral(w, g, spec)
    weight = math.log(1.0 / delta) * (mp ** (1.0 / m) / (delta * k) + mp ** (1.0 + 1.0 / m) / (delta**2 * k**2))
    drift_term = _weighted(weight * bnorm**2, levels)
    rhs_terms = {"space_cutoff": grad_term, "drift": drift_term}
    rhs = float(sum(rhs_terms.values()))
    return EnergyReport(
        "log",
        {"endpoint_difference": float(lhs)},
        {k_: float(x) for k_, x in rhs_terms.items()},
        float(lhs),
        rhs,
        _minimal_C(lhs, rhs),
        {"k": k, "delta": delta, "mu_plus": mp, "drift_norm": bnorm, "spec": spec.to_dict()},
    )


# -- isoperimetric inequality -------------------------------------------------------


def isoperimetric_gap(v: Field | np.ndarray, center, rho: float, k: float, l: float,
                      grid: Grid | None = None) -> dict:
    """(l-k)|{v>l}| against rho^{d+1}/|{v<=k}| * int_{k<v<l} |Dv| on K_rho."""
    if not l > k:
        raise InvalidParameter("need k < l")
    if isinstance(v, Field):
        grid, vals = v.grid, v.values[-1]
    else:
        if grid is None:
            raise InvalidParameter("raw samples need a grid")
        vals = np.asarray(v, dtype=float)
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    ball = grid.radius(c) < rho
    dV = grid.cell_volume
    low = np.count_nonzero(ball & (vals <= k)) * dV
    if low == 0:
        raise PreconditionViolation("|K_rho ∩ {v <= k}| is zero")
    high = np.count_nonzero(ball & (vals > l)) * dV
    grads = gradient(vals[None], grid)
    dv = np.sqrt(sum(gr[0] ** 2 for gr in grads))
    band = ball & (vals > k) & (vals < l)
    grad_mass = float(np.sum(dv[band]) * dV)
    lhs = (l - k) * high
    rhs = rho ** (grid.d + 1) / low * grad_mass
    gamma = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return {"lhs": float(lhs), "rhs_without_gamma": float(rhs), "empirical_gamma": float(gamma)}


# -- iteration lemma -------------------------------------------------------------


@dataclass(frozen=True)
class IterationParams:
    C: float
    b: float
    kappa: float
    alpha: float
    Y0: float = 0.0
    Z0: float = 0.0

    def __post_init__(self):
        if not (self.C > 1 and self.b > 1):
            raise InvalidParameter("need C, b > 1")
        if not (self.kappa > 0 and self.alpha > 0):
            raise InvalidParameter("need kappa, alpha > 0")
        if self.Y0 < 0 or self.Z0 < 0:
            raise InvalidParameter("initial values must be nonnegative")

    @property
    def sigma(self) -> float:
        return min(self.kappa, self.alpha)

    @property
    def threshold(self) -> float:
        """(2C)^{-(1+kappa)/sigma} b^{-(1+kappa)/sigma^2}."""
        s = self.sigma
        return (2 * self.C) ** (-(1 + self.kappa) / s) * self.b ** (-(1 + self.kappa) / s**2)

    def at_threshold(self, share: float = 0.5) -> "IterationParams":
        """Same constants with Y0 + Z0^{1+kappa} equal to the threshold."""
        t = self.threshold
        return IterationParams(self.C, self.b, self.kappa, self.alpha, share * t,
                               ((1 - share) * t) ** (1.0 / (1 + self.kappa)))


@dataclass
class IterationResult:
    Y: list
    Z: list
    converged: bool
    diverged: bool
    threshold_value: float
    initial_excess: float
    steps: int

    def to_dict(self) -> dict:
        return asdict(self)


def iterate_lemma(params: IterationParams, n_max: int = 10_000, tol: float = 1e-12) -> IterationResult:
    """Run the recursion at equality until both sequences drop below ``tol``."""
    C, b, ka, al = params.C, params.b, params.kappa, params.alpha
    Y, Z = [params.Y0], [params.Z0]
    converged = params.Y0 < tol and params.Z0 < tol
    diverged = False
    n = 0
    while not converged and n < n_max:
        y, z = Y[-1], Z[-1]
        try:
            cb = C * b**n
            y_next = cb * (y ** (1 + al) + z ** (1 + ka) * y**al)
            z_next = cb * (y + z ** (1 + ka))
        except OverflowError:
            y_next = z_next = math.inf
        Y.append(y_next)
        Z.append(z_next)
        n += 1
        if not (math.isfinite(y_next) and math.isfinite(z_next)):
            diverged = True
            break
        converged = y_next < tol and z_next < tol
    excess = (params.Y0 + params.Z0 ** (1 + ka)) / params.threshold
    return IterationResult(Y, Z, converged, diverged, params.threshold, excess, n)


# -- gate and oscillation traces -------------------------------------------------


def gate_exponent(spec: ExponentSpec) -> float:
    """gamma = 2 + beta * 2(1+kappa)/q1."""
    return 2.0 + spec.beta * 2.0 * (1.0 + spec.kappa) / spec.q1


def gate_value(k: float, rho: float, spec: ExponentSpec) -> float:
    """k^{-gamma} rho^{d kappa}."""
    if not (k > 0 and rho > 0):
        raise InvalidParameter("k and rho must be positive")
    try:
        return k ** (-gate_exponent(spec)) * rho ** (spec.d * spec.kappa)
    except OverflowError:  # k at a tiny floor
        return math.inf


def short_circuit_constant(delta_star: float, spec: ExponentSpec) -> float:
    """c with gate(k/2, rho/4) > delta*^2  =>  k < c rho^{d kappa / gamma}."""
    gam = gate_exponent(spec)
    return 2.0 * 4.0 ** (-spec.d * spec.kappa / gam) * delta_star ** (-2.0 / gam)


def short_circuit_holds(k: float, rho: float, delta_star: float, spec: ExponentSpec) -> bool:
    """True unless the gate fires and the bound k <= c rho^{d kappa/gamma} fails."""
    if k <= 0:
        return True
    if gate_value(k / 2, rho / 4, spec) <= delta_star**2:
        return True
    bound = short_circuit_constant(delta_star, spec) * rho ** (spec.d * spec.kappa / gate_exponent(spec))
    return k <= bound * (1 + 1e-12)


@dataclass
class OscRecord:
    n: int
    radius: float
    k: float
    osc: float
    gate: float
    branch: str
    levels: tuple[int, int]
    n_cells: int
    mu_minus: float
    mu_plus: float
    short_circuit_ok: bool


@dataclass
class OscTrace:
    records: list = field(default_factory=list)
    truncated: bool = False
    reason: str = ""
    center: tuple = ()
    lam: float = 0.5
    delta_star: float = 0.5
    nu0: float = 0.1

    def radii(self) -> np.ndarray:
        return np.array([r.radius for r in self.records])

    def oscillations(self) -> np.ndarray:
        return np.array([r.osc for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["n", "radius", "osc", "gate", "branch"])
        for r in self.records:
            wr.writerow([r.n, format(r.radius, ".17g"), format(r.osc, ".17g"), format(r.gate, ".17g"), r.branch])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "truncated": self.truncated,
            "reason": self.reason,
            "center": list(self.center),
            "lambda": self.lam,
            "delta_star": self.delta_star,
            "nu0": self.nu0,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_json_default)


def _branch(samples: np.ndarray, k: float, rho: float, spec: ExponentSpec, delta_star: float, nu0: float) -> str:
    if gate_value(k / 2, rho / 4, spec) > delta_star**2:
        return "gate"
    lo = float(samples.min())
    if lo > k / 4:
        return "mu_minus"
    frac = float(np.mean(samples < lo + k / 2))
    return "first-alt" if frac <= nu0 else "second-alt"


def self_consistent_k(v: Field, center, rho: float, theta: float, m: float,
                      t_top: float | None = None, iterations: int = 30) -> float:
    """Fixed point of k -> osc over Q_{k,rho}(theta), started from the field's range.

    Raises InvalidRegion when an intermediate cylinder leaves the domain.
    """
    t_top = float(v.times[-1]) if t_top is None else float(t_top)
    k = float(np.ptp(v.values))
    if k == 0:
        return 0.0
    floor = 1e-12 * k
    for _ in range(iterations):
        cyl = intrinsic_cylinder(center, t_top, k, rho, theta, m)
        if not cyl.fits(v):
            raise InvalidRegion("cylinder leaves the sampled domain")
        k_new = max(float(np.ptp(v.values[cyl.realize(v).levels()][:, cyl.realize(v).mask])), floor)
        if abs(k_new - k) <= 1e-14 * k:
            break
        k = k_new
    return k_new


def osc_trace(v: Field, center, r0: float, k0: float | None, lam: float, n: int, spec: ExponentSpec,
              theta: float = 1.0, t_top: float | None = None, delta_star: float = 0.5,
              nu0: float = 0.1, k_floor: float | None = None) -> OscTrace:
    """Oscillation over nested intrinsic cylinders Q_{k_n, lam^n r0}(theta).

    k_0 = k0 (``None`` picks the self-consistent value, see
    :func:`self_consistent_k`); afterwards k_{n+1} is the oscillation measured at level n,
    clamped below by ``k_floor`` (default: 1e-12 times the field's range, or
    1e-300 for constant fields). Each realized cylinder is intersected with
    its parent so the regions are nested. The trace stops early, with
    ``truncated=True``, when a cylinder leaves the sampled domain.
    """
    if not 0 < lam < 1:
        raise InvalidParameter("lambda must lie in (0, 1)")
    if not (r0 > 0 and n >= 1):
        raise InvalidParameter("need r0 > 0 and n >= 1")
    g = v.grid
    c = tuple(np.broadcast_to(np.asarray(center, dtype=float), (g.d,)).tolist())
    t_top = float(v.times[-1]) if t_top is None else float(t_top)
    span = float(np.ptp(v.values))
    if k_floor is None:
        k_floor = 1e-12 * span if span > 0 else 1e-300
    trace = OscTrace(center=c, lam=lam, delta_star=delta_star, nu0=nu0)
    if k0 is None:
        try:
            k0 = max(self_consistent_k(v, c, r0, theta, spec.m, t_top), k_floor)
        except InvalidRegion:
            trace.truncated, trace.reason = True, "initial cylinder leaves the sampled domain"
            return trace
    if not k0 > 0:
        raise InvalidParameter("k0 must be positive")
    parent: Region | None = None
    k = float(k0)
    for i in range(n):
        rho = r0 * lam**i
        cyl = intrinsic_cylinder(c, t_top, k, rho, theta, spec.m)
        if not cyl.fits(v):
            trace.truncated, trace.reason = True, f"cylinder {i} leaves the sampled domain"
            break
        region = cyl.realize(v)
        if parent is not None:
            try:
                region = region.intersect(parent)
            except InvalidRegion:
                trace.truncated, trace.reason = True, f"cylinder {i} has no cells inside its parent"
                break
        s = v.values[region.levels()][:, region.mask]
        osc = float(s.max() - s.min())
        trace.records.append(OscRecord(
            n=i, radius=rho, k=k, osc=osc, gate=gate_value(k, rho, spec),
            branch=_branch(s, k, rho, spec, delta_star, nu0),
            levels=(region.start, region.stop), n_cells=region.n_cells,
            mu_minus=float(s.min()), mu_plus=float(s.max()),
            short_circuit_ok=short_circuit_holds(k, rho, delta_star, spec),
        ))
        parent = region
        k = max(osc, k_floor)
    return trace


@dataclass
class HolderFit:
    alpha: float | None
    C0: float | None
    residual: float | None
    applicable: bool
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_holder(trace: OscTrace | Sequence[tuple[float, float]], min_points: int = 4) -> HolderFit:
    """Least squares fit of log osc = log C0 + alpha log radius over nonzero records."""
    if isinstance(trace, OscTrace):
        pairs = [(r.radius, r.osc) for r in trace.records]
    else:
        pairs = [(float(a), float(b)) for a, b in trace]
    nonzero = [(r, o) for r, o in pairs if o > 0]
    if not nonzero:
        return HolderFit(None, None, None, False, 0)
    if len(nonzero) < min_points:
        raise InvalidParameter(f"need at least {min_points} nonzero oscillation records")
    x = np.log([r for r, _ in nonzero])
    y = np.log([o for _, o in nonzero])
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return HolderFit(float(coef[1]), float(math.exp(coef[0])), resid, True, len(nonzero))


def critical_osc_bound(n: int, gamma: float, C: float, m: float, profile: ModulusProfile) -> float:
    """C max{ varrho(gamma^n)^{m/(m-1)}, gamma^n } for m > 1."""
    if m == 1:
        raise InvalidParameter("exponent m/(m-1) is undefined at m = 1; no convention is assumed")
    if m < 1:
        raise InvalidParameter("m must be > 1")
    if not 0 < gamma < 1:
        raise InvalidParameter("gamma must lie in (0, 1)")
    r = gamma**n
    if profile.radii and r > max(profile.radii) * (1 + 1e-12):
        raise InvalidParameter("profile does not cover radius gamma^n")
    return C * max(profile(r) ** (m / (m - 1)), r)
