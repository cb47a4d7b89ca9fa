"""Drift fields: analytic families, stream-function drifts and the log-log family.

The log-log family is built from a radial profile phi_N that equals
``ln ln(1/r)`` on a logarithmic zone, is flat (a plateau) near the origin and
joins the two with a monotone cubic Hermite piece. From it come the potential
``Phi_N = -phi_N / ln ln N``, the drift ``B_N = grad Phi_N`` and the stationary
states ``u_N``, whose flux ``u (grad (m/(m-1) u^{m-1}) + B)`` vanishes.

Very small radii (the deep variant's plateau sits at ``exp(-(ln N)^2)``) are
handled in the variable ``s = ln(1/r)`` so nothing underflows.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .grid import DriftField, Grid, InvalidParameter
from .norms import ExponentSpec

VARIANTS = ("default", "deep")
CONVENTIONS = ("displayed", "bare", "stationary")


class InvalidResolution(ValueError):
    pass


class UnsupportedDimension(ValueError):
    pass


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


# r ln(1/r) = 1/(2e) on (1/e, 1): past this radius the profile turns linear
_R_LINEAR = float(optimize.brentq(lambda r: r * math.log(1.0 / r) - 1.0 / (2.0 * math.e), 1.0 / math.e, 0.999))
_OUTER_SLOPE = -2.0 * math.e


@dataclass(frozen=True)
class PhiFamily:
    """Radial profile phi_N with plateau, Hermite bridge and log-log zone.

    ``variant="default"``: plateau ``alpha_plateau * ln ln N`` on
    ``[0, r_plateau]`` (default ``r_plateau = 1/(10N)``), cubic Hermite on
    ``[r_plateau, 1/N]`` and ``ln ln(1/r)`` from ``1/N`` outwards.

    ``variant="deep"``: ``ln ln(1/r)`` all the way down to the radius where it
    reaches the plateau level, ``ln(1/r) = (ln N)^alpha_plateau``, flat below.

    Beyond ``1/e`` the log-log formula continues until its slope reaches
    ``-2e`` and is then extended linearly with that slope.
    """

    N: float
    alpha_plateau: float = 2.0
    r_plateau: float | None = None
    variant: str = "default"

    def __post_init__(self):
        if not self.N >= 4:
            raise InvalidParameter("N must be >= 4")
        if not self.alpha_plateau > 1:
            raise InvalidParameter("plateau level multiplier must exceed 1")
        if self.variant not in VARIANTS:
            raise InvalidParameter(f"variant must be one of {VARIANTS}")
        if self.variant == "deep":
            if self.r_plateau is not None:
                raise InvalidParameter("the deep variant fixes its own plateau radius")
        else:
            rp = 1.0 / (10.0 * self.N) if self.r_plateau is None else float(self.r_plateau)
            if not 0 < rp < 1.0 / self.N:
                raise InvalidParameter("r_plateau must lie in (0, 1/N)")
            object.__setattr__(self, "r_plateau", rp)
            if not self._hermite_is_monotone():
                raise InvalidParameter("Hermite bridge would not be monotone for this r_plateau")

    # -- scalar constants ---------------------------------------------------

    @property
    def lnlnN(self) -> float:
        return math.log(math.log(self.N))

    @property
    def plateau_value(self) -> float:
        return self.alpha_plateau * self.lnlnN

    @property
    def log_zone_inner(self) -> float:
        """Inner radius of the log-log zone (1/N, or the plateau edge for ``deep``)."""
        return 1.0 / self.N if self.variant == "default" else self.plateau_radius

    @property
    def plateau_s(self) -> float:
        """ln(1/r) at the plateau edge."""
        if self.variant == "deep":
            return math.log(self.N) ** self.alpha_plateau
        return -math.log(self.r_plateau)

    @property
    def plateau_radius(self) -> float:
        """Plateau edge radius; may underflow to 0.0 for the deep variant."""
        if self.variant == "deep":
            return math.exp(-self.plateau_s)
        return self.r_plateau

    # -- Hermite bridge -----------------------------------------------------

    def _hermite_data(self):
        a, b = self.r_plateau, 1.0 / self.N
        return a, b, self.plateau_value, self.lnlnN, 0.0, -self.N / math.log(self.N)

    def _hermite_is_monotone(self) -> bool:
        a, b, p0, p1, m0, m1 = self._hermite_data()
        delta = (p1 - p0) / (b - a)
        if delta >= 0:
            return False
        al, be = m0 / delta, m1 / delta
        return al >= 0 and be >= 0 and al * al + be * be <= 9.0

    def _hermite(self, r: np.ndarray, deriv: bool) -> np.ndarray:
        a, b, p0, p1, m0, m1 = self._hermite_data()
        w = b - a
        t = (r - a) / w
        if deriv:
            return (
                p0 * (6 * t * t - 6 * t)
                + w * m0 * (3 * t * t - 4 * t + 1)
                + p1 * (-6 * t * t + 6 * t)
                + w * m1 * (3 * t * t - 2 * t)
            ) / w
        return (
            p0 * (2 * t**3 - 3 * t * t + 1)
            + w * m0 * (t**3 - 2 * t * t + t)
            + p1 * (-2 * t**3 + 3 * t * t)
            + w * m1 * (t**3 - t * t)
        )

    # -- evaluation ---------------------------------------------------------

    def _outer(self, r: np.ndarray, deriv: bool) -> np.ndarray:
        """Profile for r >= 1/e: log-log up to _R_LINEAR, then linear."""
        rc = np.minimum(r, _R_LINEAR)
        s = -np.log(rc)
        if deriv:
            return np.where(r <= _R_LINEAR, -1.0 / (rc * s), _OUTER_SLOPE)
        base = np.log(s)
        return np.where(r <= _R_LINEAR, base, base + _OUTER_SLOPE * (r - _R_LINEAR))

    def evaluate(self, r, deriv: bool = False) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise InvalidParameter("radius must be nonnegative")
        out = np.zeros_like(r) if deriv else np.full_like(r, self.plateau_value)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -np.log(np.where(r > 0, r, 1.0))
            s = np.where(r > 0, s, np.inf)
            inner_s = math.log(self.N) if self.variant == "default" else self.plateau_s
            in_log = (s < inner_s) & (r < 1.0 / math.e)
            if deriv:
                out = np.where(in_log, -1.0 / (r * s), out)
            else:
                out = np.where(in_log, np.log(s), out)
            if self.variant == "default":
                a, b = self.r_plateau, 1.0 / self.N
                in_h = (r > a) & (r <= b)
                if np.any(in_h):
                    out = np.where(in_h, self._hermite(np.clip(r, a, b), deriv), out)
            outer = r >= 1.0 / math.e
            if np.any(outer):
                out = np.where(outer, self._outer(np.maximum(r, 1.0 / math.e), deriv), out)
        return out

    def phi_of_s(self, s) -> np.ndarray:
        """phi_N as a function of s = ln(1/r), valid for s >= 1 (r <= 1/e)."""
        s = np.asarray(s, dtype=float)
        if np.any(s < 1):
            raise InvalidParameter("phi_of_s needs s >= 1")
        if self.variant == "deep":
            return np.where(s < self.plateau_s, np.log(s), self.plateau_value)
        lnN = math.log(self.N)
        logzone = np.log(np.minimum(s, lnN))
        return np.where(s <= lnN, logzone, self.evaluate(np.exp(-s)))

    # -- audit --------------------------------------------------------------

    def derivative_audit(self, samples: int = 20001) -> dict:
        """Largest |phi'| on the bridge and on the log zone against N/ln N."""
        bound = self.N / math.log(self.N)
        log_zone_max = 1.0 / ((1.0 / self.N) * math.log(self.N))
        if self.variant == "default":
            r = np.linspace(self.r_plateau, 1.0 / self.N, samples)
            bridge_max = float(np.max(np.abs(self.evaluate(r, deriv=True))))
        else:
            # the log-log slope grows like 1/(r ln(1/r)) all the way to the plateau
            s = self.plateau_s
            bridge_max = math.exp(s) / s if s < 700 else math.inf
        return {
            "claimed_bound": bound,
            "bridge_max_abs_derivative": bridge_max,
            "log_zone_max_abs_derivative": log_zone_max,
            "bridge_violates_bound": bool(bridge_max > bound * (1 + 1e-12)),
            "violation_ratio": bridge_max / bound,
        }

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "alpha_plateau": self.alpha_plateau,
            "variant": self.variant,
            "plateau_radius": self.plateau_radius,
            "plateau_log_radius": -self.plateau_s,
        }


def phi_n(r, family: PhiFamily):
    out = family.evaluate(r)
    return float(out) if out.ndim == 0 else out


def phi_n_prime(r, family: PhiFamily):
    out = family.evaluate(r, deriv=True)
    return float(out) if out.ndim == 0 else out


def counterexample_potential(family: PhiFamily, x) -> float | np.ndarray:
    """Phi_N(x) = -phi_N(|x|) / ln ln N."""
    r = np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float)), axis=-1)
    out = -family.evaluate(r) / family.lnlnN
    return float(out) if np.ndim(out) == 0 else out


def counterexample_drift(family: PhiFamily, x) -> np.ndarray:
    """B_N(x) = -(phi_N'(|x|)/ln ln N) x/|x|, zero at the origin.

    ``x`` may be a single point (shape ``(d,)``) or a stack ``(..., d)``.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    dphi = family.evaluate(r, deriv=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(r > 0, x / np.where(r > 0, r, 1.0), 0.0)
    return -(dphi / family.lnlnN) * unit


def drift_magnitude(family: PhiFamily, r) -> np.ndarray:
    return np.abs(family.evaluate(r, deriv=True)) / family.lnlnN


def _check_state_N(family: PhiFamily) -> None:
    # ln ln ln ln N needs ln ln N > 1, i.e. N > e^e
    if not family.lnlnN > 1.0:
        raise InvalidParameter("N must exceed e^e so that ln ln ln ln N is defined")


def _shifted(family: PhiFamily, phi: np.ndarray) -> np.ndarray:
    """(phi - ln ln ln ln N) / ln ln N."""
    return (phi - math.log(math.log(family.lnlnN))) / family.lnlnN


def state_from_phi(family: PhiFamily, m: float, phi, convention: str = "displayed") -> np.ndarray:
    if convention not in CONVENTIONS:
        raise InvalidParameter(f"convention must be one of {CONVENTIONS}")
    if m < 1:
        raise InvalidParameter("m must be >= 1")
    _check_state_N(family)
    x = _shifted(family, np.asarray(phi, dtype=float))
    if m == 1:
        return np.exp(x)
    pos = np.maximum(x, 0.0)
    if convention == "displayed":
        return (m - 1) / m * pos ** (1.0 / (m - 1))
    if convention == "bare":
        return pos ** (1.0 / (m - 1))
    return ((m - 1) / m * pos) ** (1.0 / (m - 1))


def counterexample_state(family: PhiFamily, m: float, x, convention: str = "displayed"):
    """u_N at a point (or stack of points, last axis = coordinates).

    Conventions for m > 1 (all coincide in shape, differ in scaling):
    ``displayed`` puts (m-1)/m in front of the power, ``bare`` drops it and
    ``stationary`` puts it inside, which is the choice that makes the flux
    vanish for every m. ``displayed`` and ``stationary`` agree at m = 2.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=-1)
    out = state_from_phi(family, m, family.evaluate(r), convention)
    return float(out) if np.ndim(out) == 0 else out


def closed_form_center_value(family: PhiFamily, m: float) -> dict:
    """u_N(0) in every convention, straight from the plateau level."""
    _check_state_N(family)
    x = _shifted(family, np.asarray(family.plateau_value))
    if m == 1:
        v = float(np.exp(x))
        return {c: v for c in CONVENTIONS}
    base = float(x) ** (1.0 / (m - 1))
    return {
        "bare": base,
        "displayed": (m - 1) / m * base,
        "stationary": ((m - 1) / m) ** (1.0 / (m - 1)) * base,
    }


def support_radius_exact(family: PhiFamily) -> float:
    """Radius where u_N switches off (m > 1): phi_N(R) = ln ln ln ln N, i.e. R = 1/ln ln N."""
    _check_state_N(family)
    return 1.0 / family.lnlnN


@dataclass(frozen=True)
class CounterexamplePair:
    """Potential, drift and stationary state built on one PhiFamily."""

    family: PhiFamily
    m: float = 2.0
    convention: str = "displayed"

    def __post_init__(self):
        if self.m < 1:
            raise InvalidParameter("m must be >= 1")
        if self.convention not in CONVENTIONS:
            raise InvalidParameter(f"convention must be one of {CONVENTIONS}")
        _check_state_N(self.family)

    def potential(self, x):
        return counterexample_potential(self.family, x)

    def drift(self, x):
        return counterexample_drift(self.family, x)

    def state(self, x):
        return counterexample_state(self.family, self.m, x, self.convention)

    def state_radial(self, r) -> np.ndarray:
        return state_from_phi(self.family, self.m, self.family.evaluate(r), self.convention)

    def pressure(self, u: np.ndarray) -> np.ndarray:
        """m/(m-1) u^{m-1} (ln u for m = 1)."""
        if self.m == 1:
            return np.log(u)
        return self.m / (self.m - 1) * np.power(u, self.m - 1)

    def flux_potential(self, x) -> np.ndarray:
        """pressure(u_N) + Phi_N, constant on the support for the stationary choice."""
        return self.pressure(np.asarray(self.state(x))) + np.asarray(self.potential(x))

    def flux_potential_constant(self) -> float:
        return -math.log(math.log(self.family.lnlnN)) / self.family.lnlnN


def modulus_bound_omega(r, d: int, C: float = 1.0):
    """omega(r) = (C (ln ln(1/r) ln(1/r))^{-d} + C (ln(1/r))^{1-d} + C r^d)^{1/d}."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0) or np.any(r_arr >= 1.0 / math.e):
        raise InvalidParameter("omega needs r in (0, 1/e)")
    s = -np.log(r_arr)
    total = C * (np.log(s) * s) ** (-d) + C * s ** (1.0 - d) + C * r_arr**d
    out = total ** (1.0 / d)
    return float(out) if out.ndim == 0 else out


# -- stationarity ---------------------------------------------------------------


def stationarity_residual(pair: CounterexamplePair, grid: Grid, threshold: float = 0.0) -> dict:
    """Discrete check that u_N (grad pressure(u_N) + B_N) vanishes.

    The grid is read as a line through the origin (d = 1) or as a planar/3D
    section (d > 1). ``flux_sup`` is the sup over cells whose whole centered
    stencil lies in ``{u > threshold}`` of |D_h pressure(u) + B_N|, with
    B_N evaluated exactly at the cell centers, so it measures the truncation
    error of the difference quotient. ``sup_residual`` is the largest
    face-flux divergence of ``u (D_h pressure(u) + B)`` over the same cells.
    """
    fam = pair.family
    if grid.h > fam.plateau_radius / 4:
        raise InvalidResolution("grid must satisfy h <= r_plateau / 4")
    coords = grid.mesh()
    pts = np.stack(coords, axis=-1)
    u = np.asarray(pair.state(pts))
    if np.ndim(u) == 0:
        u = np.full(grid.shape, float(u))
    B = pair.drift(pts)
    if pair.m == 1:
        p = np.log(u)
    else:
        p = pair.pressure(u)
    h = grid.h
    flux_sup = 0.0
    resid_sup = 0.0
    inside = u > threshold
    for a in range(grid.d):
        n = grid.n_cells
        lo = [slice(None)] * grid.d
        hi = [slice(None)] * grid.d
        mid = [slice(None)] * grid.d
        lo[a], mid[a], hi[a] = slice(0, n - 2), slice(1, n - 1), slice(2, n)
        lo, mid, hi = tuple(lo), tuple(mid), tuple(hi)
        ok = inside[lo] & inside[mid] & inside[hi]
        centered = (p[hi] - p[lo]) / (2 * h) + B[mid][..., a]
        if np.any(ok):
            flux_sup = max(flux_sup, float(np.max(np.abs(centered[ok]))))
        # face fluxes between neighbours, divergence on interior cells
        f_lo = [slice(None)] * grid.d
        f_hi = [slice(None)] * grid.d
        f_lo[a], f_hi[a] = slice(0, n - 1), slice(1, n)
        f_lo, f_hi = tuple(f_lo), tuple(f_hi)
        face_pts = 0.5 * (pts[f_lo] + pts[f_hi])
        b_face = pair.drift(face_pts)[..., a]
        u_face = 0.5 * (u[f_lo] + u[f_hi])
        F = u_face * ((p[f_hi] - p[f_lo]) / h + b_face)
        fl = [slice(None)] * grid.d
        fh = [slice(None)] * grid.d
        fl[a], fh[a] = slice(0, n - 2), slice(1, n - 1)
        div = (F[tuple(fh)] - F[tuple(fl)]) / h
        if np.any(ok):
            resid_sup = max(resid_sup, float(np.max(np.abs(div[ok]))))
    return {"sup_residual": resid_sup, "flux_sup": flux_sup, "h": h, "cells_checked": int(np.count_nonzero(inside))}


def measured_support_radius(pair: CounterexamplePair, grid: Grid) -> float:
    """Largest |x| over cell centers where u_N > 0."""
    pts = np.stack(grid.mesh(), axis=-1)
    u = np.asarray(pair.state(pts))
    r = np.linalg.norm(pts, axis=-1)
    if not np.any(u > 0):
        return 0.0
    return float(r[u > 0].max())


# -- radial norms ---------------------------------------------------------------


def _breakpoints(family: PhiFamily, lo: float, hi: float) -> list[float]:
    pts = [family.plateau_radius, 1.0 / family.N, 1.0 / math.e, _R_LINEAR]
    return sorted(p for p in pts if lo < p < hi)


def _quad(fn: Callable[[float], float], lo: float, hi: float, points: Sequence[float], rel: float = 1e-9) -> float:
    edges = [lo, *points, hi]
    if lo > 0 and hi / lo > 10:
        # decade splits keep each piece within a modest dynamic range
        n_dec = int(math.ceil(math.log10(hi / lo)))
        edges = sorted({*edges, *np.geomspace(lo, hi, n_dec + 1)[1:-1].tolist()})
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-9 * b:
            # too narrow for adaptive quadrature in double precision
            total += (b - a) * fn(0.5 * (a + b))
        elif b > a:
            # near-tangent balls put the cap edge within rounding of a breakpoint;
            # quad then flags roundoff although the estimate is fine for a sup
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, _ = integrate.quad(fn, a, b, limit=200, epsabs=0.0, epsrel=rel)
            total += val
    return total


def radial_drift_integral(family: PhiFamily, p: float, d: int, r_max: float = 1.0) -> float:
    """int_{K_{r_max}} |B_N|^p dx by 1D radial quadrature.

    The log-log zone is integrated in s = ln(1/r), where the integrand is
    s^{-p} e^{(p-d) s} / (ln ln N)^p, so tiny plateau radii never underflow.
    """
    area = _sphere_area(d)
    L2 = family.lnlnN
    total = 0.0
    inner = family.log_zone_inner if family.variant == "default" else 0.0
    if family.variant == "default":
        lo, hi = family.plateau_radius, min(1.0 / family.N, r_max)
        if hi > lo:
            total += _quad(lambda r: drift_magnitude(family, r) ** p * r ** (d - 1), lo, hi, [])
    # log-log zone between radii 1/N (or plateau) and min(1/e, r_max)
    s_hi = family.plateau_s if family.variant == "deep" else math.log(family.N)
    s_lo = max(1.0, -math.log(r_max))
    if s_hi > s_lo:
        total += _quad(lambda s: s ** (-p) * math.exp((p - d) * s), s_lo, s_hi, []) / L2**p
    if r_max > 1.0 / math.e:
        lo = max(1.0 / math.e, inner)
        total += _quad(
            lambda r: drift_magnitude(family, r) ** p * r ** (d - 1),
            lo,
            r_max,
            _breakpoints(family, lo, r_max),
        )
    return area * total


def drift_ld_norm(family: PhiFamily, d: int = 3, r_max: float = 1.0) -> float:
    """||B_N||_{L^d(K_{r_max})}."""
    return radial_drift_integral(family, d, d, r_max) ** (1.0 / d)


def _spatial_exponent(spec: ExponentSpec) -> float:
    return spec.drift_space_exponent


def _time_factor(r: float, spec: ExponentSpec) -> float:
    if math.isinf(spec.qh1):
        return 1.0
    return min(r * r, 1.0) ** (1.0 / spec.drift_time_exponent)


def varrho_origin(family: PhiFamily, r: float, spec: ExponentSpec) -> float:
    """Drift norm of B_N on the single cylinder Q_r centred at the origin."""
    p = _spatial_exponent(spec)
    return radial_drift_integral(family, p, spec.d, r) ** (1.0 / p) * _time_factor(r, spec)


def _shell_measure(s: float, c: float, r: float, d: int) -> float:
    """Measure of the sphere {|x| = s} inside the ball K_r(c e_1), c = |centre|."""
    if s <= 0:
        return 0.0
    if s + c <= r:
        return _sphere_area(d) * s ** (d - 1)
    if s >= c + r or s <= c - r:
        return 0.0
    # r^2 - (s - c)^2 = 2 s c (1 - cos t), written without cancellation
    gap = (r - s + c) * (r + s - c)
    if d == 1:
        return 1.0 if abs(s - c) < r else 0.0
    if d == 2:
        return 2.0 * s * math.acos(min(1.0, max(-1.0, 1.0 - gap / (2 * s * c))))
    if d == 3:
        return math.pi * s * gap / c
    raise UnsupportedDimension("shell measure implemented for d <= 3")


def _ball_integral(family: PhiFamily, p: float, d: int, c: float, r: float) -> float:
    lo, hi = max(0.0, c - r), min(1.0, c + r)
    if hi <= lo:
        return 0.0
    lo = max(lo, family.plateau_radius)
    if hi <= lo:
        return 0.0
    pts = sorted({*_breakpoints(family, lo, hi), abs(r - c), c + r})

    def integrand(s):
        return drift_magnitude(family, s) ** p * _shell_measure(s, c, r, d)

    return _quad(integrand, lo, hi, [q for q in pts if lo < q < hi], rel=1e-8)


def varrho_sup(family: PhiFamily, r: float, spec: ExponentSpec, n_centers: int = 120) -> dict:
    """Sup over centres of the drift norm of B_N on Q_r(x0), radial symmetry reduced.

    Centres are scanned along a ray on a geometric grid clustered around the
    bridge and the log zone; the spatial integral over each off-centre ball is
    exact in angle (spherical-cap measure) and adaptive in radius.
    """
    if family.variant == "deep" and family.plateau_radius == 0.0:
        raise InvalidParameter("plateau radius underflows; off-centre scan is not resolvable")
    p = _spatial_exponent(spec)
    d = spec.d
    rp = family.plateau_radius
    centers = np.unique(
        np.concatenate([[0.0], np.geomspace(max(rp * 1e-2, 1e-300), 1.0, n_centers), [rp + r, 1.0 / family.N]])
    )
    best, arg = 0.0, 0.0
    for c in centers:
        val = _ball_integral(family, p, d, float(c), r)
        if val > best:
            best, arg = val, float(c)
    return {"varrho": best ** (1.0 / p) * _time_factor(r, spec), "argmax_center": arg}


# -- divergence-free drifts -----------------------------------------------------


def make_divfree(stream, grid: Grid) -> DriftField:
    """B = (d2 psi, -d1 psi) from a stream function sampled on grid nodes.

    ``stream`` is either an array of node values (shape ``(n+1, n+1)``) or a
    callable ``psi(x, y)``. Face normals are node differences along the face,
    so the face-flux divergence cancels exactly up to rounding.
    """
    if grid.d != 2:
        raise UnsupportedDimension("stream-function drifts need d = 2")
    n = grid.n_cells
    if callable(stream):
        xn = grid.nodes_1d()
        X, Y = np.meshgrid(xn, xn, indexing="ij")
        psi = np.broadcast_to(np.asarray(stream(X, Y), dtype=float), X.shape)
    else:
        psi = np.asarray(stream, dtype=float)
    if psi.shape != (n + 1, n + 1):
        raise InvalidParameter(f"stream samples must have shape {(n + 1, n + 1)}")
    h = grid.h
    bx = np.diff(psi, axis=1) / h  # x-faces: (n+1, n)
    by = -np.diff(psi, axis=0) / h  # y-faces: (n, n+1)
    if grid.bc == "periodic":
        if not (np.allclose(bx[0], bx[-1], rtol=0, atol=1e-12 * (1 + np.abs(bx).max()))
                and np.allclose(by[:, 0], by[:, -1], rtol=0, atol=1e-12 * (1 + np.abs(by).max()))):
            raise InvalidParameter("stream function is not periodic-compatible on this grid")
        bx[-1] = bx[0]
        by[:, -1] = by[:, 0]
    cells = np.stack([0.5 * (bx[:-1] + bx[1:]), 0.5 * (by[:, :-1] + by[:, 1:])], axis=-1)
    return DriftField(grid, cells, (np.ascontiguousarray(bx), np.ascontiguousarray(by)))


def cellular_stream(amplitude: float = 1.0, freq: float = 1.0):
    """psi = A sin(pi f x) sin(pi f y): cellular (shear-cell) flow."""

    def psi(x, y):
        return amplitude * np.sin(math.pi * freq * x) * np.sin(math.pi * freq * y)

    return psi


def shear_stream(amplitude: float = 1.0, freq: float = 1.0):
    """psi = A cos(pi f y)/(pi f): parallel shear B = (-A sin(pi f y), 0)."""

    def psi(x, y):
        return amplitude * np.cos(math.pi * freq * y) / (math.pi * freq) + 0.0 * x

    return psi


ANALYTIC_FAMILIES = ("zero", "constant", "linear", "shear", "cellular")


def analytic_drift(grid: Grid, name: str, params: dict | None = None, cap: float | None = None) -> DriftField:
    """Named drift families for configs and tests."""
    params = dict(params or {})
    if name == "zero":
        return DriftField.zeros(grid)
    if name == "constant":
        return DriftField.constant(grid, params.get("b", [1.0] * grid.d))
    if name == "linear":
        c = float(params.get("c", 1.0))
        return DriftField.from_function(grid, lambda *xs: [c * x for x in xs], cap=cap)
    if name in ("shear", "cellular"):
        maker = shear_stream if name == "shear" else cellular_stream
        return make_divfree(maker(float(params.get("amplitude", 1.0)), float(params.get("freq", 1.0))), grid)
    raise InvalidParameter(f"unknown drift family {name!r}; choose from {ANALYTIC_FAMILIES}")


def counterexample_drift_field(family: PhiFamily, grid: Grid, cap: float | None = None) -> DriftField:
    """B_N sampled on a grid, optionally capped (cap and event count are kept)."""

    def fn(*xs):
        pts = np.stack(np.broadcast_arrays(*xs), axis=-1)
        b = counterexample_drift(family, pts)
        return [b[..., a] for a in range(len(xs))]

    return DriftField.from_function(grid, fn, cap=cap)


# -- emission -------------------------------------------------------------------


@dataclass
class CounterexampleEmission:
    csv: str
    metadata: dict = field(default_factory=dict)

    def metadata_json(self) -> str:
        return json.dumps(self.metadata, sort_keys=True, indent=2)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def emit_counterexample(pair: CounterexamplePair, radii: Sequence[float], d: int = 3) -> CounterexampleEmission:
    """Profile table ``r,phi,phi_prime,B_mag,u`` plus metadata."""
    fam = pair.family
    r = np.asarray(radii, dtype=float)
    phi = fam.evaluate(r)
    dphi = fam.evaluate(r, deriv=True)
    bmag = np.abs(dphi) / fam.lnlnN
    u = pair.state_radial(r)
    lines = ["r,phi,phi_prime,B_mag,u"]
    lines += [",".join(_fmt(v) for v in row) for row in zip(r, phi, dphi, bmag, u)]
    meta = {
        "N": fam.N,
        "m": pair.m,
        "variant": fam.variant,
        "convention": pair.convention,
        "plateau_radius": fam.plateau_radius,
        "plateau_log_radius": -fam.plateau_s,
        "derivative_audit": fam.derivative_audit(),
        "B_Ld_norm": drift_ld_norm(fam, d),
        "d": d,
        "center_value": closed_form_center_value(fam, pair.m),
        "support_radius": support_radius_exact(fam) if pair.m > 1 else None,
    }
    return CounterexampleEmission("\n".join(lines) + "\n", meta)
