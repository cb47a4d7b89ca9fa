"""Mixed Lebesgue norms and the exponent bookkeeping of the drift condition.

The drift lives in L^{2 qh1}_t L^{2 qh2}_x with

    2/qh1 + d/qh2 = 2 - d*kappa,

kappa > 0 subcritical, kappa = 0 critical, kappa < 0 supercritical. ``qh1``
may be ``math.inf``; every formula then takes its analytic limit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import DriftField, Field, FieldView, Grid, InvalidRegion, Region, restrict

INF = math.inf


class InvalidExponent(ValueError):
    pass


def _inv(q: float) -> float:
    return 0.0 if math.isinf(q) else 1.0 / q


def _check_hat(qh1: float, qh2: float) -> None:
    if not (qh1 > 1):
        raise InvalidExponent(f"qh1 must exceed 1 (or be inf), got {qh1}")
    if not (qh2 > 1) or math.isinf(qh2):
        raise InvalidExponent(f"qh2 must be a finite number > 1, got {qh2}")


def kappa_from_exponents(qh1: float, qh2: float, d: int) -> float:
    _check_hat(qh1, qh2)
    if d < 1:
        raise InvalidExponent("d must be >= 1")
    return (2.0 - 2.0 * _inv(qh1) - d / qh2) / d


def dual_exponents(qh1: float, qh2: float, kappa: float) -> tuple[float, float]:
    """(q1, q2) with 1/(2 qh_i) + (1 + kappa)/q_i = 1/2."""
    _check_hat(qh1, qh2)
    q1 = 2.0 * (1.0 + kappa) if math.isinf(qh1) else 2.0 * qh1 * (1.0 + kappa) / (qh1 - 1.0)
    q2 = 2.0 * qh2 * (1.0 + kappa) / (qh2 - 1.0)
    return q1, q2


def regime_of(kappa: float, tol: float = 1e-12) -> str:
    if kappa > tol:
        return "subcritical"
    if kappa < -tol:
        return "supercritical"
    return "critical"


@dataclass(frozen=True)
class ExponentSpec:
    qh1: float
    qh2: float
    d: int
    m: float = 1.0

    def __post_init__(self):
        _check_hat(self.qh1, self.qh2)
        if self.d not in (1, 2, 3):
            raise InvalidExponent(f"d must be 1, 2 or 3, got {self.d}")
        if not self.m >= 1:
            raise InvalidExponent(f"m must be >= 1, got {self.m}")

    @property
    def kappa(self) -> float:
        return kappa_from_exponents(self.qh1, self.qh2, self.d)

    @property
    def beta(self) -> float:
        return (self.m - 1.0) / self.m

    @property
    def q1(self) -> float:
        return dual_exponents(self.qh1, self.qh2, self.kappa)[0]

    @property
    def q2(self) -> float:
        return dual_exponents(self.qh1, self.qh2, self.kappa)[1]

    @property
    def regime(self) -> str:
        return regime_of(self.kappa)

    @property
    def drift_time_exponent(self) -> float:
        return 2.0 * self.qh1

    @property
    def drift_space_exponent(self) -> float:
        return 2.0 * self.qh2

    def duality_residuals(self) -> tuple[float, float]:
        k = self.kappa
        q1, q2 = dual_exponents(self.qh1, self.qh2, k)
        r1 = 0.5 * _inv(self.qh1) + (1.0 + k) / q1 - 0.5
        r2 = 0.5 / self.qh2 + (1.0 + k) / q2 - 0.5
        return r1, r2

    def rescaling_exponents(self) -> tuple[float, float]:
        """(omega exponent, r exponent) of the rescaled drift norm."""
        w = (1.0 - self.m) * (1.0 - 0.5 * _inv(self.qh1))
        r = 1.0 - 0.5 * (2.0 * _inv(self.qh1) + self.d / self.qh2)
        return w, r

    def to_dict(self) -> dict:
        return {
            "qh1": "inf" if math.isinf(self.qh1) else self.qh1,
            "qh2": self.qh2,
            "d": self.d,
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExponentSpec":
        return cls(parse_exponent(data["qh1"]), parse_exponent(data["qh2"]), int(data["d"]), float(data.get("m", 1.0)))


def parse_exponent(x) -> float:
    if isinstance(x, str) and x.strip().lower() in ("inf", "infinity", "∞"):
        return INF
    return float(x)


def rescaled_drift_norm(norm_B: float, omega: float, r: float, spec: ExponentSpec) -> float:
    """Norm of B_{omega,r}(x,t) = omega^{1-m} r B(rx, omega^{1-m} r^2 t) on the unit cylinder."""
    if not (omega > 0 and r > 0):
        raise ValueError("omega and r must be positive")
    ew, er = spec.rescaling_exponents()
    fw = 1.0 if ew == 0 else omega**ew
    fr = 1.0 if er == 0 else r**er
    return fw * fr * norm_B


# -- norms on sampled fields ---------------------------------------------------


def _lp(values: np.ndarray, p: float, weight: float, axis) -> np.ndarray:
    a = np.abs(values)
    if math.isinf(p):
        return a.max(axis=axis)
    return (np.sum(a**p, axis=axis) * weight) ** (1.0 / p)


def mixed_norm(f: Field | FieldView | np.ndarray, p: float, q: float, region: Region | None = None, grid: Grid | None = None) -> float:
    """|| ||f||_{L^q_x} ||_{L^p_t} over the region, rectangle-rule quadrature.

    ``f`` may be a Field (optionally with a region), a FieldView, or a raw
    array of samples shaped ``(n_levels, n_cells)`` together with ``grid``
    (a flat array counts as a single level).
    """
    if p < 1 or q < 1:
        raise InvalidExponent("exponents must be >= 1")
    if isinstance(f, np.ndarray):
        if grid is None:
            raise ValueError("raw samples need a grid for quadrature weights")
        s, g = (f[None] if f.ndim == 1 else f), grid
    else:
        if isinstance(f, Field):
            view = restrict(f, region if region is not None else Region.full(f))
        else:
            view = f if region is None else restrict(f, region)
        s, g = view.samples, view.field.grid
    if s.size == 0:
        raise InvalidRegion("empty region")
    spatial = _lp(s, q, g.cell_volume, axis=1)
    return float(_lp(spatial, p, g.dt, axis=0))


def drift_norm(B: DriftField, region: Region, spec: ExponentSpec, grid: Grid | None = None) -> float:
    """||B||_{L^{2qh1}_t L^{2qh2}_x} over the region (static drifts repeat in time).

    ``grid`` supplies the time step when the region indexes a field sampled
    more coarsely in time than the drift's own grid.
    """
    mag = B.magnitude
    if B.is_static:
        s = np.broadcast_to(mag[0][region.mask], (region.n_levels, region.n_cells))
    else:
        region.check_in(B)
        s = mag[region.levels()][:, region.mask]
    return mixed_norm(s, spec.drift_time_exponent, spec.drift_space_exponent, grid=grid or B.grid)


def gradient(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Centered differences on each level (one-sided at the outer cells).

    ``values`` has shape ``(n_levels, *grid.shape)``; returns d arrays of that shape.
    """
    axes = tuple(range(1, grid.d + 1))
    g = np.gradient(values, grid.h, axis=axes)
    return list(g) if grid.d > 1 else [g]


def v_norm(f: Field, p: float, region: Region | None = None) -> float:
    """sup_t ||f(t)||_{L^p} + ||grad f||_{L^p(space-time)} over the region."""
    region = Region.full(f) if region is None else region
    region.check_in(f)
    extent = [np.ptp(np.nonzero(region.mask)[a]) + 1 for a in range(f.grid.d)]
    if min(extent) < 2:
        raise InvalidRegion("region too small for the gradient stencil")
    s = restrict(f, region).samples
    sup_term = float(_lp(s, p, f.grid.cell_volume, axis=1).max())
    grads = gradient(f.values, f.grid)
    gmag = np.sqrt(sum(g**2 for g in grads))[region.levels()][:, region.mask]
    grad_term = mixed_norm(gmag, p, p, grid=f.grid)
    return sup_term + grad_term


# -- drift modulus -----------------------------------------------------------------


@dataclass
class ModulusProfile:
    """Samples (r, varrho(r)) ordered by decreasing r."""

    radii: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def __post_init__(self):
        order = np.argsort(self.radii)[::-1]
        self.radii = [float(self.radii[i]) for i in order]
        self.values = [float(self.values[i]) for i in order]
        if any(v < 0 for v in self.values):
            raise ValueError("modulus values must be nonnegative")

    def is_monotone(self, tol: float = 1e-12) -> bool:
        v = np.asarray(self.values[::-1])
        return bool(np.all(np.diff(v) >= -tol * max(1.0, float(np.max(v, initial=0.0)))))

    def __call__(self, r: float) -> float:
        """Linear interpolation; r below the smallest sample scales to 0 linearly."""
        rs = np.asarray(self.radii[::-1])
        vs = np.asarray(self.values[::-1])
        if r > rs[-1] * (1 + 1e-12):
            raise ValueError(f"profile does not cover r={r}")
        return float(np.interp(r, np.concatenate([[0.0], rs]), np.concatenate([[0.0], vs])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "varrho"])
        for r, v in zip(self.radii, self.values):
            w.writerow([f"{r:.17g}", f"{v:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ModulusProfile":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["r", "varrho"]:
            raise ValueError("expected header r,varrho")
        return cls([float(r[0]) for r in rows[1:]], [float(r[1]) for r in rows[1:]])


def _ball_kernel(grid: Grid, r: float) -> np.ndarray:
    n = int(math.ceil(r / grid.h))
    offs = np.arange(-n, n + 1) * grid.h
    mesh = np.meshgrid(*([offs] * grid.d), indexing="ij")
    rr = np.sqrt(sum(x**2 for x in mesh))
    ker = (rr < r).astype(float)
    if not ker.any():
        ker[(n,) * grid.d] = 1.0
    return ker


def varrho(B: DriftField, r: float, spec: ExponentSpec) -> float:
    """sup over lattice centers of ||B||_{L^{2qh1}_t L^{2qh2}_x} on ((x0,t0) + Q_r) ∩ Q_1.

    Q_r = K_r x (-r^2, 0]; Q_1 is the whole sampled domain. Centers run over
    every cell and every time level; the window is clipped at the domain's
    edges (zero extension), which is the intersection with Q_1.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    g = B.grid
    p_x = spec.drift_space_exponent
    mag = B.magnitude
    ker = _ball_kernel(g, r)
    # spatial integral of |B|^{2qh2} over each ball, per level
    local = np.stack([ndimage.correlate(lvl**p_x, ker, mode="constant", cval=0.0) for lvl in mag])
    local = np.maximum(local, 0.0) * g.cell_volume
    spatial = local ** (1.0 / p_x)
    if B.is_static:
        # Q_1 has unit duration; a static drift fills the window (-min(r^2, 1), 0]
        if math.isinf(spec.qh1):
            return float(spatial.max())
        return float(spatial.max() * min(r * r, 1.0) ** (1.0 / spec.drift_time_exponent))
    n_lv = max(1, int(round(r * r / g.dt)))
    nt = spatial.shape[0]
    if math.isinf(spec.qh1):
        best = 0.0
        for j in range(nt):
            lo = max(0, j - n_lv + 1)
            best = max(best, float(spatial[lo : j + 1].max()))
        return best
    p_t = spec.drift_time_exponent
    power = spatial**p_t * g.dt
    csum = np.concatenate([np.zeros((1, *power.shape[1:])), np.cumsum(power, axis=0)])
    best = 0.0
    for j in range(nt):
        lo = max(0, j - n_lv + 1)
        window = csum[j + 1] - csum[lo]
        best = max(best, float(window.max()))
    return best ** (1.0 / p_t)


def varrho_profile(B: DriftField, radii, spec: ExponentSpec) -> ModulusProfile:
    radii = [float(r) for r in radii]
    return ModulusProfile(radii, [varrho(B, r, spec) for r in radii])


# -- embedding exponent algebra --------------------------------------------------


def gn_alpha(s: float, q: float, p: float, d: int) -> tuple[float | None, bool]:
    """Interpolation exponent of the multiplicative embedding and its admissibility.

    Returns ``(alpha, admissible)``; alpha is None when the defining
    denominator vanishes.
    """
    if s < 1 or p < 1 or q < 1:
        raise InvalidExponent("s, p, q must be >= 1")
    denom = 1.0 / d - 1.0 / p + 1.0 / s
    if abs(denom) < 1e-15:
        return None, False
    alpha = (1.0 / s - _inv(q)) / denom
    tol = 1e-12
    if not (-tol <= alpha <= 1 + tol):
        return alpha, False
    if d == 1:
        ok = q >= s - tol and alpha <= p / (p + s * (p - 1)) + tol
    elif p < d:
        crit = d * p / (d - p)
        if s <= crit:
            ok = s - tol <= q <= crit + tol
        else:
            ok = crit - tol <= q <= s + tol
    else:
        ok = q >= s - tol and not math.isinf(q) and alpha < d * p / (d * p + s * (p - d))
    return alpha, bool(ok)


def admissible_pair(r: float, q: float, p: float, d: int, closed: bool = False) -> bool:
    """Whether L^r_t L^q_x is reached from V^p by the parabolic embedding.

    Checks 1/r + d/(p q) = d/p^2 and the open ranges of the case table,
    plus the Sobolev endpoint q = dp/(d-p), r = p when 1 < p < d (that pair
    is the plain embedding W^{1,p} into L^{dp/(d-p)} integrated in time).
    ``closed=True`` also accepts the other finite endpoints.
    """
    if not (q > p >= 1) or r < 1:
        return False
    if abs(_inv(r) + d * _inv(q) / p - d / p**2) > 1e-12:
        return False

    def inside(x, lo, hi):
        if closed:
            return lo <= x <= hi
        return lo < x < hi

    if d == 1:
        return inside(q, p, INF) and inside(r, p * p, INF)
    if 1 < p < d:
        star = d * p / (d - p)
        if abs(q - star) <= 1e-12 * star and abs(r - p) <= 1e-12 * p:
            return True
        return inside(q, p, star) and inside(r, p, INF)
    if 1 < d <= p:
        return inside(q, p, INF) and inside(r, p * p / d, INF)
    return False


def sobolev_ratio(f: Field, p: float) -> float:
    """Smallest C with ||f||_q^q <= C^q (sup_t ||f||_p^p)^{p/d} ||grad f||_p^p, q = p(d+p)/d."""
    g = f.grid
    d = g.d
    q = p * (d + p) / d
    vals = f.values
    lhs = np.sum(np.abs(vals) ** q) * g.cell_volume * g.dt
    sup_p = float((np.sum(np.abs(vals) ** p, axis=tuple(range(1, d + 1))) * g.cell_volume).max())
    grads = gradient(vals, g)
    gp = np.sum(np.sqrt(sum(x**2 for x in grads)) ** p) * g.cell_volume * g.dt
    denom = sup_p ** (p / d) * gp
    if denom == 0:
        return 0.0 if lhs == 0 else INF
    return float((lhs / denom) ** (1.0 / q))


def random_vanishing_fields(grid: Grid, n_fields: int, n_levels: int, seed: int, modes: int = 3):
    """Smooth random fields vanishing on the boundary of the box, for embedding checks."""
    rng = np.random.default_rng(seed)
    xs = grid.mesh()
    L = grid.L
    times = np.arange(n_levels) * grid.dt
    out = []
    for _ in range(n_fields):
        vals = np.zeros((n_levels, *grid.shape))
        for _ in range(modes):
            ks = rng.integers(1, 4, size=grid.d)
            amp = rng.normal()
            omega = rng.uniform(0.5, 3.0)
            phase = rng.uniform(0, 2 * np.pi)
            spatial = np.ones(grid.shape)
            for x, k in zip(xs, ks):
                spatial = spatial * np.sin(k * np.pi * (x + L) / (2 * L))
            vals += amp * np.cos(omega * times + phase).reshape(-1, *([1] * grid.d)) * spatial[None]
        out.append(Field(grid, vals, 0.0, tag="w"))
    return out
