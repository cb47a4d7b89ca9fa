"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N ...: PASS|FAIL`` line (shown even under
output capture) before asserting. Run ``python tests/test_acceptance.py``
for the summary lines alone.
"""

import itertools
import json
import math
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from pmedrift.cli import run as cli_run
from pmedrift.degiorgi import (
    Cutoff,
    IterationParams,
    energy_gap,
    energy_gap_critical,
    fit_holder,
    iterate_lemma,
    log_energy_gap,
    osc_trace,
    pressure_variable,
)
from pmedrift.drifts import (
    CounterexamplePair,
    PhiFamily,
    cellular_stream,
    closed_form_center_value,
    make_divfree,
    measured_support_radius,
    stationarity_residual,
    support_radius_exact,
    varrho_origin,
    varrho_sup,
)
from pmedrift.grid import DriftField, Field, Grid, Region, intrinsic_cylinder
from pmedrift.norms import ExponentSpec, rescaled_drift_norm
from pmedrift.solver import Barenblatt, SolverConfig, heat_kernel, simulate, support_radius

INF = math.inf


def report(label: str, ok: bool, detail: str) -> None:
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'} ({detail})"
    capman = _CAPTURE.get("manager")
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)


_CAPTURE: dict = {}


@pytest.fixture(autouse=True)
def _expose_capture(request):
    _CAPTURE["manager"] = request.config.pluginmanager.getplugin("capturemanager")
    yield


def lnln(x: float) -> float:
    return math.log(math.log(x))


# -- 1 ------------------------------------------------------------------------------


def criterion_1():
    g = Grid(1, 1024, 4.0)  # h = 1/128
    r = g.radius(0.0)
    start = time.perf_counter()
    run = simulate(heat_kernel(r, 0.01), DriftField.zeros(g), SolverConfig(m=1.0, n_out=1), 0.09, t0=0.01)
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(run.field.values[-1] - heat_kernel(r, 0.1))))
    return err < 1e-3 and elapsed < 10, f"Linf error {err:.2e}, runtime {elapsed:.2f} s"


# -- 2 ------------------------------------------------------------------------------


def criterion_2():
    g = Grid(1, 1536, 3.0)  # h = 1/256
    r = g.radius(0.0)
    bb = Barenblatt(2.0, 1, 0.25)
    run = simulate(bb(r, 1.0), DriftField.zeros(g), SolverConfig(m=2.0, n_out=1), 1.0, t0=1.0)
    u = run.field.values[-1]
    l1 = float(np.sum(np.abs(u - bb(r, 2.0))) * g.h)
    moved = support_radius(u, g, 1e-6) - support_radius(run.field.values[0], g, 1e-6)
    exact = bb.front(2.0) - bb.front(1.0)
    rel = abs(moved - exact) / exact
    return l1 < 1e-2 and rel < 0.2, f"L1 error {l1:.2e}, front advance {moved:.4f} vs {exact:.4f} ({rel:.1%})"


# -- 3 ------------------------------------------------------------------------------


def criterion_3():
    g = Grid(2, 32, 1.0, bc="periodic")
    B = make_divfree(cellular_stream(1.0, 1.0), g)
    X, Y = g.mesh()
    u0 = np.exp(-((X - 0.2) ** 2 + Y**2) / 0.1)  # no background, so positivity is not automatic
    # fixed step below the CFL limit for any state with max u <= 1.2 (the maximum stays at 1 here)
    dt = 0.9 / (2 * 2 * 2 * 1.2 / g.h**2 + B.max_outflow_speed() / g.h)
    run = simulate(u0, B, SolverConfig(m=2.0, n_out=1), dt * 1e4, dt_fixed=dt, record_steps=True)
    mass = np.asarray(run.mass_trace)
    drift = float(np.max(np.abs(mass - mass[0])) / mass[0])
    steps = len(run.dt_trace)
    ok = steps >= 10_000 and drift <= 1e-12 and run.min_value >= -1e-12
    return ok, f"{steps} steps, mass drift {drift:.1e}, min u {run.min_value:.1e}"


# -- 4 ------------------------------------------------------------------------------


def criterion_4(n_points: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst_r = worst_w = 0.0
    for _ in range(n_points):
        d = int(rng.integers(1, 4))
        # critical pairs: 2/qh1 + d/qh2 = 2
        if d == 3 and rng.random() < 0.3:
            qh1, qh2 = INF, 1.5
        else:
            qh2 = float(rng.uniform(max(1.0, d / 2) + 0.01, 40.0))
            qh1 = 2.0 / (2.0 - d / qh2)
        crit = ExponentSpec(qh1, qh2, d, float(rng.uniform(1.0, 4.0)))
        norm, omega = float(rng.uniform(0.01, 100.0)), float(rng.uniform(1e-3, 1e3))
        vals = [rescaled_drift_norm(norm, omega, r, crit) for r in rng.uniform(1e-4, 1e2, 5)]
        worst_r = max(worst_r, (max(vals) - min(vals)) / abs(vals[0]))
        # linear diffusion, arbitrary exponents
        lin = ExponentSpec(float(rng.uniform(1.05, 50.0)), float(rng.uniform(1.05, 50.0)), d, 1.0)
        r = float(rng.uniform(1e-4, 1e2))
        vals = [rescaled_drift_norm(norm, w, r, lin) for w in rng.uniform(1e-3, 1e3, 5)]
        worst_w = max(worst_w, (max(vals) - min(vals)) / abs(vals[0]))
    ok = worst_r <= 1e-14 and worst_w <= 1e-14
    return ok, f"{n_points} points, worst r-spread {worst_r:.1e}, worst omega-spread {worst_w:.1e}"


# -- 5 ------------------------------------------------------------------------------


def criterion_5(n_points: int = 100, seed: int = 1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        d = int(rng.integers(1, 4))
        qh2 = float(rng.uniform(max(1.0, d / 2) + 0.01, 50.0))
        qh1 = INF if rng.random() < 0.25 else float(rng.uniform(1.01, 100.0))
        spec = ExponentSpec(qh1, qh2, d, 2.0)
        worst = max(worst, *map(abs, spec.duality_residuals()))
    return worst <= 1e-12, f"{n_points} random pairs, worst residual {worst:.1e}"


# -- 6 ------------------------------------------------------------------------------


def center_closed_form(N: float, m: float) -> float:
    return ((2 * lnln(N) - math.log(math.log(lnln(N)))) / lnln(N)) ** (1 / (m - 1))


VARRHO_SPEC = ExponentSpec(INF, 1.5, 3, 2.0)  # critical three-dimensional setting


def criterion_6_exactness():
    details, ok = [], True
    for N in (1e6, 1e12):
        fam = PhiFamily(N)
        exact = center_closed_form(N, 2.0)
        vals = closed_form_center_value(fam, 2.0)
        evaluated = {c: float(CounterexamplePair(fam, 2.0, c).state(np.zeros(3))) for c in ("bare", "displayed")}
        center_err = max(abs(vals["bare"] / exact - 1), abs(evaluated["bare"] / exact - 1),
                         abs(vals["displayed"] / (exact / 2) - 1), abs(evaluated["displayed"] / (exact / 2) - 1))
        g = Grid(1, 4000, 1.0)
        supp_cells = abs(measured_support_radius(CounterexamplePair(fam, 2.0), g) - 1 / lnln(N)) / g.h
        pair = CounterexamplePair(fam, 2.0)
        sups = [stationarity_residual(pair, Grid(1, n, 4 / N))["flux_sup"] for n in (320, 640, 1280)]
        ratios = [a / b for a, b in zip(sups, sups[1:])]
        rp = fam.plateau_radius
        vr = max(varrho_origin(fam, rp, VARRHO_SPEC), varrho_origin(fam, rp / 2, VARRHO_SPEC))
        ok &= center_err <= 1e-12 and supp_cells <= 1 and min(ratios) >= 1.7 and vr == 0.0
        details.append(
            f"N={N:.0e}: u(0) bare {vals['bare']:.15f} displayed {vals['displayed']:.15f} rel err {center_err:.1e}, "
            f"support off by {supp_cells:.2f} cells, flux_sup ratios {ratios[0]:.2f}/{ratios[1]:.2f}, "
            f"origin varrho {vr:g}"
        )
    return ok, "; ".join(details)


def criterion_6_sup_over_centres():
    """The modulus is a sup over all centres; off-centre balls reach the log zone."""
    vals = []
    for N in (1e6, 1e12):
        fam = PhiFamily(N)
        vals.append((N, varrho_sup(fam, fam.plateau_radius, VARRHO_SPEC)))
    ok = all(v["varrho"] == 0.0 for _, v in vals)
    detail = ", ".join(f"N={N:.0e}: sup {v['varrho']:.3g} at centre {v['argmax_center']:.3g}" for N, v in vals)
    return ok, detail


# -- 7 ------------------------------------------------------------------------------


def criterion_7():
    radii, oscs = [], []
    g = Grid(1, 2001, 1.0, dt=0.25)  # odd count: a cell centre sits on the origin
    for N in (1e3, 1e6, 1e12):
        fam = PhiFamily(N)
        pair = CounterexamplePair(fam, 2.0)
        R = support_radius_exact(fam)
        vals = np.asarray(pair.state(np.stack(g.mesh(), -1)))
        u = Field(g, np.repeat(vals[None], 4, 0))
        tr = osc_trace(u, (0.0,), R, 1.0, 0.5, 1, ExponentSpec(INF, 1.5, 1, 2.0), theta=0.1)
        analytic = float(pair.state(np.zeros(1))) - float(pair.state_radial(np.array([R]))[0])
        radii.append(R)
        oscs.append(min(tr.records[0].osc, analytic))
    ok = min(oscs) >= 0.4 and all(a > b for a, b in zip(radii, radii[1:]))
    detail = ", ".join(f"R={r:.3f} osc={o:.3f}" for r, o in zip(radii, oscs))
    return ok, detail


# -- 8 ------------------------------------------------------------------------------


def criterion_8():
    grid = (1.5, 2.0, 4.0)
    good = 0
    worst = 0
    for C, b, ka in itertools.product(grid, grid, (0.25, 0.5, 1.0)):
        res = iterate_lemma(IterationParams(C, b, ka, ka).at_threshold(), n_max=10_000, tol=1e-12)
        good += res.converged
        worst = max(worst, res.steps)
    return good == 27, f"{good}/27 converged, slowest in {worst} iterations"


# -- 9 ------------------------------------------------------------------------------


@lru_cache(maxsize=None)
def energy_run(case: str, n: int):
    if case == "heat":
        g = Grid(1, n, 2.0)
        B = DriftField.zeros(g)
        run = simulate(heat_kernel(g.radius(0.0), 0.05), B, SolverConfig(m=1.0, n_out=20), 0.1, t0=0.05)
        return run.field, B, 1.0
    if case == "barenblatt":
        g = Grid(1, n, 3.0)
        B = DriftField.zeros(g)
        bb = Barenblatt(2.0, 1, 0.25)
        run = simulate(bb(g.radius(0.0), 1.0), B, SolverConfig(m=2.0, n_out=20), 0.5, t0=1.0)
        return run.field, B, 2.0
    g = Grid(2, n, 1.0, bc="periodic")
    B = make_divfree(cellular_stream(1.0), g)
    X, Y = g.mesh()
    run = simulate(np.exp(-((X - 0.2) ** 2 + Y**2) / 0.05), B, SolverConfig(m=1.0, n_out=20), 0.1)
    return run.field, B, 1.0


# case: (resolutions for the local estimates, centre, rho), (resolutions, centre, rho, end level) for the log one
ENERGY_SUITE = {
    "heat": (((128, 256), (0.3,), 0.25), ((512, 1024), (0.8,), 0.2, 10)),
    "barenblatt": (((384, 768), (0.5,), 0.25), ((768, 1536), (1.4,), 0.3, 20)),
    "shear": (((32, 64), (0.2, 0.0), 0.4), ((64, 128), (0.9, 0.3), 0.25, 20)),
}


def local_estimates(case: str, n: int, center, rho: float) -> dict:
    u, B, m = energy_run(case, n)
    spec = ExponentSpec(INF, 2.0, u.grid.d, m)
    v = pressure_variable(u, m)
    t_top = float(v.times[-1])
    ball = Region.ball(v.grid, np.asarray(center), rho, 0, v.n_levels)
    s = v.values[:, ball.mask]
    k = 0.5 * float(s.max() - s.min())
    theta = 0.05 / (k ** (-spec.beta) * rho**2)  # time depth 0.05 whatever k is
    cyl = intrinsic_cylinder(center, t_top, k, rho, theta, m)
    cut = Cutoff.for_cylinder(cyl, 0.5, 0.5)
    return {
        "plus": energy_gap(v, B, cyl, k, cut, spec).minimal_C,
        "minus": energy_gap(v, B, cyl, k, cut, spec, sign="minus").minimal_C,
        "critical": energy_gap_critical(v, B, cyl, k, cut, spec).minimal_C,
    }


def log_estimate(case: str, n: int, center, rho: float, level: int) -> float:
    u, B, m = energy_run(case, n)
    spec = ExponentSpec(INF, 2.0, u.grid.d, m)
    v = pressure_variable(u, m)
    ball = Region.ball(v.grid, np.asarray(center), rho, 0, level + 1)
    k = 0.5 * float(v.values[: level + 1][:, ball.mask].max())
    return log_energy_gap(v, B, center, rho, float(v.times[0]), float(v.times[level]), 0.25, k,
                          Cutoff(center, rho, rho / 2), spec).minimal_C


def spread(a: float, b: float) -> float:
    return abs(a - b) / max(a, b) if max(a, b) > 0 else 0.0


def criterion_9(case: str):
    (ns, c, rho), (ns_log, c_log, rho_log, level) = ENERGY_SUITE[case]
    coarse, fine = (local_estimates(case, n, c, rho) for n in ns)
    coarse["log"], fine["log"] = (log_estimate(case, n, c_log, rho_log, level) for n in ns_log)
    ok = True
    parts = []
    for kind in ("plus", "minus", "critical", "log"):
        a, b = coarse[kind], fine[kind]
        good = math.isfinite(a) and math.isfinite(b) and a > 0 and b > 0 and spread(a, b) < 0.25
        ok &= good
        parts.append(f"{kind} {a:.3g}->{b:.3g} ({spread(a, b):.1%})")
    return ok, f"{case}: " + ", ".join(parts)


# -- 10 -----------------------------------------------------------------------------


def holder_trace(n: int):
    spec = ExponentSpec(INF, 4.0, 2, 2.0)  # kappa = 1/2
    g = Grid(2, n, 1.0, bc="periodic")
    B = make_divfree(cellular_stream(1.0), g)
    X, Y = g.mesh()
    run = simulate(0.3 + np.exp(-((X - 0.2) ** 2 + Y**2) / 0.1), B, SolverConfig(m=2.0, n_out=100), 0.2)
    v = pressure_variable(run.field, 2.0)
    return osc_trace(v, (0.3, 0.1), 0.4, None, 0.75, 6, spec, theta=0.1)


def criterion_10():
    traces = [holder_trace(n) for n in (64, 128)]
    fits = [fit_holder(t) for t in traces]
    gates = all(r.short_circuit_ok for t in traces for r in t.records)
    complete = not any(t.truncated for t in traces)
    alphas = [f.alpha for f in fits]
    ok = (complete and gates and all(a is not None and a > 0 for a in alphas)
          and all(f.residual < 0.1 for f in fits) and spread(*alphas) < 0.2)
    detail = ", ".join(f"n={n}: alpha {f.alpha:.3f} residual {f.residual:.3f}" for n, f in zip((64, 128), fits))
    return ok, f"{detail}, short-circuit algebra {'holds' if gates else 'violated'} on every record"


# -- 11 -----------------------------------------------------------------------------


def criterion_11(tmp):
    config = {
        "grid": {"d": 2, "n_cells": 24, "L": 1.0, "bc": "periodic"},
        "solver": {"m": 2.0, "n_out": 4},
        "drift": {"stream": {"family": "cellular", "amplitude": 1.0}},
        "initial": {"kind": "random", "background": 0.5, "amplitude": 0.5},
        "T": 0.02,
        "seed": 2024,
    }
    path = tmp / "config.json"
    path.write_text(json.dumps(config))
    outs = [tmp / "first", tmp / "second"]
    codes = [cli_run(["simulate", "--config", str(path), "--out", str(o)])[0] for o in outs]
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = bool(names) and all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    return codes == [0, 0] and same, f"{len(names)} CSV files compared, identical: {same}"


# -- pytest entry points ---------------------------------------------------------------


def check(label: str, result) -> None:
    ok, detail = result
    report(label, ok, detail)
    assert ok, detail


def test_criterion_1_heat_kernel_oracle():
    check("1 (heat-kernel oracle)", criterion_1())


def test_criterion_2_barenblatt_oracle():
    check("2 (Barenblatt oracle)", criterion_2())


def test_criterion_3_conservation_and_positivity():
    check("3 (conservation and positivity)", criterion_3())


def test_criterion_4_scaling_law():
    check("4 (scaling law)", criterion_4())


def test_criterion_5_duality_identities():
    check("5 (duality identities)", criterion_5())


def test_criterion_6_counterexample_exactness():
    check("6 (counterexample values, support, stationarity, origin-centred varrho)", criterion_6_exactness())


def test_criterion_6_varrho_sup_over_centres():
    check("6 (varrho as a sup over all centres vanishes below the plateau radius)", criterion_6_sup_over_centres())


def test_criterion_7_loss_of_common_modulus():
    check("7 (loss of a common modulus)", criterion_7())


def test_criterion_8_iteration_lemma():
    check("8 (iteration lemma sweep)", criterion_8())


@pytest.mark.parametrize("case", list(ENERGY_SUITE))
def test_criterion_9_energy_stability(case):
    check(f"9 (energy stability, {case})", criterion_9(case))


def test_criterion_10_holder_measurement():
    check("10 (Hoelder measurement)", criterion_10())


def test_criterion_11_determinism(tmp_path):
    check("11 (determinism)", criterion_11(tmp_path))


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    runs = [
        ("1", criterion_1), ("2", criterion_2), ("3", criterion_3), ("4", criterion_4), ("5", criterion_5),
        ("6 exactness", criterion_6_exactness), ("6 sup over centres", criterion_6_sup_over_centres),
        ("7", criterion_7), ("8", criterion_8),
        *[(f"9 {c}", lambda c=c: criterion_9(c)) for c in ENERGY_SUITE],
        ("10", criterion_10),
    ]
    failed = 0
    for label, fn in runs:
        ok, detail = fn()
        report(label, ok, detail)
        failed += not ok
    with tempfile.TemporaryDirectory() as tmp:
        ok, detail = criterion_11(Path(tmp))
        report("11", ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
