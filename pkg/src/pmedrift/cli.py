"""Batch front-end: one JSON config, one command, CSV/JSON outputs with sidecars.

Usage::

    pmedrift simulate --config run.json --out results/ [--seed 7]

Every file written gets a ``<name>.meta.json`` sidecar holding the tool
version, a SHA-256 hash of the effective config and the seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .degiorgi import (
    Cutoff,
    IterationParams,
    energy_gap,
    energy_gap_critical,
    fit_holder,
    iterate_lemma,
    log_energy_gap,
    osc_trace,
    pressure_variable,
    self_consistent_k,
)
from .drifts import (
    CounterexamplePair,
    PhiFamily,
    analytic_drift,
    cellular_stream,
    closed_form_center_value,
    counterexample_drift_field,
    emit_counterexample,
    make_divfree,
    measured_support_radius,
    shear_stream,
    support_radius_exact,
)
from .grid import DriftField, Field, Grid, intrinsic_cylinder
from .norms import ExponentSpec, random_vanishing_fields, varrho_profile
from .solver import Barenblatt, SolverConfig, bump, heat_kernel, simulate

COMMANDS = ("classify", "simulate", "osc", "energy", "varrho", "counterexample", "iterate")


class ConfigError(ValueError):
    pass


# -- config handling --------------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    command: str
    raw: dict
    seed: int
    out: Path

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def section(self, name: str, default=None):
        val = self.raw.get(name, default)
        if val is None:
            raise ConfigError(f"config is missing the {name!r} section")
        return val


def load_config(path: str | None, command: str, seed: int | None, out: str) -> RunConfig:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        raw = json.loads(p.read_text())
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for {raw['command']!r}, not {command!r}")
    raw["command"] = command
    if seed is not None:
        raw["seed"] = int(seed)
    raw.setdefault("seed", 0)
    drift = raw.get("drift", {})
    if isinstance(drift, dict) and "file" in drift and not Path(drift["file"]).is_file():
        raise ConfigError(f"drift file {drift['file']} does not exist")
    return RunConfig(command, raw, int(raw["seed"]), Path(out))


class Writer:
    """Writes outputs plus sidecars into one directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        cfg.out.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def _sidecar(self, name: str) -> None:
        meta = {"tool_version": __version__, "config_hash": self.cfg.config_hash, "seed": self.cfg.seed}
        (self.cfg.out / f"{name}.meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    def text(self, name: str, content: str) -> None:
        with open(self.cfg.out / name, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(content)
        self._sidecar(name)
        self.written.append(name)

    def json(self, name: str, obj) -> None:
        payload = {"config": self.cfg.raw, "config_hash": self.cfg.config_hash, "seed": self.cfg.seed,
                   "tool_version": __version__, "result": obj}
        self.text(name, json.dumps(payload, sort_keys=True, indent=2, default=_default) + "\n")


def _default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    if dataclasses.is_dataclass(x):
        return dataclasses.asdict(x)
    raise TypeError(f"not serializable: {type(x)}")


def _g(x: float) -> str:
    return format(float(x), ".17g")


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_g(v) if not isinstance(v, str) else v for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# -- builders ---------------------------------------------------------------------


def build_grid(cfg: RunConfig) -> Grid:
    return Grid.from_dict(cfg.section("grid"))


def build_solver(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(**cfg.raw.get("solver", {}))


def build_spec(cfg: RunConfig) -> ExponentSpec:
    return ExponentSpec.from_dict(cfg.section("exponents"))


def build_family(spec: dict) -> PhiFamily:
    return PhiFamily(float(spec["N"]), float(spec.get("alpha_plateau", 2.0)),
                     spec.get("r_plateau"), spec.get("variant", "default"))


def build_drift(cfg: RunConfig, grid: Grid) -> DriftField:
    d = cfg.raw.get("drift", {"family": "zero"})
    cap = d.get("cap")
    if "family" in d:
        return analytic_drift(grid, d["family"], d.get("params"), cap=cap)
    if "stream" in d:
        s = d["stream"]
        maker = {"cellular": cellular_stream, "shear": shear_stream}.get(s.get("family", "cellular"))
        if maker is None:
            raise ConfigError(f"unknown stream family {s.get('family')!r}")
        return make_divfree(maker(float(s.get("amplitude", 1.0)), float(s.get("freq", 1.0))), grid)
    if "counterexample" in d:
        return counterexample_drift_field(build_family(d["counterexample"]), grid, cap=cap)
    if "file" in d:
        data = np.load(d["file"])
        vals = data["values"] if hasattr(data, "files") else data
        return DriftField(grid, vals)
    raise ConfigError("drift needs one of family, stream, counterexample, file")


def build_initial(cfg: RunConfig, grid: Grid) -> tuple[np.ndarray, float, object]:
    """(u0, t0, oracle) where oracle(x_radius, t) gives the exact solution or None."""
    ini = cfg.section("initial")
    kind = ini.get("kind")
    r = grid.radius(ini.get("center", 0.0))
    if kind == "heat_kernel":
        t0 = float(ini.get("t0", 0.0))
        mass = float(ini.get("mass", 1.0))
        if t0 > 0:
            u0 = heat_kernel(r, t0, grid.d, mass)
        else:
            # point mass in the cell containing the centre
            u0 = np.zeros(grid.shape)
            u0[np.unravel_index(np.argmin(r), grid.shape)] = mass / grid.cell_volume
        return u0, t0, lambda rr, t: heat_kernel(rr, t, grid.d, mass)
    if kind == "barenblatt":
        bb = Barenblatt(float(ini.get("m", cfg.raw.get("solver", {}).get("m", 2.0))), grid.d, float(ini.get("C", 0.25)))
        t0 = float(ini.get("t0", 1.0))
        return bb(r, t0), t0, bb
    if kind == "bump":
        base = float(ini.get("background", 0.0))
        return base + float(ini.get("amplitude", 1.0)) * bump(grid, ini.get("center", 0.0), float(ini.get("radius", 0.5))), 0.0, None
    if kind == "gaussian":
        w = float(ini.get("width", 0.1))
        base = float(ini.get("background", 0.0))
        return base + float(ini.get("amplitude", 1.0)) * np.exp(-(r**2) / w), 0.0, None
    if kind == "random":
        f = random_vanishing_fields(grid, 1, 1, cfg.seed, int(ini.get("modes", 3)))[0]
        pert = f.values[0]
        scale = float(np.max(np.abs(pert))) or 1.0
        return float(ini.get("background", 1.0)) + float(ini.get("amplitude", 0.5)) * pert / scale, 0.0, None
    raise ConfigError(f"unknown initial kind {kind!r}")


def run_solver(cfg: RunConfig):
    grid = build_grid(cfg)
    B = build_drift(cfg, grid)
    u0, t0, oracle = build_initial(cfg, grid)
    T = float(cfg.raw.get("T", 0.0))
    run = simulate(u0, B, build_solver(cfg), T, t0=t0)
    return grid, B, run, oracle


# -- commands ---------------------------------------------------------------------


def _kappa_text(kappa: float) -> str:
    if abs(kappa) < 1e-12:
        return "0"
    frac = Fraction(kappa).limit_denominator(1000)
    text = format(kappa, ".6g")
    if abs(float(frac) - kappa) < 1e-12 and frac.denominator != 1 and str(float(frac)) != text:
        text += f" (={frac})"
    return text


def cmd_classify(cfg: RunConfig, w: Writer) -> dict:
    spec = build_spec(cfg)
    r1, r2 = spec.duality_residuals()
    omega_exp, r_exp = spec.rescaling_exponents()
    report = {
        "kappa": spec.kappa,
        "regime": spec.regime,
        "q1": spec.q1,
        "q2": spec.q2,
        "duality_residuals": [r1, r2],
        "rescaling_exponents": {"omega": omega_exp, "r": r_exp},
        "summary": f"{spec.regime}, κ={_kappa_text(spec.kappa)}",
        "warnings": [],
    }
    if spec.regime == "supercritical":
        report["warnings"].append("supercritical exponents: the regularity theory does not cover this case")
    print(report["summary"])
    for msg in report["warnings"]:
        print(f"warning: {msg}")
    w.json("classify.json", report)
    return report


def _grid_columns(grid: Grid) -> tuple[list[str], list[np.ndarray]]:
    names = ["x", "y"][: grid.d]
    return names, [c.ravel() for c in grid.mesh()]


def cmd_simulate(cfg: RunConfig, w: Writer) -> dict:
    grid, B, run, oracle = run_solver(cfg)
    names, cols = _grid_columns(grid)
    f = run.field
    for j in range(f.n_levels):
        rows = zip(*cols, f.values[j].ravel())
        w.text(f"snapshot_{j:04d}.csv", _csv(names + ["u"], rows))
    meta = {"times": f.times.tolist(), **run.metadata(), "dt_trace": run.dt_trace}
    if oracle is not None and f.n_levels > 1:
        r = grid.radius(cfg.raw["initial"].get("center", 0.0))
        exact = oracle(r, float(f.times[-1]))
        err = f.values[-1] - exact
        meta["oracle"] = {"linf": float(np.max(np.abs(err))), "l1": float(np.sum(np.abs(err)) * grid.cell_volume)}
    w.json("metadata.json", meta)
    return meta


def _field_for_diagnostics(cfg: RunConfig):
    """Solver output, or a counterexample state read as a time-constant field."""
    src = cfg.raw.get("source", {"kind": "simulate"})
    if src.get("kind") == "counterexample":
        grid = build_grid(cfg)
        pair = CounterexamplePair(build_family(src), float(src.get("m", 2.0)), src.get("convention", "displayed"))
        pts = np.stack(grid.mesh(), axis=-1)
        vals = np.asarray(pair.state(pts))
        n_levels = int(src.get("n_levels", 4))
        return Field(grid.with_dt(float(src.get("dt", 0.25))), np.repeat(vals[None], n_levels, axis=0)), DriftField.zeros(grid), 1.0
    grid, B, run, _ = run_solver(cfg)
    m = build_solver(cfg).m
    return run.field, B, m


def cmd_osc(cfg: RunConfig, w: Writer) -> dict:
    u, _, m = _field_for_diagnostics(cfg)
    spec = build_spec(cfg)
    diag = cfg.section("diagnostics")
    v = pressure_variable(u, m) if m != 1 else u
    k0 = diag.get("k0")
    trace = osc_trace(v, diag["center"], float(diag["r0"]), None if k0 is None else float(k0),
                      float(diag.get("lambda", 0.75)), int(diag.get("n", 6)), spec,
                      theta=float(diag.get("theta", 1.0)), delta_star=float(diag.get("delta_star", 0.5)),
                      nu0=float(diag.get("nu0", 0.1)))
    nonzero = sum(1 for r in trace.records if r.osc > 0)
    if nonzero == 0 or nonzero >= 4:
        fit = fit_holder(trace).to_dict()
    else:
        fit = {"applicable": False, "reason": "fewer than 4 nonzero records"}
    w.text("trace.csv", trace.to_csv())
    result = {"trace": trace.to_dict(), "fit": fit}
    w.json("trace.json", result)
    return result


def cmd_energy(cfg: RunConfig, w: Writer) -> dict:
    u, B, m = _field_for_diagnostics(cfg)
    spec = build_spec(cfg)
    diag = cfg.section("diagnostics")
    v = pressure_variable(u, m)
    center = diag["center"]
    rho = float(diag["rho"])
    t_top = float(v.times[-1])
    k = diag.get("k")
    theta = float(diag.get("theta", 1.0))
    if k is None:
        k = 0.5 * self_consistent_k(v, center, rho, theta, m, t_top)
    cyl = intrinsic_cylinder(center, t_top, float(k), rho, theta, m)
    cut = Cutoff.for_cylinder(cyl, float(diag.get("width_fraction", 0.5)), diag.get("time_fraction", 0.5))
    reports = {
        "plus": energy_gap(v, B, cyl, float(k), cut, spec, "plus").to_dict(),
        "minus": energy_gap(v, B, cyl, float(k), cut, spec, "minus").to_dict(),
    }
    if B.max_divergence() <= 1e-10 * max(float(np.abs(B.values).max()), 1e-300) or B.is_zero:
        reports["critical"] = energy_gap_critical(v, B, cyl, float(k), cut, spec).to_dict()
    log_cfg = diag.get("log")
    if log_cfg:
        c = log_cfg.get("center", center)
        r = float(log_cfg.get("rho", rho))
        reports["log"] = log_energy_gap(
            v, B, c, r, float(v.times[int(log_cfg.get("start_level", 0))]),
            float(v.times[int(log_cfg.get("end_level", -1))]), float(log_cfg.get("delta", 0.25)),
            float(log_cfg.get("k", k)), Cutoff(c, r, r * float(log_cfg.get("width_fraction", 0.5))), spec,
        ).to_dict()
    w.json("energy.json", reports)
    return reports


def cmd_varrho(cfg: RunConfig, w: Writer) -> dict:
    grid = build_grid(cfg)
    B = build_drift(cfg, grid)
    spec = build_spec(cfg)
    radii = cfg.raw.get("radii") or np.geomspace(grid.h, 1.0, 12).tolist()
    prof = varrho_profile(B, radii, spec)
    w.text("varrho.csv", prof.to_csv())
    result = {"radii": prof.radii, "varrho": prof.values, "monotone": prof.is_monotone(),
              "cap": B.cap, "cap_events": B.cap_events}
    w.json("varrho.json", result)
    return result


def cmd_counterexample(cfg: RunConfig, w: Writer) -> dict:
    ce = cfg.section("counterexample")
    fam = build_family(ce)
    m = float(ce.get("m", 2.0))
    pair = CounterexamplePair(fam, m, ce.get("convention", "displayed"))
    radii = ce.get("radii") or np.concatenate([[0.0], np.geomspace(fam.plateau_radius / 10 or 1e-300, 1.0, 200)]).tolist()
    emission = emit_counterexample(pair, radii, int(ce.get("d", 3)))
    meta = dict(emission.metadata)
    grid_spec = cfg.raw.get("grid", {"d": 1, "n_cells": 2000, "L": 1.0})
    grid = Grid.from_dict(grid_spec)
    if m > 1:
        measured = measured_support_radius(pair, grid)
        meta["support_radius_measured"] = measured
        meta["support_radius_error_cells"] = abs(measured - support_radius_exact(fam)) / grid.h
    center = float(np.asarray(pair.state(np.zeros(3))))
    meta["center_value_evaluated"] = center
    meta["center_value_closed_form"] = closed_form_center_value(fam, m)
    w.text("counterexample.csv", emission.csv)
    w.json("counterexample.json", meta)
    return meta


def cmd_iterate(cfg: RunConfig, w: Writer) -> dict:
    it = cfg.section("iteration")
    base = IterationParams(float(it.get("C", 2.0)), float(it.get("b", 2.0)), float(it.get("kappa", 0.5)),
                           float(it.get("alpha", it.get("kappa", 0.5))), float(it.get("Y0", 0.0)), float(it.get("Z0", 0.0)))
    if it.get("init") == "threshold":
        base = base.at_threshold(float(it.get("share", 0.5)))
    elif "scale" in it:
        s = float(it["scale"]) * base.threshold
        base = IterationParams(base.C, base.b, base.kappa, base.alpha, 0.5 * s, (0.5 * s) ** (1 / (1 + base.kappa)))
    res = iterate_lemma(base, int(it.get("n_max", 10_000)))
    w.text("iteration.csv", _csv(["n", "Y", "Z"], ((str(n), y, z) for n, (y, z) in enumerate(zip(res.Y, res.Z)))))
    summary = {"converged": res.converged, "diverged": res.diverged, "threshold_value": res.threshold_value,
               "initial_excess": res.initial_excess, "steps": res.steps, "params": dataclasses.asdict(base)}
    w.json("iteration.json", summary)
    return summary


HANDLERS = {
    "classify": cmd_classify,
    "simulate": cmd_simulate,
    "osc": cmd_osc,
    "energy": cmd_energy,
    "varrho": cmd_varrho,
    "counterexample": cmd_counterexample,
    "iterate": cmd_iterate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmedrift", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
    return p


def run(argv: list[str] | None = None) -> tuple[int, dict | None]:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, args.seed, args.out)
        result = HANDLERS[args.command](cfg, Writer(cfg))
    except (ValueError, RuntimeError, KeyError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1, None
    return 0, result


def main(argv: list[str] | None = None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
