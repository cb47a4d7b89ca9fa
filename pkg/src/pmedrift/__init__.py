"""Porous medium equation with drift: solver, drift norms and level-set diagnostics."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .grid import Cylinder, DriftField, Field, Grid, Region, intrinsic_cylinder, oscillation
from .norms import ExponentSpec, ModulusProfile, mixed_norm, rescaled_drift_norm, varrho
from .solver import Barenblatt, SolverConfig, heat_kernel, simulate

__all__ = [
    "Barenblatt",
    "Cylinder",
    "DriftField",
    "ExponentSpec",
    "Field",
    "Grid",
    "ModulusProfile",
    "Region",
    "SolverConfig",
    "__version__",
    "heat_kernel",
    "intrinsic_cylinder",
    "mixed_norm",
    "oscillation",
    "rescaled_drift_norm",
    "simulate",
    "varrho",
]
