"""Refinement study of minimal_C for the energy estimates on heat, Barenblatt and shear runs."""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from test_acceptance import ENERGY_SUITE, local_estimates, log_estimate, spread  # noqa: E402


def study(case: str, factor: int) -> dict:
    (ns, c, rho), (ns_log, c_log, rho_log, level) = ENERGY_SUITE[case]
    levels = [ns[0] * 2**i for i in range(factor)]
    levels_log = [ns_log[0] * 2**i for i in range(factor)]
    local = [local_estimates(case, n, c, rho) for n in levels]
    logs = [log_estimate(case, n, c_log, rho_log, level) for n in levels_log]
    out = {"case": case, "n_local": levels, "n_log": levels_log,
           "minimal_C": {k: [r[k] for r in local] for k in ("plus", "minus", "critical")}}
    out["minimal_C"]["log"] = logs
    out["max_adjacent_spread"] = {k: max(spread(a, b) for a, b in zip(v, v[1:])) for k, v in out["minimal_C"].items()}
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", nargs="+", default=list(ENERGY_SUITE), choices=list(ENERGY_SUITE))
    ap.add_argument("--levels", type=int, default=2, help="number of resolutions, each halving h")
    args = ap.parse_args(argv)
    print(json.dumps([study(c, args.levels) for c in args.cases], indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
