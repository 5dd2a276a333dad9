#!/usr/bin/env python3
"""
Re-solve every row of the published results table and print theory value, solved
value, deviation, number of required probabilities and solve time.

Usage: python scripts/reproduce_results_table.py [--psi4] [--solver SCS]
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import structlog

from entdim.deps import configure_logging
from entdim.services.bench import required_probabilities
from entdim.services.measurements import appendix_settings
from entdim.services.sdp import synthesize
from entdim.services.solver import SolverOptions
from entdim.services.states import max_entangled, rho_iso2, rho_unf

logger = structlog.get_logger("reproduce_results_table")

TOLERANCE = 0.005
PSI4_TOLERANCE = 0.01

ROWS = [
    ("unf", 0.0, 2, 0.167),
    ("unf", 0.2, 2, 0.112),
    ("unf", 0.4, 2, 0.070),
    ("unf", 0.6, 2, 0.040),
    ("unf", 0.8, 2, 0.018),
    ("unf", 1.0, 2, 0.0),
    ("iso2", 0.5, 1, 0.146),
    ("iso2", 0.6, 1, 0.108),
    ("iso2", 0.7, 1, 0.071),
    ("iso2", 0.8, 1, 0.033),
    ("iso2", 0.9, 1, 0.0),
    ("iso2", 1.0, 1, 0.0),
]


def target_for(family: str, p: float):
    if family == "psi4":
        return max_entangled(4).density()
    return rho_unf(p) if family == "unf" else rho_iso2(p)


def solve_row(family: str, p: float, D: int, options: SolverOptions):
    start = time.perf_counter()
    result = synthesize(target_for(family, p), appendix_settings(family), D, options)
    return result, time.perf_counter() - start


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--psi4", action="store_true", help="also solve Psi_4 with the two PSI4 settings at D=3")
    parser.add_argument("--solver", default=None)
    args = parser.parse_args()
    configure_logging("WARNING")
    options = SolverOptions.from_settings(solver=args.solver)

    rows = list(ROWS)
    if args.psi4:
        rows.append(("psi4", None, 3, 0.084))

    print(f"{'target':<12} {'D':>2} {'theory':>8} {'solved':>8} {'dev':>8} {'N_P':>5} {'time_s':>8}  status")
    failures = 0
    for family, p, D, expected in rows:
        label = family if p is None else f"{family}_{p:.1f}"
        result, elapsed = solve_row(family, p, D, options)
        cert = result.certificate
        if cert is None:
            print(f"{label:<12} {D:>2} {expected:>8.3f} {'-':>8} {'-':>8} {'-':>5} {elapsed:>8.2f}  {result.status.value}")
            failures += 1
            continue

        deviation = cert.robustness - expected
        tolerance = PSI4_TOLERANCE if family == "psi4" else TOLERANCE
        ok = abs(deviation) <= tolerance
        print(
            f"{label:<12} {D:>2} {expected:>8.3f} {cert.robustness:>8.4f} {deviation:>+8.4f} "
            f"{required_probabilities(cert.policy):>5} {elapsed:>8.2f}  {cert.solver_status.value}{'' if ok else '  MISMATCH'}"
        )
        if ok:
            continue
        if family == "psi4":
            # the PSI4 settings do not reproduce the published Psi_4 value; report only
            logger.warning("psi4_discrepancy", solved=cert.robustness, published=expected)
        else:
            failures += 1

    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
