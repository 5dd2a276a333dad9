"""
Command-line entry point for entdim
"""
import argparse
import json
import sys
from typing import Callable, Dict, List, Optional, Tuple

import structlog
from pydantic import BaseModel, ValidationError

from entdim.commands.bench import BenchJob, run_bench
from entdim.commands.protocols import SynthJob, VerifyJob, run_synth, run_verify
from entdim.commands.statistics import (
    CertifyJob,
    PvalueJob,
    SampleJob,
    SimulateJob,
    run_certify,
    run_pvalue,
    run_sample,
    run_simulate,
)
from entdim.deps import configure_logging
from entdim.exceptions import DocumentError, EntdimError

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2


def _add_solver_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("solver")
    group.add_argument("--solver", help="auto, SCS, CLARABEL or any installed cvxpy solver")
    group.add_argument("--feas-tol", dest="feas_tol", type=float)
    group.add_argument("--gap-tol", dest="gap_tol", type=float)
    group.add_argument("--max-iter", dest="max_iter", type=int)


def _add_target_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("target")
    group.add_argument("--family", help="max_entangled, unf or iso2")
    group.add_argument("--p", type=float, help="mixing parameter of the unf and iso2 families")
    group.add_argument("--dim", type=int, help="local dimension of max_entangled")
    group.add_argument("--state-file", dest="state_file", help="StateDocument JSON used instead of a family")
    group.add_argument("--settings", help="unf, iso2, psi4 or gell_mann")
    group.add_argument("--settings-file", dest="settings_file", help="MeasurementSetDocument JSON")


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser"""
    parser = argparse.ArgumentParser(
        prog="entdim",
        description="Certify entanglement dimension with optimal one-way LOCC protocols",
    )
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-json", dest="log_json", action="store_true", default=None)
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="solve for the optimal protocol and write a certificate")
    _add_target_options(synth)
    synth.add_argument("--D", dest="D", type=int, required=True, help="Schmidt number to exceed")
    synth.add_argument("--level", type=int)
    synth.add_argument("--output", "-o")
    synth.add_argument("--no-witness", dest="include_witness", action="store_false", default=None)
    _add_solver_options(synth)

    verify = commands.add_parser("verify", help="re-prove the type-I bound of a certificate")
    verify.add_argument("certificate")
    verify.add_argument("--slack", type=float)
    verify.add_argument("--tol", type=float)
    verify.add_argument("--oracle-samples", dest="oracle_samples", type=int)
    verify.add_argument("--seed", type=int)
    verify.add_argument("--tightest", action="store_true", default=None, help="also report the smallest certifiable p1")
    _add_solver_options(verify)

    simulate = commands.add_parser("simulate", help="run a certified protocol round by round")
    simulate.add_argument("certificate")
    simulate.add_argument("--rounds", "-n", type=int, required=True)
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--source", choices=["target", "product"])
    simulate.add_argument("--significance", type=float)

    pvalue = commands.add_parser("pvalue", help="p-value of v outcomes C in n rounds")
    pvalue.add_argument("--v", type=int, required=True)
    pvalue.add_argument("--n", type=int, required=True)
    pvalue.add_argument("--p1", type=float, required=True)
    pvalue.add_argument("--p2", type=float)
    pvalue.add_argument("--significance", type=float)

    sample = commands.add_parser("sample", help="sample an experiment record from a certificate's target")
    sample.add_argument("certificate")
    sample.add_argument("--rounds-per-pair", dest="rounds_per_pair", type=int, required=True)
    sample.add_argument("--seed", type=int)
    sample.add_argument("--all-pairs", dest="all_pairs", action="store_true", default=None)
    sample.add_argument("--output", "-o")

    certify = commands.add_parser("certify", help="experimental verdict from a stored record")
    certify.add_argument("certificate")
    certify.add_argument("record")

    bench = commands.add_parser("bench", help="robustness benchmark over random Schmidt-rank-2 states")
    bench.add_argument("--n-states", dest="n_states", type=int)
    bench.add_argument("--families", help="comma separated setting families")
    bench.add_argument("--D", dest="D", type=int)
    bench.add_argument("--seed", type=int)
    bench.add_argument("--workers", type=int)
    bench.add_argument("--chunksize", type=int, help="states handed to a worker at a time")
    bench.add_argument("--output-directory", dest="output_directory")
    _add_solver_options(bench)

    return parser


COMMANDS: Dict[str, Tuple[type, Callable]] = {
    "synth": (SynthJob, run_synth),
    "verify": (VerifyJob, run_verify),
    "simulate": (SimulateJob, run_simulate),
    "pvalue": (PvalueJob, run_pvalue),
    "sample": (SampleJob, run_sample),
    "certify": (CertifyJob, run_certify),
    "bench": (BenchJob, run_bench),
}


def build_job(args: argparse.Namespace) -> BaseModel:
    """Validate parsed arguments into the command's job spec; unset flags keep model defaults"""
    job_model, _ = COMMANDS[args.command]
    values = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "log_level", "log_json") and value is not None
    }
    return job_model.model_validate(values)


def _error_payload(error: Exception) -> Dict[str, Optional[str]]:
    if isinstance(error, ValidationError):
        first = error.errors()[0] if error.errors() else {}
        field = ".".join(str(part) for part in first.get("loc", ())) or None
        return {"error": "ValidationError", "detail": first.get("msg", str(error)), "field": field}
    field = error.field if isinstance(error, DocumentError) else None
    return {"error": type(error).__name__, "detail": str(error), "field": field}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    args = create_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    _, handler = COMMANDS[args.command]

    try:
        result = handler(build_job(args))
    except (EntdimError, ValidationError) as e:
        payload = _error_payload(e)
        logger.error("command_rejected", command=args.command, **payload)
        print(json.dumps(payload), file=sys.stderr)
        return EXIT_INPUT

    print(result.model_dump_json(indent=2))
    failure = result.failure()
    if failure is not None:
        logger.error("command_failed", command=args.command, **failure)
        print(json.dumps(failure), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
