"""
Protocol commands: synthesize a certificate, verify a stored one
"""
import os
from typing import Dict, List, Optional

import numpy as np
import structlog
from pydantic import Field

from entdim.commands.common import CommandResult, SolverJob, TargetJob, resolve_job
from entdim.deps import create_output_directory, settings
from entdim.services.sdp import (
    HIERARCHY_LEVEL,
    minimal_type_one_error,
    randomized_witness_oracle,
    synthesize,
    verify_witness,
)
from entdim.storage.models import CertificateDocument, SolverStatus, WitnessStatus
from entdim.storage.repo import DocumentRepository, certificate_from_document, certificate_to_document

logger = structlog.get_logger(__name__)


class SynthJob(TargetJob):
    D: int = Field(..., ge=1, description="Schmidt number to exceed")
    level: int = Field(default=HIERARCHY_LEVEL, ge=1)
    output: Optional[str] = Field(default=None, description="Certificate path; defaults to <output_directory>/<target>_D<D>.json")
    include_witness: bool = True


class SynthResult(CommandResult):
    command: str = "synth"
    status: SolverStatus
    output: Optional[str] = None
    p1: Optional[float] = None
    p2: Optional[float] = None
    robustness: Optional[float] = None
    witness_residual: Optional[float] = None
    nonzero_entries: Optional[int] = None
    message: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status.solved

    def failure(self) -> Optional[Dict[str, Optional[str]]]:
        if self.ok:
            return None
        return {"error": "SolveError", "detail": self.message or f"solver status {self.status.value}", "field": None}


def default_certificate_path(label: str, D: int) -> str:
    return os.path.join(create_output_directory(), f"{label}_D{D}.json")


def run_synth(job: SynthJob, repo: Optional[DocumentRepository] = None) -> SynthResult:
    """Solve for the optimal protocol and write its certificate"""
    repo = repo or DocumentRepository()
    target, rho, meas = resolve_job(job, repo)
    log = logger.bind(target=target.label, settings=meas.family, D=job.D)

    result = synthesize(rho, meas, job.D, job.solver_options(), job.level)
    cert = result.certificate
    if cert is None:
        log.error("synth_unsolved", status=result.status.value, message=result.solution.message)
        return SynthResult(status=result.status, message=result.solution.message)

    document = certificate_to_document(cert, target, rho, meas, include_witness=job.include_witness)
    path = repo.save(document, job.output or default_certificate_path(target.label, job.D))
    log.info("synth_finished", robustness=cert.robustness, output=str(path))
    return SynthResult(
        status=cert.solver_status,
        output=str(path),
        p1=cert.p1,
        p2=cert.p2,
        robustness=cert.robustness,
        witness_residual=cert.witness_residual,
        nonzero_entries=len(document.policy),
    )


class VerifyJob(SolverJob):
    certificate: str
    slack: float = Field(default_factory=lambda: settings.witness_slack, ge=0.0)
    tol: float = Field(default=1e-6, gt=0.0)
    oracle_samples: int = Field(default_factory=lambda: settings.oracle_samples, ge=0)
    seed: int = 0
    tightest: bool = Field(default=False, description="Also solve for the smallest p1 the witness certifies")


class VerifyResult(CommandResult):
    command: str = "verify"
    p1: float
    p2: float
    p2_recomputed: float
    witness: WitnessStatus
    residual: Optional[float] = None
    oracle_max: Optional[float] = None
    oracle_bound: Optional[float] = None
    oracle_passed: bool = True
    problems: List[str] = []
    p1_minimal: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.witness == WitnessStatus.FEASIBLE and self.oracle_passed and not self.problems

    def failure(self) -> Optional[Dict[str, Optional[str]]]:
        if self.ok:
            return None
        reasons = [f"witness {self.witness.value}"] if self.witness != WitnessStatus.FEASIBLE else []
        if not self.oracle_passed:
            reasons.append(f"oracle reached {self.oracle_max} above {self.oracle_bound}")
        return {"error": "VerificationFailed", "detail": "; ".join(reasons + self.problems), "field": None}


def run_verify(job: VerifyJob, repo: Optional[DocumentRepository] = None) -> VerifyResult:
    """Re-prove the type-I bound of a stored certificate and spot-check it on random states"""
    repo = repo or DocumentRepository()
    stored = certificate_from_document(repo.load(job.certificate, CertificateDocument))
    cert = stored.certificate
    bound = cert.p1 + job.slack

    report = verify_witness(cert.m_c, bound, cert.d, cert.D, job.tol, job.solver_options())
    p2 = float(np.trace(cert.m_u @ stored.state.matrix).real)
    problems = cert.violations()
    if abs(p2 - cert.p2) > 1e-9:
        problems.append(f"stored p2 {cert.p2:.12f} differs from tr(M_U rho) = {p2:.12f}")

    oracle = None
    if job.oracle_samples:
        oracle = randomized_witness_oracle(cert.m_c, cert.p1, cert.D, job.oracle_samples, job.seed, job.slack)

    result = VerifyResult(
        p1=cert.p1,
        p2=cert.p2,
        p2_recomputed=p2,
        witness=report.status,
        residual=report.residual,
        oracle_max=oracle.max_value if oracle else None,
        oracle_bound=oracle.bound if oracle else None,
        oracle_passed=oracle.passed if oracle else True,
        problems=problems,
    )
    if job.tightest:
        result.p1_minimal = minimal_type_one_error(cert.m_c, cert.d, cert.D, job.solver_options())
        if result.p1_minimal is not None and result.p1_minimal > bound:
            result.problems.append(f"witness needs p1 >= {result.p1_minimal:.9f}, certificate claims {cert.p1:.9f}")
    log = logger.info if result.ok else logger.warning
    log("verify_finished", certificate=job.certificate, witness=report.status.value, oracle_passed=result.oracle_passed)
    return result
