"""
Statistics commands: round simulation, p-values and experiment records
"""
import os
from typing import Literal, Optional

import structlog
from pydantic import BaseModel, Field, model_validator

from entdim.commands.common import CommandResult
from entdim.deps import create_output_directory, settings
from entdim.services.certify import (
    certify_record,
    expected_pvalue_bound,
    log_p_value,
    p_value,
    sample_record,
    simulate_rounds,
)
from entdim.services.states import product_state
from entdim.storage.models import CertificateDocument, ExperimentRecordDocument
from entdim.storage.repo import DocumentRepository, certificate_from_document, record_from_document, record_to_document

logger = structlog.get_logger(__name__)


class SimulateJob(BaseModel):
    certificate: str
    rounds: int = Field(..., ge=0)
    seed: int = 0
    source: Literal["target", "product"] = Field(
        default="target", description="Run on the certificate's target or on a random product state"
    )
    significance: Optional[float] = Field(default=None, gt=0.0, lt=1.0)


class SimulateResult(CommandResult):
    command: str = "simulate"
    source: str
    rounds: int
    c_count: int
    frequency: float
    p1: float
    p_value: float
    significance: float
    certified: bool


def run_simulate(job: SimulateJob, repo: Optional[DocumentRepository] = None) -> SimulateResult:
    """Run the stored protocol `rounds` times and report the p-value"""
    repo = repo or DocumentRepository()
    stored = certificate_from_document(repo.load(job.certificate, CertificateDocument))
    cert = stored.certificate
    rho = stored.state if job.source == "target" else product_state(cert.d, job.seed).density()

    outcome = simulate_rounds(rho, stored.measurements, cert.policy, job.rounds, job.seed, cert.p1, job.significance)
    return SimulateResult(
        source=job.source,
        rounds=outcome.rounds,
        c_count=outcome.c_count,
        frequency=outcome.frequency,
        p1=outcome.p1_used,
        p_value=outcome.p_value,
        significance=outcome.significance,
        certified=outcome.certified,
    )


class PvalueJob(BaseModel):
    v: int = Field(..., ge=0, description="Rounds with outcome C")
    n: int = Field(..., ge=0, description="Total rounds")
    p1: float = Field(..., ge=0.0, le=1.0)
    p2: Optional[float] = Field(default=None, ge=0.0, le=1.0, description="Adds the expected p-value bound")
    significance: float = Field(default_factory=lambda: settings.significance, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_counts(self):
        if self.v > self.n:
            raise ValueError(f"v = {self.v} exceeds n = {self.n}")
        return self


class PvalueResult(CommandResult):
    command: str = "pvalue"
    v: int
    n: int
    p1: float
    p_value: float
    log_p_value: float
    certified: bool
    expected_bound: Optional[float] = None


def run_pvalue(job: PvalueJob) -> PvalueResult:
    value = p_value(job.v, job.n, job.p1)
    bound = None if job.p2 is None else expected_pvalue_bound(job.p1, job.p2, job.n)
    return PvalueResult(
        v=job.v,
        n=job.n,
        p1=job.p1,
        p_value=value,
        log_p_value=log_p_value(job.v, job.n, job.p1),
        certified=value < job.significance,
        expected_bound=bound,
    )


class SampleJob(BaseModel):
    certificate: str
    rounds_per_pair: int = Field(..., ge=1)
    seed: int = 0
    all_pairs: bool = Field(default=False, description="Measure every setting pair, not only those the policy uses")
    output: Optional[str] = None


class SampleResult(CommandResult):
    command: str = "sample"
    output: str
    measured_pairs: int


def run_sample(job: SampleJob, repo: Optional[DocumentRepository] = None) -> SampleResult:
    """Sample a synthetic experiment record from the certificate's target"""
    repo = repo or DocumentRepository()
    stored = certificate_from_document(repo.load(job.certificate, CertificateDocument))
    policy = stored.certificate.policy
    pairs = None
    if not job.all_pairs:
        used = ((policy.table_c > 0) | (policy.table_u > 0)).any(axis=(2, 3))
        pairs = [(int(x), int(y)) for x, y in zip(*used.nonzero())]

    record = sample_record(stored.state, stored.measurements, job.rounds_per_pair, job.seed, pairs)
    output = job.output or os.path.join(create_output_directory(), f"{stored.target.label}_record.json")
    path = repo.save(record_to_document(record), output)
    return SampleResult(output=str(path), measured_pairs=int(record.measured.sum()))


class CertifyJob(BaseModel):
    certificate: str
    record: str


class CertifyResult(CommandResult):
    command: str = "certify"
    p1: float
    p2_exp: float
    robustness: float
    certified: bool


def run_certify(job: CertifyJob, repo: Optional[DocumentRepository] = None) -> CertifyResult:
    """Experimental verdict p1 + p2_exp < 1 from a stored record"""
    repo = repo or DocumentRepository()
    stored = certificate_from_document(repo.load(job.certificate, CertificateDocument))
    record = record_from_document(repo.load(job.record, ExperimentRecordDocument))
    verdict = certify_record(record, stored.certificate)
    return CertifyResult(
        p1=verdict.p1, p2_exp=verdict.p2_exp, robustness=verdict.robustness, certified=verdict.certified
    )
