"""
Shared pieces of the command layer: solver overrides, target and setting resolution
"""
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from entdim.services.measurements import MeasurementSet, settings_for
from entdim.services.solver import SolverOptions
from entdim.services.states import DensityMatrix, max_entangled, rho_iso2, rho_unf
from entdim.storage.models import MeasurementSetDocument, SettingFamily, StateDocument, TargetDescriptor, TargetFamily
from entdim.storage.repo import DocumentRepository, measurements_from_document, state_from_document


class SolverJob(BaseModel):
    """Per-command solver overrides; unset fields fall back to Settings"""
    solver: Optional[str] = Field(default=None, description="Conic backend: auto, SCS, CLARABEL, ...")
    feas_tol: Optional[float] = Field(default=None, gt=0)
    gap_tol: Optional[float] = Field(default=None, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)

    def solver_options(self) -> SolverOptions:
        return SolverOptions.from_settings(
            solver=self.solver, feas_tol=self.feas_tol, gap_tol=self.gap_tol, max_iter=self.max_iter
        )


class CommandResult(BaseModel):
    """Printed as JSON on stdout; `ok` decides the exit code"""
    command: str

    @property
    def ok(self) -> bool:
        return True

    def failure(self) -> Optional[Dict[str, Optional[str]]]:
        """Error object for stderr when the command ran but did not succeed"""
        if self.ok:
            return None
        return {"error": "CommandFailed", "detail": f"{self.command} did not succeed", "field": None}


class TargetJob(SolverJob):
    family: Optional[TargetFamily] = None
    p: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    dim: int = Field(default=4, ge=2)
    state_file: Optional[str] = None
    settings: Optional[SettingFamily] = None
    settings_file: Optional[str] = None

    @model_validator(mode="after")
    def check_sources(self):
        if self.settings is None and self.settings_file is None:
            raise ValueError("either a setting family or a settings file is required")
        return self

    def descriptor(self) -> TargetDescriptor:
        return TargetDescriptor(family=self.family, p=self.p, dim=self.dim, state_file=self.state_file)


def resolve_target(target: TargetDescriptor, repo: Optional[DocumentRepository] = None) -> DensityMatrix:
    """Named family, or a StateDocument file when no family is given"""
    if target.family is None:
        repo = repo or DocumentRepository()
        return state_from_document(repo.load(target.state_file, StateDocument))
    if target.family == TargetFamily.MAX_ENTANGLED:
        return max_entangled(target.dim).density()
    if target.family == TargetFamily.UNF:
        return rho_unf(target.p)
    return rho_iso2(target.p)


def resolve_settings(job: TargetJob, d: int, repo: Optional[DocumentRepository] = None) -> MeasurementSet:
    if job.settings_file is not None:
        repo = repo or DocumentRepository()
        return measurements_from_document(repo.load(job.settings_file, MeasurementSetDocument))
    return settings_for(job.settings, d)


def resolve_job(job: TargetJob, repo: Optional[DocumentRepository] = None) -> Tuple[TargetDescriptor, DensityMatrix, MeasurementSet]:
    target = job.descriptor()
    rho = resolve_target(target, repo)
    meas = resolve_settings(job, rho.dims[0], repo)
    return target, rho, meas
