"""
Benchmark command
"""
import os
from typing import Dict, List, Optional

import structlog
from pydantic import BaseModel, Field, field_validator

from entdim.commands.common import CommandResult, SolverJob
from entdim.deps import create_output_directory, settings
from entdim.services.bench import compare_families
from entdim.storage.models import SettingFamily
from entdim.storage.repo import BenchCsvWriter

logger = structlog.get_logger(__name__)


class BenchJob(SolverJob):
    n_states: int = Field(default_factory=lambda: settings.bench_states, ge=1)
    families: List[SettingFamily] = Field(default_factory=lambda: list(settings.bench_families))
    D: int = Field(default=1, ge=1)
    seed: int = 0
    workers: Optional[int] = Field(default=None, ge=1)
    chunksize: Optional[int] = Field(default=None, ge=1)
    output_directory: Optional[str] = None

    @field_validator("families", mode="before")
    @classmethod
    def parse_families(cls, v):
        if isinstance(v, str):
            return [i.strip() for i in v.split(",") if i.strip()]
        return v


class FamilySummary(BaseModel):
    family: str
    csv: str
    solved: int
    failed: int
    mean_robustness: Optional[float] = None
    mean_nonzero: Optional[float] = None


class BenchResult(CommandResult):
    command: str = "bench"
    n_states: int
    D: int
    seed: int
    families: Dict[str, FamilySummary]

    @property
    def ok(self) -> bool:
        return all(summary.solved for summary in self.families.values())

    def failure(self) -> Optional[Dict[str, Optional[str]]]:
        if self.ok:
            return None
        unsolved = sorted(name for name, summary in self.families.items() if not summary.solved)
        return {"error": "SolveError", "detail": f"no state solved for {', '.join(unsolved)}", "field": None}


def run_bench(job: BenchJob) -> BenchResult:
    """Paired benchmark over the requested families; one CSV per family"""
    directory = create_output_directory(job.output_directory)
    comparison = compare_families(
        job.n_states,
        job.families,
        job.D,
        job.seed,
        workers=job.workers,
        chunksize=job.chunksize,
        options=job.solver_options(),
    )
    means = comparison.mean_robustness
    nonzero = comparison.mean_nonzero

    summaries = {}
    for family, records in comparison.records.items():
        path = BenchCsvWriter(os.path.join(directory, f"bench_{family}_D{job.D}_seed{job.seed}.csv")).write(records)
        solved = sum(1 for r in records if r.ok)
        summaries[family] = FamilySummary(
            family=family,
            csv=str(path),
            solved=solved,
            failed=len(records) - solved,
            mean_robustness=means[family],
            mean_nonzero=nonzero[family],
        )
    return BenchResult(n_states=job.n_states, D=job.D, seed=job.seed, families=summaries)
