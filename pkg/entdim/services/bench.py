"""
Random-state benchmark: robustness versus protocol sparsity
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import structlog

from entdim.deps import settings
from entdim.exceptions import DomainError
from entdim.services.measurements import MeasurementSet, settings_for
from entdim.services.sdp import LoccPolicy, ProtocolCertificate, synthesize
from entdim.services.solver import SolverOptions
from entdim.services.states import PureState, SeedLike, random_pure_schmidt, seed_sequence
from entdim.storage.models import SettingFamily

logger = structlog.get_logger(__name__)

BENCH_DIM = 4
BENCH_RANK = 2


def count_nonzero(policy: LoccPolicy, threshold: Optional[float] = None) -> int:
    """Entries of the C and U tables above threshold"""
    threshold = settings.zero_threshold if threshold is None else threshold
    if threshold <= 0:
        raise DomainError(f"threshold must be positive, got {threshold}")
    return int(np.count_nonzero(policy.table_c > threshold) + np.count_nonzero(policy.table_u > threshold))


def required_probabilities(policy: LoccPolicy, threshold: Optional[float] = None) -> int:
    """Number of p(a,b|x,y) an experiment must estimate: the nonzero C entries"""
    threshold = settings.zero_threshold if threshold is None else threshold
    if threshold <= 0:
        raise DomainError(f"threshold must be positive, got {threshold}")
    return int(np.count_nonzero(policy.table_c > threshold))


@dataclass(eq=False)
class BenchRecord:
    """One benchmark state; failed solves keep robustness and nonzero_count as None"""
    seed: int
    state_index: int
    family: str
    robustness: Optional[float]
    nonzero_count: Optional[int]
    solve_time: float
    status: str
    p1: Optional[float] = None
    p2: Optional[float] = None
    error: Optional[str] = None
    certificate: Optional[ProtocolCertificate] = None
    state: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.robustness is not None

    def csv_row(self) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "state_index": self.state_index,
            "robustness": "" if self.robustness is None else f"{self.robustness:.10g}",
            "nonzero_count": "" if self.nonzero_count is None else self.nonzero_count,
            "solve_time_s": f"{self.solve_time:.3f}",
            "status": self.status,
        }


def sample_bench_states(n_states: int, seed: SeedLike = 0, d: int = BENCH_DIM, rank: int = BENCH_RANK) -> List[PureState]:
    """One independent stream per state, so state i does not depend on n_states"""
    if n_states < 1:
        raise DomainError(f"n_states must be >= 1, got {n_states}")
    return [random_pure_schmidt(d, rank, child) for child in seed_sequence(seed).spawn(n_states)]


def solve_state(
    state: PureState,
    meas: MeasurementSet,
    D: int,
    *,
    seed: int = 0,
    state_index: int = 0,
    family: Optional[str] = None,
    options: Optional[SolverOptions] = None,
    keep_certificate: bool = True,
) -> BenchRecord:
    """Synthesize the optimal protocol for one pure target and summarize it"""
    family = family or meas.family or "custom"
    start = time.perf_counter()
    result = synthesize(state.density(), meas, D, options)
    elapsed = time.perf_counter() - start

    cert = result.certificate
    if cert is None:
        return BenchRecord(
            seed, state_index, family, None, None, elapsed, result.status.value, error=result.solution.message
        )
    return BenchRecord(
        seed=seed,
        state_index=state_index,
        family=family,
        robustness=cert.robustness,
        nonzero_count=count_nonzero(cert.policy),
        solve_time=elapsed,
        status=cert.solver_status.value,
        p1=cert.p1,
        p2=cert.p2,
        certificate=cert if keep_certificate else None,
        state=state.vector if keep_certificate else None,
    )


def run_benchmark(
    n_states: int,
    meas: MeasurementSet,
    D: int = 1,
    seed: int = 0,
    *,
    states: Optional[Sequence[PureState]] = None,
    workers: Optional[int] = None,
    chunksize: Optional[int] = None,
    options: Optional[SolverOptions] = None,
    family: Optional[str] = None,
    keep_certificates: bool = True,
) -> List[BenchRecord]:
    """
    Solve one protocol per random Schmidt-rank-2 target on C^4 (x) C^4.

    Records come back in state order; a failing state yields a failed record and the
    batch carries on.
    """
    from entdim.workers.pool import create_executor
    from entdim.workers.tasks import BenchTask, solve_bench_state

    if states is None:
        states = sample_bench_states(n_states, seed)
    family = family or meas.family or "custom"
    options = options or SolverOptions.from_settings()
    chunksize = settings.bench_chunksize if chunksize is None else chunksize
    if chunksize < 1:
        raise DomainError(f"chunksize must be >= 1, got {chunksize}")
    tasks = [
        BenchTask(index, seed, family, state, meas, D, options, keep_certificates)
        for index, state in enumerate(states)
    ]

    log = logger.bind(family=family, states=len(tasks), D=D, seed=seed)
    log.info("benchmark_started")
    with create_executor(workers) as executor:
        records = list(executor.map(solve_bench_state, tasks, chunksize=chunksize))

    failed = sum(1 for r in records if not r.ok)
    log.info("benchmark_finished", failed=failed, mean_robustness=mean_robustness(records))
    return records


def mean_robustness(records: Sequence[BenchRecord]) -> Optional[float]:
    values = [r.robustness for r in records if r.ok]
    return float(np.mean(values)) if values else None


@dataclass(eq=False)
class FamilyComparison:
    """Paired benchmark: every family solved on the same states"""
    records: Dict[str, List[BenchRecord]] = field(default_factory=dict)

    @property
    def mean_robustness(self) -> Dict[str, Optional[float]]:
        return {family: mean_robustness(records) for family, records in self.records.items()}

    @property
    def mean_nonzero(self) -> Dict[str, Optional[float]]:
        result = {}
        for family, records in self.records.items():
            counts = [r.nonzero_count for r in records if r.ok]
            result[family] = float(np.mean(counts)) if counts else None
        return result


def compare_families(
    n_states: int,
    families: Sequence[Union[SettingFamily, str]],
    D: int = 1,
    seed: int = 0,
    *,
    workers: Optional[int] = None,
    chunksize: Optional[int] = None,
    options: Optional[SolverOptions] = None,
    keep_certificates: bool = False,
) -> FamilyComparison:
    states = sample_bench_states(n_states, seed)
    comparison = FamilyComparison()
    for family in families:
        family = SettingFamily(family)
        comparison.records[family.value] = run_benchmark(
            n_states,
            settings_for(family, BENCH_DIM),
            D,
            seed,
            states=states,
            workers=workers,
            chunksize=chunksize,
            options=options,
            family=family.value,
            keep_certificates=keep_certificates,
        )
    logger.info("families_compared", means=comparison.mean_robustness)
    return comparison
