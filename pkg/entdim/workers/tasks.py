"""
Units of work for the benchmark executor
"""
import time
from dataclasses import dataclass

import structlog

from entdim.services import bench
from entdim.services.measurements import MeasurementSet
from entdim.services.solver import SolverOptions
from entdim.services.states import PureState
from entdim.storage.models import SolverStatus

logger = structlog.get_logger(__name__)


@dataclass(eq=False)
class BenchTask:
    """Everything one worker needs to solve one benchmark state (picklable)"""
    state_index: int
    seed: int
    family: str
    state: PureState
    meas: MeasurementSet
    D: int
    options: SolverOptions
    keep_certificate: bool = True


def solve_bench_state(task: BenchTask) -> bench.BenchRecord:
    """
    Solve one state; any exception becomes a failed record so the batch never aborts
    """
    log = logger.bind(state_index=task.state_index, family=task.family)
    start = time.perf_counter()
    try:
        record = bench.solve_state(
            task.state,
            task.meas,
            task.D,
            seed=task.seed,
            state_index=task.state_index,
            family=task.family,
            options=task.options,
            keep_certificate=task.keep_certificate,
        )
    except Exception as e:
        log.warning("bench_state_failed", error=str(e), error_type=type(e).__name__)
        return bench.BenchRecord(
            seed=task.seed,
            state_index=task.state_index,
            family=task.family,
            robustness=None,
            nonzero_count=None,
            solve_time=time.perf_counter() - start,
            status=SolverStatus.FAILED.value,
            error=f"{type(e).__name__}: {e}",
        )

    if record.ok:
        log.debug("bench_state_solved", robustness=record.robustness, nonzero=record.nonzero_count)
    else:
        log.warning("bench_state_unsolved", status=record.status, error=record.error)
    return record
