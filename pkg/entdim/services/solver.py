"""
Standard-form conic programs and the cvxpy solver backend
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import cvxpy as cp
import numpy as np
import scipy.sparse as sp
import structlog
from pydantic import BaseModel, Field
from scipy import linalg as sla

from entdim.deps import Settings, settings
from entdim.exceptions import AssemblyError
from entdim.storage.models import SolverStatus

logger = structlog.get_logger(__name__)

FREE = "free"
NONNEG = "nonneg"
PSD = "psd"

# allowed cone violation of the dual slack, in units of feas_tol
DUAL_SLACK_FACTOR = 100


@dataclass(frozen=True)
class ConeBlock:
    """
    Contiguous slice of the variable vector.

    Free and nonnegative blocks are stored C-order with the given shape; a PSD block
    of side k occupies k*k entries, the full symmetric matrix vectorized column-major.
    """
    name: str
    kind: str
    shape: Tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        if self.kind == PSD:
            return self.shape[0] * self.shape[0]
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def stop(self) -> int:
        return self.offset + self.size


def read_block(blocks: List[ConeBlock], x: np.ndarray, name: str) -> np.ndarray:
    """Slice and reshape one block of a solution vector; PSD blocks come back as k x k"""
    for blk in blocks:
        if blk.name == name:
            break
    else:
        raise KeyError(name)
    values = np.asarray(x[blk.offset:blk.stop], dtype=np.float64)
    if blk.kind == PSD:
        k = blk.shape[0]
        return values.reshape((k, k), order="F")
    if not blk.shape:
        return values[0]
    return values.reshape(blk.shape)


@dataclass(eq=False)
class ConicProgram:
    """min c.x  s.t.  A x = b,  x in (free x nonneg x PSD blocks)"""
    c: np.ndarray
    a: sp.csr_matrix
    b: np.ndarray
    blocks: List[ConeBlock]
    meta: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def n_variables(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0

    @property
    def n_constraints(self) -> int:
        return int(self.a.shape[0])

    def block(self, name: str) -> ConeBlock:
        for blk in self.blocks:
            if blk.name == name:
                return blk
        raise KeyError(name)

    def psd_sides(self) -> List[int]:
        return [blk.shape[0] for blk in self.blocks if blk.kind == PSD]

    def validate(self) -> None:
        offset = 0
        for blk in self.blocks:
            if blk.kind not in (FREE, NONNEG, PSD):
                raise AssemblyError(f"block '{blk.name}' has unknown cone kind '{blk.kind}'")
            if blk.offset != offset:
                raise AssemblyError(f"block '{blk.name}' starts at {blk.offset}, expected {offset}")
            if blk.kind == PSD and (len(blk.shape) != 2 or blk.shape[0] != blk.shape[1] or blk.shape[0] % 2):
                raise AssemblyError(f"PSD block '{blk.name}' must be square with even side, got {blk.shape}")
            offset = blk.stop
        n = offset
        if self.c.shape != (n,):
            raise AssemblyError(f"objective has length {self.c.shape}, program has {n} variables")
        if self.a.shape != (self.b.shape[0], n):
            raise AssemblyError(f"constraint matrix {self.a.shape} does not match {self.b.shape[0]} rows x {n} variables")

    def block_value(self, x: np.ndarray, name: str) -> np.ndarray:
        """Reshape the slice of a solution vector that belongs to `name`"""
        return read_block(self.blocks, x, name)

    def residual(self, x: np.ndarray) -> float:
        """max |A x - b|"""
        return float(np.max(np.abs(self.a @ x - self.b))) if self.n_constraints else 0.0


class SolverOptions(BaseModel):
    """Options forwarded to the conic backend"""
    solver: str = "auto"
    feas_tol: float = Field(default=1e-8, gt=0)
    gap_tol: float = Field(default=1e-7, gt=0)
    max_iter: int = Field(default=100_000, ge=1)
    verbose: bool = False

    @classmethod
    def from_settings(cls, source: Optional[Settings] = None, **overrides) -> "SolverOptions":
        source = source or settings
        values = dict(
            solver=source.solver,
            feas_tol=source.feas_tol,
            gap_tol=source.gap_tol,
            max_iter=source.max_iter,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(eq=False)
class RawSolution:
    """What the backend returns; `x` is None unless the status is solved"""
    status: SolverStatus
    x: Optional[np.ndarray]
    upper_bound: Optional[float] = None
    lower_bound: Optional[float] = None
    solver: Optional[str] = None
    solve_time: float = 0.0
    message: Optional[str] = None
    dual_violation: Optional[float] = None

    @property
    def duality_gap(self) -> Optional[float]:
        if self.upper_bound is None or self.lower_bound is None:
            return None
        return self.upper_bound - self.lower_bound

    @property
    def objective(self) -> Optional[float]:
        return self.upper_bound


def choose_solver(options: SolverOptions) -> str:
    """Explicit names pass through; "auto" is CLARABEL when installed, SCS otherwise"""
    if options.solver.lower() != "auto":
        return options.solver.upper()
    if cp.CLARABEL in cp.installed_solvers():
        return cp.CLARABEL
    return cp.SCS


def _solver_kwargs(name: str, options: SolverOptions) -> Dict[str, object]:
    if name == cp.SCS:
        return {"eps_abs": options.feas_tol, "eps_rel": options.feas_tol, "max_iters": options.max_iter}
    if name == cp.CLARABEL:
        return {
            "tol_feas": options.feas_tol,
            "tol_gap_abs": options.gap_tol,
            "tol_gap_rel": options.gap_tol,
            "max_iter": options.max_iter,
        }
    return {}


def _build_problem(prog: ConicProgram):
    parts = []
    constraints = []
    for blk in prog.blocks:
        if blk.kind == PSD:
            k = blk.shape[0]
            y = cp.Variable((k, k), symmetric=True, name=blk.name)
            constraints.append(y >> 0)
            parts.append(cp.reshape(y, (k * k,), order="F"))
        else:
            v = cp.Variable(blk.size, nonneg=(blk.kind == NONNEG), name=blk.name)
            parts.append(v)
    x = cp.hstack(parts)
    equality = cp.Constant(prog.a) @ x == prog.b
    constraints.insert(0, equality)
    problem = cp.Problem(cp.Minimize(prog.c @ x), constraints)
    return problem, x, equality


def dual_cone_violation(prog: ConicProgram, slack: np.ndarray) -> float:
    """
    How far a dual slack s = c - A^T y is from the dual cone: zero on free blocks,
    nonnegative on nonnegative blocks, symmetric part PSD on PSD blocks.
    """
    worst = 0.0
    for blk in prog.blocks:
        part = slack[blk.offset:blk.stop]
        if blk.kind == FREE:
            worst = max(worst, float(np.max(np.abs(part))))
        elif blk.kind == NONNEG:
            worst = max(worst, float(-np.min(part)))
        else:
            k = blk.shape[0]
            z = part.reshape((k, k), order="F")
            lowest = sla.eigvalsh((z + z.T) / 2, subset_by_index=[0, 0])[0]
            worst = max(worst, float(-lowest))
    return worst


def dual_bound(prog: ConicProgram, y: np.ndarray, tol: float = 0.0) -> Tuple[float, float]:
    """
    Weak-duality bound b.y for the multipliers of A x = b, with the cone violation
    of c - A^T y. cvxpy may hand the multiplier back with either sign depending on how
    the backend canonicalizes equalities, so both signs are checked: among those whose
    slack is dual feasible within tol the larger bound wins, otherwise the sign with
    the smaller violation is reported.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    aty = prog.a.T @ y
    candidates = [
        (float(prog.b @ y), dual_cone_violation(prog, prog.c - aty)),
        (float(-(prog.b @ y)), dual_cone_violation(prog, prog.c + aty)),
    ]
    feasible = [c for c in candidates if c[1] <= tol]
    if feasible:
        return max(feasible)
    return min(candidates, key=lambda c: c[1])


def _dual_tolerance(options: SolverOptions, y: np.ndarray) -> float:
    return DUAL_SLACK_FACTOR * options.feas_tol * (1.0 + float(np.max(np.abs(y), initial=0.0)))


def _solve_with(prog: ConicProgram, options: SolverOptions, name: str) -> RawSolution:
    problem, x, equality = _build_problem(prog)

    start = time.perf_counter()
    try:
        problem.solve(solver=name, verbose=options.verbose, **_solver_kwargs(name, options))
    except (cp.error.SolverError, ValueError, ArithmeticError) as e:
        elapsed = time.perf_counter() - start
        logger.warning("solve_failed", solver=name, error=str(e), seconds=round(elapsed, 3))
        return RawSolution(SolverStatus.FAILED, None, solver=name, solve_time=elapsed, message=str(e))
    elapsed = time.perf_counter() - start

    status = problem.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE, cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        logger.info("solve_finished", solver=name, status=status, seconds=round(elapsed, 3))
        return RawSolution(SolverStatus.INFEASIBLE, None, solver=name, solve_time=elapsed, message=status)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or x.value is None:
        logger.warning("solve_finished", solver=name, status=status, seconds=round(elapsed, 3))
        return RawSolution(SolverStatus.FAILED, None, solver=name, solve_time=elapsed, message=str(status))

    values = np.asarray(x.value, dtype=np.float64).ravel()
    upper = float(prog.c @ values)
    lower, violation, gap = None, None, None
    certified = False
    if equality.dual_value is not None:
        y = np.asarray(equality.dual_value, dtype=np.float64).ravel()
        tol = _dual_tolerance(options, y)
        lower, violation = dual_bound(prog, y, tol)
        gap = upper - lower
        certified = abs(gap) <= options.gap_tol and violation <= tol
    result = SolverStatus.OPTIMAL if status == cp.OPTIMAL and certified else SolverStatus.NEAR_OPTIMAL

    log = logger.info if result == SolverStatus.OPTIMAL else logger.warning
    log(
        "solve_finished",
        solver=name,
        status=result.value,
        objective=upper,
        gap=gap,
        dual_violation=violation,
        residual=prog.residual(values),
        seconds=round(elapsed, 3),
    )
    return RawSolution(result, values, upper, lower, name, elapsed, message=status, dual_violation=violation)


def solve(prog: ConicProgram, options: Optional[SolverOptions] = None) -> RawSolution:
    """
    Solve a conic program. Never raises on solver trouble: nonconvergence and backend
    errors come back as status=failed with the backend's message. Under "auto" a
    failed CLARABEL run is retried once with SCS.
    """
    options = options or SolverOptions.from_settings()
    name = choose_solver(options)
    raw = _solve_with(prog, options, name)
    if raw.status == SolverStatus.FAILED and name == cp.CLARABEL and options.solver.lower() == "auto":
        logger.warning("solver_fallback", failed=name, retry=cp.SCS, reason=raw.message)
        raw = _solve_with(prog, options, cp.SCS)
    return raw
