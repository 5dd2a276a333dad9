"""
Protocol synthesis: program assembly, solve, protocol extraction and witness checks

Conventions:
- policy tables are indexed [x, y, a, b] (0-based), flattened C-order to
  k = ((x*m + y)*d + a)*d + b;
- witness operators live on A A' B' B with dims [d, D, D, d];
- a Hermitian PSD variable of side N is a real symmetric PSD block Y of side 2N,
  Y = [[Re L, -Im L], [Im L, Re L]].
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import structlog

from entdim.deps import settings
from entdim.exceptions import AssemblyError, DimensionError, DomainError, ExtractionError
from entdim.services import linalg
from entdim.services.measurements import MeasurementSet, born_probabilities
from entdim.services.solver import (
    FREE,
    NONNEG,
    PSD,
    ConeBlock,
    ConicProgram,
    RawSolution,
    SolverOptions,
    read_block,
    solve,
)
from entdim.services.states import DensityMatrix, SeedLike, random_pure_schmidt, seed_sequence
from entdim.storage.models import SolverStatus, WitnessStatus

logger = structlog.get_logger(__name__)

HIERARCHY_LEVEL = 1
POLICY_TOL = 1e-7
EXTRACTION_TOL = 1e-6
POVM_BOUND_TOL = 1e-7
WITNESS_RESIDUAL_TOL = 1e-6
NEGLIGIBLE = 1e-15


# ---------------------------------------------------------------------------
# Policies and effective POVMs
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LoccPolicy:
    """
    1-way LOCC policy: P(x), P(x,y|a) and P(x,y,c|a,b) for c in {C, U}.

    table_c/table_u are indexed [x, y, a, b], marginal_q [x, y, a], marginal_r [x].
    """
    m: int
    d: int
    table_c: np.ndarray
    table_u: np.ndarray
    marginal_q: np.ndarray
    marginal_r: np.ndarray

    def __post_init__(self):
        m, d = int(self.m), int(self.d)
        self.m, self.d = m, d
        expected = {
            "table_c": (m, m, d, d),
            "table_u": (m, m, d, d),
            "marginal_q": (m, m, d),
            "marginal_r": (m,),
        }
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise DimensionError(f"{name} has shape {value.shape}, expected {shape}")
            setattr(self, name, value)

    @classmethod
    def from_tables(cls, table_c: np.ndarray, table_u: np.ndarray) -> "LoccPolicy":
        """Derive the marginals from the joint tables (averaging out numerical b/a dependence)"""
        table_c = np.asarray(table_c, dtype=np.float64)
        table_u = np.asarray(table_u, dtype=np.float64)
        m, _, d, _ = table_c.shape
        q = (table_c + table_u).mean(axis=3)
        r = q.sum(axis=1).mean(axis=1)
        return cls(m, d, table_c, table_u, q, r)

    @classmethod
    def always_u(cls, m: int, d: int) -> "LoccPolicy":
        """Setting pair (1,1) with probability one, answer U whatever the outcomes"""
        c = np.zeros((m, m, d, d))
        u = np.zeros((m, m, d, d))
        u[0, 0] = 1.0
        q = np.zeros((m, m, d))
        q[0, 0] = 1.0
        r = np.zeros(m)
        r[0] = 1.0
        return cls(m, d, c, u, q, r)

    def violations(self, tol: float = POLICY_TOL) -> List[str]:
        found = []
        for name in ("table_c", "table_u", "marginal_q", "marginal_r"):
            lowest = float(getattr(self, name).min())
            if lowest < -tol:
                found.append(f"{name} has negative entry {lowest:.3e}")
        b_dependence = np.abs(self.table_c + self.table_u - self.marginal_q[..., None]).max()
        if b_dependence > tol:
            found.append(f"sum_c P(x,y,c|a,b) differs from P(x,y|a) by {b_dependence:.3e}")
        a_dependence = np.abs(self.marginal_q.sum(axis=1) - self.marginal_r[:, None]).max()
        if a_dependence > tol:
            found.append(f"sum_y P(x,y|a) differs from P(x) by {a_dependence:.3e}")
        total = abs(float(self.marginal_r.sum()) - 1.0)
        if total > tol:
            found.append(f"sum_x P(x) differs from 1 by {total:.3e}")
        return found

    def is_valid(self, tol: float = POLICY_TOL) -> bool:
        return not self.violations(tol)

    def validate(self, tol: float = POLICY_TOL) -> "LoccPolicy":
        found = self.violations(tol)
        if found:
            raise ExtractionError("invalid policy: " + "; ".join(found))
        return self

    def entries(self, threshold: float = 0.0) -> List[Tuple[int, int, str, int, int, float]]:
        """Sparse rows (x, y, c, a, b, value), 0-based, for entries above threshold"""
        rows = []
        for label, table in (("C", self.table_c), ("U", self.table_u)):
            for x, y, a, b in zip(*np.nonzero(table > threshold)):
                rows.append((int(x), int(y), label, int(a), int(b), float(table[x, y, a, b])))
        rows.sort(key=lambda row: (row[0], row[1], row[3], row[4], row[2]))
        return rows

    @classmethod
    def from_entries(cls, rows: Sequence[Tuple[int, int, str, int, int, float]], m: int, d: int) -> "LoccPolicy":
        c = np.zeros((m, m, d, d))
        u = np.zeros((m, m, d, d))
        for x, y, label, a, b, value in rows:
            (c if label == "C" else u)[x, y, a, b] = value
        return cls.from_tables(c, u)


def _check_compatible(policy: LoccPolicy, meas: MeasurementSet) -> None:
    if policy.d != meas.local_dim or policy.m != meas.m:
        raise DimensionError(
            f"policy (m={policy.m}, d={policy.d}) does not match measurements (m={meas.m}, d={meas.local_dim})"
        )


def _effective(table: np.ndarray, meas: MeasurementSet) -> np.ndarray:
    """sum_{x,y,a,b} table[x,y,a,b] N_{a|x} (x) N_{b|y}"""
    d = meas.local_dim
    ops = meas.operators
    return np.einsum("xyab,xaij,ybkl->ikjl", table, ops, ops).reshape(d * d, d * d)


def effective_povm(policy: LoccPolicy, meas: MeasurementSet) -> Tuple[np.ndarray, np.ndarray]:
    """(M_C, M_U) realized by running `policy` with the local settings `meas`"""
    _check_compatible(policy, meas)
    m_c = linalg.hermitize(_effective(policy.table_c, meas))
    m_u = linalg.hermitize(_effective(policy.table_u, meas))
    return m_c, m_u


def complete_policy(entries: Sequence[Tuple[int, int, int, int, float]], m: int, d: int) -> LoccPolicy:
    """
    Complete a table of C-probabilities (x, y, a, b, P), 0-based, into a full policy.

    The smallest marginals compatible with the table are q(x,y,a) = max_b P and
    r(x) = max_a sum_y q. Remaining mass is spread evenly over settings, and
    U takes whatever C leaves of q. Tables whose rounding pushes sum_x r above 1
    are scaled down to fit.
    """
    c = np.zeros((m, m, d, d))
    for x, y, a, b, value in entries:
        if not (0 <= x < m and 0 <= y < m and 0 <= a < d and 0 <= b < d):
            raise DimensionError(f"entry ({x + 1},{y + 1},{a + 1},{b + 1}) outside m={m}, d={d}")
        if value < 0:
            raise DomainError(f"negative probability {value} at ({x + 1},{y + 1},{a + 1},{b + 1})")
        c[x, y, a, b] = value

    q = c.max(axis=3)
    r = q.sum(axis=1).max(axis=1)
    total = float(r.sum())
    if total > 1.0:
        logger.warning("policy_table_rescaled", factor=1.0 / total)
        c, q, r = c / total, q / total, r / total
    r = r + (1.0 - float(r.sum())) / m
    q = q + ((r[:, None] - q.sum(axis=1)) / m)[:, None, :]
    u = q[..., None] - c
    return LoccPolicy(m, d, c, u, q, r)


# ---------------------------------------------------------------------------
# Program assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _WitnessGeometry:
    """Index data shared by every program on A A' B' B for one (d, D)"""
    d: int
    D: int
    n: int
    pi: np.ndarray
    k: np.ndarray
    upper: Tuple[np.ndarray, np.ndarray]
    strict_upper: Tuple[np.ndarray, np.ndarray]
    sigma_r: np.ndarray
    sigma_c: np.ndarray

    def partial_transpose(self, m: np.ndarray) -> np.ndarray:
        return linalg.partial_transpose(m, [self.d, self.D, self.D, self.d], [2, 3])


@lru_cache(maxsize=16)
def _geometry(d: int, D: int) -> _WitnessGeometry:
    pi = linalg.build_pi(d, D)
    n = pi.shape[0]
    index = np.arange(n * n).reshape(n, n)
    # entry (i, j) of X^{T_BB'} is entry (sigma_r, sigma_c) of X
    sigma = linalg.partial_transpose(index, [d, D, D, d], [2, 3])
    sigma_r, sigma_c = np.divmod(sigma, n)
    k = (pi @ pi.conj().T).real
    for arr in (pi, k, sigma_r, sigma_c):
        arr.setflags(write=False)
    return _WitnessGeometry(d, D, n, pi, k, np.triu_indices(n), np.triu_indices(n, 1), sigma_r, sigma_c)


class _Equalities:
    """Accumulates sparse equality rows"""

    def __init__(self):
        self._rows: List[np.ndarray] = []
        self._cols: List[np.ndarray] = []
        self._vals: List[np.ndarray] = []
        self._rhs: List[np.ndarray] = []
        self.count = 0

    def reserve(self, count: int, rhs=0.0) -> np.ndarray:
        rows = np.arange(self.count, self.count + count)
        self._rhs.append(np.broadcast_to(np.asarray(rhs, dtype=np.float64), (count,)).copy())
        self.count += count
        return rows

    def put(self, rows, cols, vals) -> None:
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=np.float64))
        keep = np.abs(vals) > NEGLIGIBLE
        self._rows.append(rows[keep].ravel())
        self._cols.append(cols[keep].ravel())
        self._vals.append(vals[keep].ravel())

    def build(self, n_variables: int) -> Tuple[sp.csr_matrix, np.ndarray]:
        rows = np.concatenate(self._rows) if self._rows else np.zeros(0, dtype=int)
        cols = np.concatenate(self._cols) if self._cols else np.zeros(0, dtype=int)
        vals = np.concatenate(self._vals) if self._vals else np.zeros(0)
        a = sp.coo_matrix((vals, (rows, cols)), shape=(self.count, n_variables)).tocsr()
        b = np.concatenate(self._rhs) if self._rhs else np.zeros(0)
        return a, b


def _layout(spec: Sequence[Tuple[str, str, Tuple[int, ...]]]) -> List[ConeBlock]:
    blocks, offset = [], 0
    for name, kind, shape in spec:
        blk = ConeBlock(name, kind, tuple(shape), offset)
        blocks.append(blk)
        offset = blk.stop
    return blocks


def _psd_entry(blk: ConeBlock, r, c):
    """Column of entry (r, c) of a column-major PSD block"""
    return blk.offset + np.asarray(r) + np.asarray(c) * blk.shape[0]


def _put_structure_rows(eq: _Equalities, geo: _WitnessGeometry, blk: ConeBlock) -> None:
    """Y11 = Y22 and Y21 antisymmetric, so that Y embeds a Hermitian matrix"""
    n = geo.n
    i, j = geo.upper
    rows = eq.reserve(len(i))
    eq.put(rows, _psd_entry(blk, i, j), 1.0)
    eq.put(rows, _psd_entry(blk, n + i, n + j), -1.0)
    rows = eq.reserve(len(i))
    eq.put(rows, _psd_entry(blk, n + i, j), 1.0)
    eq.put(rows, _psd_entry(blk, n + j, i), 1.0)


def _put_witness_rows(
    eq: _Equalities,
    geo: _WitnessGeometry,
    lam: ConeBlock,
    y1: ConeBlock,
    y2: ConeBlock,
    rhs: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lambda1 + Lambda2^{T_BB'} + lambda (Pi Pi^dagger - I/D) = rhs, entrywise on the upper
    triangle (real parts) and strict upper triangle (imaginary parts).
    Returns the real and imaginary row indices so callers can add their own columns.
    """
    n, D = geo.n, geo.D
    i, j = geo.upper
    real_rows = eq.reserve(len(i), rhs.real[i, j])
    eq.put(real_rows, _psd_entry(y1, i, j), 1.0)
    eq.put(real_rows, _psd_entry(y2, geo.sigma_r[i, j], geo.sigma_c[i, j]), 1.0)
    eq.put(real_rows, lam.offset, geo.k[i, j] - (i == j) / D)

    i, j = geo.strict_upper
    imag_rows = eq.reserve(len(i), rhs.imag[i, j])
    eq.put(imag_rows, _psd_entry(y1, n + i, j), 1.0)
    eq.put(imag_rows, _psd_entry(y2, n + geo.sigma_r[i, j], geo.sigma_c[i, j]), 1.0)
    return real_rows, imag_rows


def _check_level(level: int) -> None:
    if level != HIERARCHY_LEVEL:
        raise AssemblyError(f"only hierarchy level {HIERARCHY_LEVEL} is implemented, got level {level}")


def _check_ancilla(d: int, D: int) -> None:
    if D < 1:
        raise DomainError(f"D must be >= 1, got {D}")
    if D >= d:
        raise DomainError(f"certifying dimension {D + 1} on local dimension {d} is vacuous (need D < d)")


def _main_blocks(m: int, d: int, D: int) -> List[ConeBlock]:
    side = 2 * d * D * D * d
    return _layout(
        [
            ("lambda", FREE, ()),
            ("p_c", NONNEG, (m, m, d, d)),
            ("p_u", NONNEG, (m, m, d, d)),
            ("q", NONNEG, (m, m, d)),
            ("r", NONNEG, (m,)),
            ("p1", NONNEG, ()),
            ("p2", NONNEG, ()),
            ("lambda1", PSD, (side, side)),
            ("lambda2", PSD, (side, side)),
        ]
    )


def _pair_operators(meas: MeasurementSet) -> np.ndarray:
    """N_{a|x} (x) N_{b|y} stacked in policy order k, shape (m*m*d*d, d*d, d*d)"""
    d, ops = meas.local_dim, meas.operators
    pairs = np.einsum("xaij,ybkl->xyabikjl", ops, ops)
    return pairs.reshape(meas.m * meas.m * d * d, d * d, d * d)


def assemble_program(target: DensityMatrix, meas: MeasurementSet, D: int, level: int = HIERARCHY_LEVEL) -> ConicProgram:
    """
    minimize p1 + p2 over policies, subject to
      tr(M_U rho) = p2,
      Pi (p1 I - M_C) Pi^dagger = Lambda1 + Lambda2^{T_BB'} + lambda (Pi Pi^dagger - I/D),
      Lambda1, Lambda2 >= 0, and the 1-way LOCC marginal constraints.
    """
    _check_level(level)
    d, m = meas.local_dim, meas.m
    if tuple(target.dims) != (d, d):
        raise AssemblyError(f"target dims {tuple(target.dims)} do not match measurement dimension {d}")
    _check_ancilla(d, D)

    geo = _geometry(d, D)
    blocks = _main_blocks(m, d, D)

    named = {blk.name: blk for blk in blocks}
    n_pairs = m * m * d * d
    k_index = np.arange(n_pairs)
    eq = _Equalities()

    # p2 = tr(M_U rho) = 1 - sum_k P_C(k) tr(N_k rho)
    probs = born_probabilities(target, meas).ravel()
    row = eq.reserve(1, 1.0)
    eq.put(row, named["p_c"].offset + k_index, probs)
    eq.put(row, named["p2"].offset, 1.0)

    # witness equality, moved to one side: ... - p1 K + sum_k P_C(k) Pi N_k Pi^dagger = 0
    real_rows, imag_rows = _put_witness_rows(
        eq, geo, named["lambda"], named["lambda1"], named["lambda2"], np.zeros((geo.n, geo.n), dtype=complex)
    )
    i, j = geo.upper
    eq.put(real_rows, named["p1"].offset, -geo.k[i, j])
    lifted = geo.pi @ _pair_operators(meas) @ geo.pi.conj().T
    pc_cols = named["p_c"].offset + k_index[:, None]
    eq.put(real_rows[None, :], pc_cols, lifted[:, i, j].real)
    i, j = geo.strict_upper
    eq.put(imag_rows[None, :], pc_cols, lifted[:, i, j].imag)

    _put_structure_rows(eq, geo, named["lambda1"])
    _put_structure_rows(eq, geo, named["lambda2"])

    # P(x,y,C|a,b) + P(x,y,U|a,b) = P(x,y|a)
    rows = eq.reserve(n_pairs)
    eq.put(rows, named["p_c"].offset + k_index, 1.0)
    eq.put(rows, named["p_u"].offset + k_index, 1.0)
    eq.put(rows, named["q"].offset + k_index // d, -1.0)

    # sum_y P(x,y|a) = P(x)
    x, y, a = np.unravel_index(np.arange(m * m * d), (m, m, d))
    rows = eq.reserve(m * d)
    eq.put(rows[x * d + a], named["q"].offset + np.arange(m * m * d), 1.0)
    eq.put(rows, named["r"].offset + np.arange(m * d) // d, -1.0)

    # sum_x P(x) = 1
    row = eq.reserve(1, 1.0)
    eq.put(row, named["r"].offset + np.arange(m), 1.0)

    n_variables = blocks[-1].stop
    a_matrix, b = eq.build(n_variables)
    c = np.zeros(n_variables)
    c[named["p1"].offset] = 1.0
    c[named["p2"].offset] = 1.0

    prog = ConicProgram(c, a_matrix, b, blocks, meta={"m": m, "d": d, "D": D, "level": level})
    logger.info(
        "program_assembled",
        m=m,
        d=d,
        D=D,
        variables=prog.n_variables,
        constraints=prog.n_constraints,
        psd_side=2 * geo.n,
    )
    return prog


def assemble_witness_program(m_c: np.ndarray, d: int, D: int, p1: Optional[float] = None) -> ConicProgram:
    """
    Witness program for a fixed effective POVM element M_C.

    With p1 given: feasibility of Pi (p1 I - M_C) Pi^dagger = Lambda1 + Lambda2^{T_BB'} + lambda (...).
    With p1=None: minimize p1 subject to the same, i.e. the tightest certifiable type-I bound.
    """
    m_c = linalg.hermitize(m_c)
    if m_c.shape != (d * d, d * d):
        raise DimensionError(f"M_C of shape {m_c.shape} does not match local dimension {d}")
    _check_ancilla(d, D)
    geo = _geometry(d, D)
    side = 2 * geo.n

    spec = [("lambda", FREE, ())]
    if p1 is None:
        spec.append(("p1", NONNEG, ()))
    spec += [("lambda1", PSD, (side, side)), ("lambda2", PSD, (side, side))]
    blocks = _layout(spec)
    named = {blk.name: blk for blk in blocks}

    lifted = geo.pi @ m_c @ geo.pi.conj().T
    rhs = -lifted if p1 is None else p1 * geo.k - lifted
    eq = _Equalities()
    real_rows, _ = _put_witness_rows(eq, geo, named["lambda"], named["lambda1"], named["lambda2"], rhs)
    if p1 is None:
        i, j = geo.upper
        eq.put(real_rows, named["p1"].offset, -geo.k[i, j])
    _put_structure_rows(eq, geo, named["lambda1"])
    _put_structure_rows(eq, geo, named["lambda2"])

    n_variables = blocks[-1].stop
    a_matrix, b = eq.build(n_variables)
    c = np.zeros(n_variables)
    if p1 is None:
        c[named["p1"].offset] = 1.0
    return ConicProgram(c, a_matrix, b, blocks, meta={"d": d, "D": D})


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ProtocolCertificate:
    """Solved protocol with its effective POVM and witness data"""
    p1: float
    p2: float
    policy: LoccPolicy
    m_c: np.ndarray
    m_u: np.ndarray
    lambda1: Optional[np.ndarray]
    lambda2: Optional[np.ndarray]
    lambda_scalar: float
    solver_status: SolverStatus
    duality_gap: Optional[float]
    witness_residual: float
    D: int
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None
    solver: Optional[str] = None
    solve_time: float = 0.0
    cleaned: bool = True

    @property
    def d(self) -> int:
        return self.policy.d

    @property
    def m(self) -> int:
        return self.policy.m

    @property
    def robustness(self) -> float:
        return 1.0 - self.p1 - self.p2

    def violations(self) -> List[str]:
        found = []
        for name in ("p1", "p2"):
            value = getattr(self, name)
            if not -POVM_BOUND_TOL <= value <= 1 + POVM_BOUND_TOL:
                found.append(f"{name} = {value:.9f} outside [0, 1]")
        completeness = float(np.max(np.abs(self.m_c + self.m_u - np.eye(self.m_c.shape[0]))))
        if completeness > POVM_BOUND_TOL:
            found.append(f"M_C + M_U deviates from identity by {completeness:.3e}")
        if self.witness_residual > WITNESS_RESIDUAL_TOL:
            found.append(f"witness residual {self.witness_residual:.3e} exceeds {WITNESS_RESIDUAL_TOL:.0e}")
        return found


def _witness_residual(
    geo: _WitnessGeometry, m_c: np.ndarray, p1: float, lambda1: np.ndarray, lambda2: np.ndarray, lam: float
) -> float:
    lhs = geo.pi @ (p1 * np.eye(m_c.shape[0]) - m_c) @ geo.pi.conj().T
    rhs = lambda1 + geo.partial_transpose(lambda2) + lam * (geo.k - np.eye(geo.n) / geo.D)
    return float(np.max(np.abs(lhs - rhs)))


def _clip(policy: LoccPolicy) -> LoccPolicy:
    return LoccPolicy(
        policy.m,
        policy.d,
        np.clip(policy.table_c, 0.0, None),
        np.clip(policy.table_u, 0.0, None),
        np.clip(policy.marginal_q, 0.0, None),
        np.clip(policy.marginal_r, 0.0, None),
    )


def _sparsify(policy: LoccPolicy, threshold: float) -> LoccPolicy:
    """Zero entries below threshold, then rescale marginals and tables back into a consistent policy"""
    c = np.where(policy.table_c < threshold, 0.0, policy.table_c)
    u = np.where(policy.table_u < threshold, 0.0, policy.table_u)
    q = np.where(policy.marginal_q < threshold, 0.0, policy.marginal_q)
    r = np.where(policy.marginal_r < threshold, 0.0, policy.marginal_r)
    if r.sum() <= 0:
        raise ExtractionError("every setting probability fell below the zeroing threshold")
    r = r / r.sum()

    # rescale q(x, ., a) to sum to r(x)
    q_sums = q.sum(axis=1, keepdims=True)
    uniform = np.broadcast_to(r[:, None, None] / policy.m, q.shape)
    q = np.where(q_sums > 0, q * r[:, None, None] / np.where(q_sums > 0, q_sums, 1.0), uniform)

    # rescale (C, U) at each (x, y, a, b) to sum to q(x, y, a); empty cells go to U
    cu = c + u
    scale = np.where(cu > 0, q[..., None] / np.where(cu > 0, cu, 1.0), 0.0)
    c = c * scale
    u = np.where(cu > 0, u * scale, np.broadcast_to(q[..., None], u.shape))
    return LoccPolicy(policy.m, policy.d, c, u, q, r)


@dataclass(eq=False)
class _Recertified:
    policy: LoccPolicy
    m_c: np.ndarray
    p1: float
    p2: float
    lambda1: np.ndarray

    @property
    def objective(self) -> float:
        return self.p1 + self.p2


def _recertify(
    policy: LoccPolicy,
    meas: MeasurementSet,
    rho: np.ndarray,
    geo: _WitnessGeometry,
    m_c_solved: np.ndarray,
    p1_solved: float,
    lambda1: np.ndarray,
) -> _Recertified:
    """
    Carry the solved witness over to a modified policy without re-solving.

    With delta = M_C' - M_C and t >= lambda_max(delta), Pi (t I - delta) Pi^dagger is PSD,
    so raising p1 by t and adding that term to Lambda1 keeps the witness equality exact.
    """
    m_c = _effective(policy.table_c, meas)
    m_c = (m_c + m_c.conj().T) / 2
    delta = m_c - m_c_solved
    shift = max(0.0, linalg.max_eigenvalue(delta))
    p1 = max(p1_solved + shift, 0.0)
    shift = p1 - p1_solved
    correction = geo.pi @ (shift * np.eye(m_c.shape[0]) - delta) @ geo.pi.conj().T
    p2 = 1.0 - float(np.trace(m_c @ rho).real)
    return _Recertified(policy, m_c, p1, p2, lambda1 + correction)


def extract_protocol(
    sol: RawSolution,
    target: DensityMatrix,
    meas: MeasurementSet,
    D: int,
    zero_threshold: Optional[float] = None,
    cleaning_tolerance: Optional[float] = None,
) -> ProtocolCertificate:
    """Read the policy and witness off a solved program and re-certify the cleaned protocol"""
    if not sol.status.solved or sol.x is None:
        raise ExtractionError(f"cannot extract a protocol from a solve with status '{sol.status.value}'")
    zero_threshold = settings.zero_threshold if zero_threshold is None else zero_threshold
    cleaning_tolerance = settings.cleaning_tolerance if cleaning_tolerance is None else cleaning_tolerance

    d, m = meas.local_dim, meas.m
    geo = _geometry(d, D)
    blocks = _main_blocks(m, d, D)

    def value(name: str) -> np.ndarray:
        return read_block(blocks, sol.x, name)

    solved = LoccPolicy(m, d, value("p_c"), value("p_u"), value("q"), value("r"))
    m_c_solved = _effective(solved.table_c, meas)
    m_c_solved = (m_c_solved + m_c_solved.conj().T) / 2
    p1_solved = float(value("p1"))
    lam = float(value("lambda"))
    lambda1 = linalg.complex_from_embedding(value("lambda1"))
    lambda2 = linalg.complex_from_embedding(value("lambda2"))
    rho = target.matrix

    raw = _recertify(_clip(solved), meas, rho, geo, m_c_solved, p1_solved, lambda1)
    chosen, cleaned = raw, False
    try:
        sparse = _recertify(_sparsify(_clip(solved), zero_threshold), meas, rho, geo, m_c_solved, p1_solved, lambda1)
    except ExtractionError as e:
        logger.warning("policy_kept_raw", reason=str(e))
    else:
        degradation = sparse.objective - raw.objective
        if degradation <= cleaning_tolerance:
            chosen, cleaned = sparse, True
            logger.info("policy_cleaned", degradation=degradation, threshold=zero_threshold)
        else:
            logger.warning("policy_kept_raw", degradation=degradation, tolerance=cleaning_tolerance)

    chosen.policy.validate(EXTRACTION_TOL)
    m_c = chosen.m_c
    m_u = np.eye(d * d) - m_c
    residual = _witness_residual(geo, m_c, chosen.p1, chosen.lambda1, lambda2, lam)

    certificate = ProtocolCertificate(
        p1=chosen.p1,
        p2=chosen.p2,
        policy=chosen.policy,
        m_c=m_c,
        m_u=m_u,
        lambda1=chosen.lambda1,
        lambda2=lambda2,
        lambda_scalar=lam,
        solver_status=sol.status,
        duality_gap=sol.duality_gap,
        witness_residual=residual,
        D=D,
        lower_bound=sol.lower_bound,
        upper_bound=sol.upper_bound,
        solver=sol.solver,
        solve_time=sol.solve_time,
        cleaned=cleaned,
    )
    problems = certificate.violations()
    if problems:
        logger.warning("certificate_out_of_tolerance", problems=problems)
    logger.info(
        "protocol_extracted",
        p1=certificate.p1,
        p2=certificate.p2,
        robustness=certificate.robustness,
        residual=residual,
        cleaned=cleaned,
    )
    return certificate


@dataclass(eq=False)
class Synthesis:
    """Program, raw solve and (when solved) the extracted certificate"""
    program: ConicProgram
    solution: RawSolution
    certificate: Optional[ProtocolCertificate] = None

    @property
    def status(self) -> SolverStatus:
        return self.solution.status


def synthesize(
    target: DensityMatrix,
    meas: MeasurementSet,
    D: int,
    options: Optional[SolverOptions] = None,
    level: int = HIERARCHY_LEVEL,
) -> Synthesis:
    """assemble -> solve -> extract"""
    prog = assemble_program(target, meas, D, level)
    sol = solve(prog, options)
    result = Synthesis(prog, sol)
    if sol.status.solved:
        result.certificate = extract_protocol(sol, target, meas, D)
    return result


# ---------------------------------------------------------------------------
# Witness checks
# ---------------------------------------------------------------------------


@dataclass
class WitnessReport:
    status: WitnessStatus
    p1: float
    residual: Optional[float] = None
    solver_status: Optional[SolverStatus] = None
    message: Optional[str] = None
    min_eigenvalue: Optional[float] = None

    @property
    def feasible(self) -> bool:
        return self.status == WitnessStatus.FEASIBLE


def verify_witness(
    m_c: np.ndarray,
    p1: float,
    d: int,
    D: int,
    tol: float = WITNESS_RESIDUAL_TOL,
    options: Optional[SolverOptions] = None,
) -> WitnessReport:
    """
    Decide whether p1 I - M_C admits the level-1 witness decomposition, which certifies
    tr(sigma M_C) <= p1 for every sigma of Schmidt number <= D.

    Solver trouble is reported as indeterminate, never as infeasible.
    """
    prog = assemble_witness_program(m_c, d, D, p1)
    sol = solve(prog, options)
    if sol.status == SolverStatus.INFEASIBLE:
        report = WitnessReport(WitnessStatus.INFEASIBLE, p1, solver_status=sol.status, message=sol.message)
    elif not sol.status.solved:
        report = WitnessReport(WitnessStatus.INDETERMINATE, p1, solver_status=sol.status, message=sol.message)
    else:
        geo = _geometry(d, D)
        lambda1 = linalg.complex_from_embedding(prog.block_value(sol.x, "lambda1"))
        lambda2 = linalg.complex_from_embedding(prog.block_value(sol.x, "lambda2"))
        lam = float(prog.block_value(sol.x, "lambda"))
        residual = _witness_residual(geo, linalg.hermitize(m_c), p1, lambda1, lambda2, lam)
        # both decomposition blocks must be PSD, not just satisfy the equality
        lowest = min(linalg.min_eigenvalue(linalg.hermitize(block, np.inf)) for block in (lambda1, lambda2))
        message = None
        if residual > tol:
            message = f"residual {residual:.3e} above {tol:.0e}"
        elif lowest < -tol:
            message = f"witness block eigenvalue {lowest:.3e} below {-tol:.0e}"
        status = WitnessStatus.FEASIBLE if message is None else WitnessStatus.INDETERMINATE
        report = WitnessReport(status, p1, residual, sol.status, message, lowest)
    logger.info(
        "witness_verified",
        status=report.status.value,
        p1=p1,
        residual=report.residual,
        min_eigenvalue=report.min_eigenvalue,
    )
    return report


def minimal_type_one_error(m_c: np.ndarray, d: int, D: int, options: Optional[SolverOptions] = None) -> Optional[float]:
    """Smallest p1 the level-1 witness certifies for M_C, or None if the solve fails"""
    prog = assemble_witness_program(m_c, d, D)
    sol = solve(prog, options)
    if not sol.status.solved:
        return None
    return float(prog.block_value(sol.x, "p1"))


@dataclass
class OracleResult:
    """Largest tr(sigma M_C) seen over random states of Schmidt rank <= D"""
    max_value: float
    bound: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_value <= self.bound


def randomized_witness_oracle(
    m_c: np.ndarray,
    p1: float,
    D: int,
    n_samples: Optional[int] = None,
    seed: SeedLike = None,
    slack: Optional[float] = None,
) -> OracleResult:
    """
    Spot-check the type-I bound on random pure states with Schmidt rank 1..D.

    A necessary condition only; verify_witness is the proof.
    """
    m_c = linalg.hermitize(m_c)
    d = int(round(np.sqrt(m_c.shape[0])))
    if d * d != m_c.shape[0]:
        raise DimensionError(f"M_C of side {m_c.shape[0]} is not a two-party operator on C^d (x) C^d")
    n_samples = settings.oracle_samples if n_samples is None else n_samples
    slack = settings.witness_slack if slack is None else slack
    children = seed_sequence(seed).spawn(n_samples)

    best = 0.0 if n_samples else float("nan")
    for index, child in enumerate(children):
        psi = random_pure_schmidt(d, 1 + index % D, child).vector
        best = max(best, float(np.vdot(psi, m_c @ psi).real))
    logger.info("witness_oracle", max_value=best, p1=p1, samples=n_samples)
    return OracleResult(best, p1 + slack, n_samples)
