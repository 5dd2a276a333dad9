"""
Document models and status enums for entdim
"""
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

SCHEMA_VERSION = 1

ComplexPair = Tuple[float, float]
MatrixRows = List[List[ComplexPair]]


class SolverStatus(str, Enum):
    """Conic solve status enumeration"""
    OPTIMAL = "optimal"
    NEAR_OPTIMAL = "near_optimal"
    INFEASIBLE = "infeasible"
    FAILED = "failed"

    @property
    def solved(self) -> bool:
        return self in (SolverStatus.OPTIMAL, SolverStatus.NEAR_OPTIMAL)


class WitnessStatus(str, Enum):
    """Witness verification outcome"""
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    INDETERMINATE = "indeterminate"


class SettingFamily(str, Enum):
    """Named measurement setting families"""
    UNF = "unf"
    ISO2 = "iso2"
    PSI4 = "psi4"
    GELL_MANN = "gell_mann"


class TargetFamily(str, Enum):
    """Named target state families"""
    MAX_ENTANGLED = "max_entangled"
    UNF = "unf"
    ISO2 = "iso2"


def matrix_to_rows(m: np.ndarray) -> MatrixRows:
    """Row-major nested list of [re, im] pairs"""
    m = np.asarray(m, dtype=np.complex128)
    return [[(float(z.real), float(z.imag)) for z in row] for row in m]


def rows_to_matrix(rows: MatrixRows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    return arr[..., 0] + 1j * arr[..., 1]


def _check_square(rows: MatrixRows, name: str) -> int:
    n = len(rows)
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ValueError(f"{name} row {i} has {len(row)} entries, expected {n}")
    return n


class StateDocument(BaseModel):
    """Density matrix on C^{d_A} (x) C^{d_B}"""
    schema_version: int = SCHEMA_VERSION
    dims: Tuple[int, int]
    matrix: MatrixRows

    @model_validator(mode="after")
    def check_shape(self):
        n = _check_square(self.matrix, "matrix")
        if n != self.dims[0] * self.dims[1]:
            raise ValueError(f"matrix side {n} does not match dims {list(self.dims)}")
        return self

    @classmethod
    def from_array(cls, matrix: np.ndarray, dims: Tuple[int, int]) -> "StateDocument":
        return cls(dims=tuple(int(k) for k in dims), matrix=matrix_to_rows(matrix))

    def to_array(self) -> np.ndarray:
        return rows_to_matrix(self.matrix)


class MeasurementSetDocument(BaseModel):
    """settings[x][a] is the d x d POVM element N_{a|x}"""
    schema_version: int = SCHEMA_VERSION
    local_dim: int = Field(..., ge=2)
    family: Optional[str] = None
    settings: List[List[MatrixRows]]

    @model_validator(mode="after")
    def check_shape(self):
        if not self.settings:
            raise ValueError("at least one setting is required")
        for x, setting in enumerate(self.settings):
            if len(setting) != self.local_dim:
                raise ValueError(f"setting {x + 1} has {len(setting)} outcomes, expected {self.local_dim}")
            for element in setting:
                if _check_square(element, f"settings[{x}]") != self.local_dim:
                    raise ValueError(f"setting {x + 1} has an element of wrong size")
        return self

    @classmethod
    def from_array(cls, operators: np.ndarray, family: Optional[str] = None) -> "MeasurementSetDocument":
        ops = np.asarray(operators)
        return cls(
            local_dim=int(ops.shape[-1]),
            family=family,
            settings=[[matrix_to_rows(e) for e in setting] for setting in ops],
        )

    def to_array(self) -> np.ndarray:
        return np.array([[rows_to_matrix(e) for e in setting] for setting in self.settings])


class TargetDescriptor(BaseModel):
    """Named family + parameter, or an external state file"""
    family: Optional[TargetFamily] = None
    p: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    dim: int = Field(default=4, ge=2)
    state_file: Optional[str] = None

    @model_validator(mode="after")
    def check_source(self):
        if self.family is None and self.state_file is None:
            raise ValueError("either a target family or a state file is required")
        if self.family in (TargetFamily.UNF, TargetFamily.ISO2) and self.p is None:
            raise ValueError(f"target family '{self.family.value}' needs a mixing parameter p")
        return self

    @property
    def label(self) -> str:
        if self.family is None:
            return self.state_file
        if self.family == TargetFamily.MAX_ENTANGLED:
            return f"max_entangled_{self.dim}"
        return f"{self.family.value}_{self.p:g}"


PolicyRow = Tuple[int, int, str, int, int, float]


class SolverDiagnostics(BaseModel):
    status: str
    solver: Optional[str] = None
    duality_gap: Optional[float] = None
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None
    solve_time_s: Optional[float] = None
    message: Optional[str] = None


class CertificateDocument(BaseModel):
    """Solved protocol with its witness data, as written by `synth`"""
    schema_version: int = SCHEMA_VERSION
    target: TargetDescriptor
    state: StateDocument
    measurements: MeasurementSetDocument
    d: int = Field(..., ge=2)
    m: int = Field(..., ge=1)
    D: int = Field(..., ge=1)
    p1: float
    p2: float
    robustness: float
    lambda_scalar: float = 0.0
    witness_residual: float
    cleaned: bool = True
    policy: List[PolicyRow]
    lambda1: Optional[MatrixRows] = None
    lambda2: Optional[MatrixRows] = None
    solver: SolverDiagnostics

    @field_validator("policy")
    @classmethod
    def check_rows(cls, rows: List[PolicyRow]) -> List[PolicyRow]:
        for i, (x, y, c, a, b, value) in enumerate(rows):
            if c not in ("C", "U"):
                raise ValueError(f"policy row {i}: outcome must be 'C' or 'U', got {c!r}")
            if min(x, y, a, b) < 1:
                raise ValueError(f"policy row {i}: indices are 1-based")
            if value < 0:
                raise ValueError(f"policy row {i}: negative probability {value}")
        return rows

    @model_validator(mode="after")
    def check_dims(self):
        for i, (x, y, _, a, b, _) in enumerate(self.policy):
            if x > self.m or y > self.m or a > self.d or b > self.d:
                raise ValueError(f"policy row {i} indexes outside m={self.m}, d={self.d}")
        if self.measurements.local_dim != self.d or len(self.measurements.settings) != self.m:
            raise ValueError("embedded measurement set does not match d and m")
        return self


class ExperimentRecordDocument(BaseModel):
    """counts[x][y][a][b]; a null entry marks an unmeasured setting pair"""
    schema_version: int = SCHEMA_VERSION
    dims: int = Field(..., ge=2)
    settings: int = Field(..., ge=1)
    rounds_per_pair: int = Field(..., ge=1)
    counts: List[List[Optional[List[List[int]]]]]

    @model_validator(mode="after")
    def check_shape(self):
        if len(self.counts) != self.settings or any(len(row) != self.settings for row in self.counts):
            raise ValueError(f"counts must be indexed [x][y] with {self.settings} settings per side")
        for x, row in enumerate(self.counts):
            for y, table in enumerate(row):
                if table is None:
                    continue
                if len(table) != self.dims or any(len(r) != self.dims for r in table):
                    raise ValueError(f"counts[{x}][{y}] must be a {self.dims} x {self.dims} table")
                if any(v < 0 for r in table for v in r):
                    raise ValueError(f"counts[{x}][{y}] has negative entries")
        return self
