"""
Target states and random states
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.stats import unitary_group

from entdim.exceptions import DimensionError, DomainError
from entdim.services import linalg

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]

SCHMIDT_TOL = 1e-7
SCHMIDT_FLOOR = 1e-4
TRACE_TOL = 1e-10
PSD_TOL = 1e-9
NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized vector on C^{d_A} (x) C^{d_B}"""
    vector: np.ndarray
    dims: Tuple[int, int]

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.complex128).ravel()
        dims = (int(self.dims[0]), int(self.dims[1]))
        if vector.size != dims[0] * dims[1]:
            raise DimensionError(f"vector of length {vector.size} does not match dims {dims}")
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > NORM_TOL:
            raise DomainError(f"state is not normalized: |psi| = {norm:.15f}")
        vector.setflags(write=False)
        object.__setattr__(self, "vector", vector)
        object.__setattr__(self, "dims", dims)

    def coefficients(self) -> np.ndarray:
        """The d_A x d_B coefficient matrix psi[a, b] = <ab|psi>"""
        return self.vector.reshape(self.dims)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(linalg.projector(self.vector), self.dims)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, PSD, unit-trace operator on C^{d_A} (x) C^{d_B}"""
    matrix: np.ndarray
    dims: Tuple[int, int]

    def __post_init__(self):
        matrix = linalg.as_matrix(self.matrix)
        dims = linalg.check_dims(matrix, self.dims)
        if len(dims) != 2:
            raise DimensionError(f"bipartite state needs two dims, got {dims}")
        deviation = linalg.hermiticity_deviation(matrix)
        if deviation > linalg.HERMITIAN_TOL:
            raise DomainError(f"density matrix is not Hermitian (deviation {deviation:.2e})")
        trace = complex(np.trace(matrix))
        if abs(trace - 1.0) > TRACE_TOL:
            raise DomainError(f"density matrix has trace {trace.real:.12f}")
        lowest = linalg.min_eigenvalue(matrix)
        if lowest < -PSD_TOL:
            raise DomainError(f"density matrix has negative eigenvalue {lowest:.3e}")
        matrix = matrix.copy()
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "dims", dims)

    @property
    def local_dims(self) -> Tuple[int, int]:
        return self.dims

    def reduced(self, keep: int) -> np.ndarray:
        """Reduced state of party 0 (A) or 1 (B)"""
        return linalg.partial_trace(self.matrix, self.dims, [keep])


def _basis_ket(d: int, *levels: int) -> np.ndarray:
    ket = np.zeros(d * d, dtype=np.complex128)
    for a, b in levels:
        ket[a * d + b] = 1.0
    return ket


def max_entangled(d: int) -> PureState:
    """|Psi_d> = (1/sqrt d) sum_{i<d} |ii>"""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    return PureState(_basis_ket(d, *[(i, i) for i in range(d)]) / np.sqrt(d), (d, d))


def embedded_max_entangled(k: int, d: int) -> PureState:
    """|Psi_k> on the lowest k levels of C^d (x) C^d"""
    if not 1 <= k <= d:
        raise DomainError(f"cannot embed Psi_{k} in local dimension {d}")
    return PureState(_basis_ket(d, *[(i, i) for i in range(k)]) / np.sqrt(k), (d, d))


def _check_mixing(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"mixing parameter p must lie in [0, 1], got {p}")
    return p


def rho_unf(p: float) -> DensityMatrix:
    """(1-p)|Psi_3><Psi_3| + p|phi><phi| with |phi> = (|23> + |32>)/sqrt 2, in C^4 (x) C^4"""
    p = _check_mixing(p)
    psi3 = embedded_max_entangled(3, 4).vector
    phi = _basis_ket(4, (2, 3), (3, 2)) / np.sqrt(2)
    matrix = (1 - p) * linalg.projector(psi3) + p * linalg.projector(phi)
    return DensityMatrix(matrix, (4, 4))


def rho_iso2(p: float) -> DensityMatrix:
    """(1-p)|Psi_2><Psi_2| + p I/16 in C^4 (x) C^4"""
    p = _check_mixing(p)
    psi2 = embedded_max_entangled(2, 4).vector
    matrix = (1 - p) * linalg.projector(psi2) + (p / 16) * np.eye(16)
    return DensityMatrix(matrix, (4, 4))


def _schmidt_weights(rng: np.random.Generator, r: int) -> np.ndarray:
    # the flat law conditioned on w_i >= floor is the flat law on the shrunk simplex
    slack = 1.0 - r * SCHMIDT_FLOOR
    if slack <= 0:
        raise DomainError(f"Schmidt rank {r} leaves no room above the coefficient floor {SCHMIDT_FLOOR}")
    return SCHMIDT_FLOOR + slack * rng.dirichlet(np.ones(r))


def random_pure_schmidt(d: int, r: int, seed: SeedLike = None) -> PureState:
    """
    Random pure state on C^d (x) C^d with exactly r nonzero Schmidt coefficients.

    Squared coefficients follow the flat Dirichlet law on the r-simplex (each >= 1e-4);
    local Haar unitaries rotate both sides. Deterministic for a given seed.
    """
    if r < 1 or r > d:
        raise DomainError(f"Schmidt rank must satisfy 1 <= r <= d, got r={r}, d={d}")
    rng = np.random.default_rng(seed)
    weights = _schmidt_weights(rng, r)
    if d == 1:
        u = v = np.ones((1, 1), dtype=np.complex128)
    else:
        u = unitary_group.rvs(d, random_state=rng)
        v = unitary_group.rvs(d, random_state=rng)
    # psi[a, b] = sum_i sqrt(w_i) U[a, i] V[b, i]
    coeffs = (u[:, :r] * np.sqrt(weights)) @ v[:, :r].T
    vector = coeffs.ravel()
    return PureState(vector / np.linalg.norm(vector), (d, d))


def product_state(d: int, seed: SeedLike = None) -> PureState:
    return random_pure_schmidt(d, 1, seed)


def schmidt_coefficients(psi: PureState) -> np.ndarray:
    return np.linalg.svd(psi.coefficients(), compute_uv=False)


def schmidt_rank(psi: PureState, tol: float = SCHMIDT_TOL) -> int:
    """Number of singular values of the coefficient matrix above tol"""
    return int(np.sum(schmidt_coefficients(psi) > tol))


def state_from_matrix(matrix: np.ndarray, dims: Tuple[int, int]) -> DensityMatrix:
    """Validate and symmetrize an externally supplied density matrix"""
    return DensityMatrix(linalg.hermitize(matrix), dims)


def seed_sequence(seed: SeedLike = None) -> np.random.SeedSequence:
    """Normalize any accepted seed to a SeedSequence for spawning per-item streams"""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    return np.random.SeedSequence(seed)


def reduced_state(rho: Union[DensityMatrix, np.ndarray], keep: int, dims: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Partial trace over the other party; keep is 0 for A and 1 for B"""
    if isinstance(rho, DensityMatrix):
        return rho.reduced(keep)
    matrix = linalg.as_matrix(rho)
    if dims is None:
        d = int(round(np.sqrt(matrix.shape[0])))
        dims = (d, d)
    return linalg.partial_trace(matrix, dims, [keep])
