"""
Dense complex matrix primitives

Tensor factors are always ordered A, A', B', B (two-party operators: A, B)
with row-major composite indices.
"""
from typing import Iterable, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy import linalg as sla

from entdim.exceptions import ContractViolation, DimensionError

ComplexMatrix = npt.NDArray[np.complex128]
SubsystemDims = Tuple[int, ...]

HERMITIAN_TOL = 1e-12
CONTRACT_TOL = 1e-9


def as_matrix(m) -> ComplexMatrix:
    """Coerce to a 2-D complex128 array"""
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {arr.shape}")
    return arr


def check_dims(m: np.ndarray, dims: Sequence[int]) -> SubsystemDims:
    """Validate that `dims` factor the (square) matrix `m`"""
    dims = tuple(int(k) for k in dims)
    if any(k < 1 for k in dims):
        raise DimensionError(f"subsystem dimensions must be positive, got {dims}")
    total = int(np.prod(dims))
    if m.shape != (total, total):
        raise DimensionError(f"dims {dims} (product {total}) do not match matrix shape {m.shape}")
    return dims


def hermiticity_deviation(m: np.ndarray) -> float:
    """max |M - M^dagger| elementwise"""
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def hermitize(m: np.ndarray, tol: float = CONTRACT_TOL) -> ComplexMatrix:
    """
    Symmetrize (M + M^dagger)/2 after checking that M was Hermitian up to `tol`.
    Floating-point assembly leaves tiny asymmetries that solvers must not see.
    """
    m = as_matrix(m)
    deviation = hermiticity_deviation(m)
    if deviation > tol:
        raise ContractViolation(f"matrix deviates from Hermitian by {deviation:.3e} > {tol:.1e}")
    return (m + m.conj().T) / 2


def kron(a: np.ndarray, b: np.ndarray) -> ComplexMatrix:
    """(a (x) b)[i*r_b + k, j*c_b + l] = a[i, j] * b[k, l]"""
    return np.kron(as_matrix(a), as_matrix(b))


def partial_transpose(m: np.ndarray, dims: Sequence[int], subsystems: Iterable[int]) -> np.ndarray:
    """
    Transpose the tensor indices of the listed subsystems, leave the others untouched.

    Works on any dtype, so an integer index matrix can be pushed through it to obtain
    the entry permutation of the partial transpose.
    """
    m = np.asarray(m)
    dims = check_dims(m, dims)
    subsystems = set(int(s) for s in subsystems)
    n = len(dims)
    if any(s < 0 or s >= n for s in subsystems):
        raise DimensionError(f"subsystem indices {sorted(subsystems)} out of range for {n} factors")

    tensor = m.reshape(dims + dims)
    axes = list(range(2 * n))
    for s in subsystems:
        axes[s], axes[n + s] = axes[n + s], axes[s]
    return tensor.transpose(axes).reshape(m.shape)


def partial_trace(m: np.ndarray, dims: Sequence[int], keep: Iterable[int]) -> ComplexMatrix:
    """Trace out every subsystem not listed in `keep`"""
    m = as_matrix(m)
    dims = check_dims(m, dims)
    keep = sorted(set(int(k) for k in keep))
    n = len(dims)
    tensor = m.reshape(dims + dims)
    traced = [k for k in range(n) if k not in keep]
    # trace from the last factor so axis numbers stay valid
    for count, k in enumerate(sorted(traced, reverse=True)):
        current_n = n - count
        tensor = np.trace(tensor, axis1=k, axis2=k + current_n)
    kept_dim = int(np.prod([dims[k] for k in keep])) if keep else 1
    return tensor.reshape(kept_dim, kept_dim)


def build_pi(d: int, D: int) -> ComplexMatrix:
    """
    Pi_D = I_A (x) |psi_D+>_{A'B'} (x) I_B with the un-normalized |psi_D+> = sum_i |i>|i>.

    Returns the (d*D*D*d) x (d*d) matrix whose column |a>|b> is sum_i |a>|i>|i>|b>.
    """
    if d < 2:
        raise DimensionError(f"local dimension must be >= 2, got {d}")
    if D < 1:
        raise DimensionError(f"ancilla dimension must be >= 1, got {D}")

    pi = np.zeros((d * D * D * d, d * d), dtype=np.complex128)
    a, b, i = np.meshgrid(np.arange(d), np.arange(d), np.arange(D), indexing="ij")
    rows = ((a * D + i) * D + i) * d + b
    cols = a * d + b
    pi[rows.ravel(), cols.ravel()] = 1.0
    return pi


def real_embedding(h: np.ndarray) -> npt.NDArray[np.float64]:
    """[[Re h, -Im h], [Im h, Re h]]; h >= 0 iff the embedding is >= 0"""
    h = hermitize(h, CONTRACT_TOL)
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def complex_from_embedding(y: np.ndarray) -> ComplexMatrix:
    """
    Compress a 2n x 2n real matrix back to n x n complex: (Y11 + Y22)/2 + i(Y21 - Y12)/2.

    This is W^dagger Y W with W = [I; -iI]/sqrt(2), so it maps PSD to PSD even when the
    block structure holds only approximately.
    """
    y = np.asarray(y, dtype=np.float64)
    n2 = y.shape[0]
    if y.shape != (n2, n2) or n2 % 2:
        raise DimensionError(f"embedding must be square with even side, got {y.shape}")
    n = n2 // 2
    y11, y12, y21, y22 = y[:n, :n], y[:n, n:], y[n:, :n], y[n:, n:]
    return ((y11 + y22) + 1j * (y21 - y12)) / 2


def min_eigenvalue(h: np.ndarray) -> float:
    """Smallest eigenvalue of a Hermitian matrix"""
    h = hermitize(h, CONTRACT_TOL)
    return float(sla.eigvalsh(h, subset_by_index=[0, 0])[0])


def max_eigenvalue(h: np.ndarray) -> float:
    h = hermitize(h, CONTRACT_TOL)
    n = h.shape[0]
    return float(sla.eigvalsh(h, subset_by_index=[n - 1, n - 1])[0])


def projector(v: np.ndarray) -> ComplexMatrix:
    """|v><v|"""
    v = np.asarray(v, dtype=np.complex128).ravel()
    return np.outer(v, v.conj())
