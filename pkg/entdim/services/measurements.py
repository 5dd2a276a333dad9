"""
Local measurement settings
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from entdim.exceptions import DimensionError, MeasurementValidationError
from entdim.services import linalg
from entdim.storage.models import SettingFamily

POVM_TOL = 1e-9
BASIS_TOL = 1e-9


@dataclass
class SettingReport:
    """Validation figures for one setting"""
    index: int
    hermiticity_deviation: float
    min_eigenvalue: float
    completeness_deviation: float
    tol: float = POVM_TOL

    @property
    def valid(self) -> bool:
        return (
            self.hermiticity_deviation <= self.tol
            and self.min_eigenvalue >= -self.tol
            and self.completeness_deviation <= self.tol
        )

    def problems(self) -> List[str]:
        found = []
        if self.hermiticity_deviation > self.tol:
            found.append(f"setting {self.index + 1}: non-Hermitian element (deviation {self.hermiticity_deviation:.2e})")
        if self.min_eigenvalue < -self.tol:
            found.append(f"setting {self.index + 1}: negative eigenvalue {self.min_eigenvalue:.2e}")
        if self.completeness_deviation > self.tol:
            found.append(f"setting {self.index + 1}: elements do not sum to identity (deviation {self.completeness_deviation:.2e})")
        return found


@dataclass
class PovmReport:
    """Per-setting validation report; never raises"""
    settings: List[SettingReport] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return all(s.valid for s in self.settings)

    def problems(self) -> List[str]:
        return [p for s in self.settings for p in s.problems()]


def _as_operator_array(operators) -> np.ndarray:
    ops = np.asarray(operators, dtype=np.complex128)
    if ops.ndim != 4 or ops.shape[2] != ops.shape[3] or ops.shape[1] != ops.shape[2]:
        raise DimensionError(
            f"measurement operators must have shape (settings, outcomes, d, d) with outcomes == d, got {ops.shape}"
        )
    return ops


def validate_povm(measurements: Union["MeasurementSet", np.ndarray], tol: float = POVM_TOL) -> PovmReport:
    """Hermiticity, positivity and completeness of every setting"""
    ops = measurements.operators if isinstance(measurements, MeasurementSet) else _as_operator_array(measurements)
    d = ops.shape[-1]
    report = PovmReport()
    for x, setting in enumerate(ops):
        herm = max(linalg.hermiticity_deviation(element) for element in setting)
        # eigenvalues of the Hermitian part, so a slightly asymmetric element still gets a figure
        lowest = min(float(np.linalg.eigvalsh((e + e.conj().T) / 2)[0]) for e in setting)
        completeness = float(np.max(np.abs(setting.sum(axis=0) - np.eye(d))))
        report.settings.append(SettingReport(x, herm, lowest, completeness, tol))
    return report


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """
    m settings of d-outcome POVMs on C^d.

    operators[x, a] is N_{a|x}; the same set is used by both parties.
    """
    operators: np.ndarray
    family: Optional[str] = None

    def __post_init__(self):
        ops = _as_operator_array(self.operators).copy()
        report = validate_povm(ops)
        if not report.valid:
            raise MeasurementValidationError("; ".join(report.problems()))
        ops.setflags(write=False)
        object.__setattr__(self, "operators", ops)

    @property
    def local_dim(self) -> int:
        return int(self.operators.shape[-1])

    @property
    def m(self) -> int:
        return int(self.operators.shape[0])

    @property
    def settings(self) -> List[List[np.ndarray]]:
        return [list(setting) for setting in self.operators]

    def subset(self, indices: Sequence[int]) -> "MeasurementSet":
        """Keep only the listed settings (0-based, in the given order)"""
        indices = list(indices)
        if not indices or any(i < 0 or i >= self.m for i in indices):
            raise DimensionError(f"setting indices {indices} out of range for {self.m} settings")
        return MeasurementSet(self.operators[indices], self.family)

    @classmethod
    def from_settings(cls, settings: Sequence[Sequence[np.ndarray]], family: Optional[str] = None) -> "MeasurementSet":
        return cls(np.array([[linalg.as_matrix(e) for e in s] for s in settings]), family)

    @classmethod
    def from_bases(cls, bases: Sequence[Sequence[np.ndarray]], family: Optional[str] = None) -> "MeasurementSet":
        return cls(np.array([projective_setting(b) for b in bases]), family)


def projective_setting(vectors: Sequence[np.ndarray], tol: float = BASIS_TOL) -> np.ndarray:
    """
    Rank-1 projectors |v_a><v_a| of an orthonormal basis.

    Raises MeasurementValidationError naming the worst Gram-matrix entry when the
    vectors are not orthonormal within `tol`.
    """
    basis = np.array([np.asarray(v, dtype=np.complex128).ravel() for v in vectors])
    d = basis.shape[0]
    if basis.ndim != 2 or basis.shape != (d, d):
        raise MeasurementValidationError(f"need {d} vectors of length {d}, got array of shape {basis.shape}")

    gram = basis.conj() @ basis.T
    deviation = np.abs(gram - np.eye(d))
    a, b = np.unravel_index(int(np.argmax(deviation)), deviation.shape)
    if deviation[a, b] > tol:
        raise MeasurementValidationError(
            f"basis is not orthonormal: Gram entry ({a + 1},{b + 1}) = {complex(gram[a, b]):.6g}"
        )
    return np.einsum("ai,aj->aij", basis, basis.conj())


def _ket(d: int, **amplitudes: complex) -> np.ndarray:
    v = np.zeros(d, dtype=np.complex128)
    for level, amp in amplitudes.items():
        v[int(level[1:])] = amp
    return v / np.linalg.norm(v)


def _fourier_triple(levels: Sequence[int], d: int) -> List[np.ndarray]:
    """The three-outcome Fourier kets on `levels`, in the order used by the lab settings"""
    c_minus = (-np.sqrt(3) - 3j) / 6
    c_plus = (-np.sqrt(3) + 3j) / 6
    i, j, k = (f"l{n}" for n in levels)
    s3 = 1 / np.sqrt(3)
    return [
        _ket(d, **{i: s3, j: c_minus, k: c_plus}),
        _ket(d, **{i: s3, j: c_plus, k: c_minus}),
        _ket(d, **{i: s3, j: s3, k: s3}),
    ]


def _unf_bases() -> List[List[np.ndarray]]:
    d = 4
    f = _fourier_triple((0, 1, 2), d)
    r2 = 1 / np.sqrt(2)
    return [
        [f[0], f[1], f[2], _ket(d, l3=1)],
        [_ket(d, l2=1), _ket(d, l1=1), _ket(d, l3=1), _ket(d, l0=1)],
        [
            _ket(d, l3=r2, l2=-1j * r2),
            _ket(d, l1=r2, l0=1j * r2),
            _ket(d, l3=r2, l2=1j * r2),
            _ket(d, l1=r2, l0=-1j * r2),
        ],
    ]


def _iso2_bases() -> List[List[np.ndarray]]:
    d = 4
    r2 = 1 / np.sqrt(2)
    return [
        [_ket(d, l0=-r2, l1=r2), _ket(d, l3=1), _ket(d, l2=1), _ket(d, l0=r2, l1=r2)],
        [_ket(d, l3=1), _ket(d, l2=1), _ket(d, l0=-1j * r2, l1=r2), _ket(d, l0=1j * r2, l1=r2)],
        [_ket(d, l3=1), _ket(d, l2=1), _ket(d, l1=1), _ket(d, l0=1)],
    ]


def _psi4_bases() -> List[List[np.ndarray]]:
    d = 4
    first = _fourier_triple((1, 2, 3), d)
    second = _fourier_triple((0, 2, 3), d)
    return [
        [_ket(d, l0=1), first[0], first[1], first[2]],
        [second[0], _ket(d, l1=1), second[1], second[2]],
    ]


def gell_mann_bases(d: int) -> List[List[np.ndarray]]:
    """
    Eigenbases of the generalized Gell-Mann generators of su(d), grouped into d(d-1)+1 bases.

    The diagonal generators share the computational basis. Each symmetric generator
    |j><k| + |k><j| contributes [(|j>+|k>)/sqrt2, (|j>-|k>)/sqrt2, remaining |l> ascending],
    each antisymmetric one -i|j><k| + i|k><j| contributes the same with +-i|k>.
    """
    if d < 2:
        raise DimensionError(f"local dimension must be >= 2, got {d}")
    eye = np.eye(d, dtype=np.complex128)
    r2 = 1 / np.sqrt(2)
    bases = [[eye[a] for a in range(d)]]
    for phase in (1.0, 1j):
        for j in range(d):
            for k in range(j + 1, d):
                rest = [eye[l] for l in range(d) if l not in (j, k)]
                bases.append([r2 * (eye[j] + phase * eye[k]), r2 * (eye[j] - phase * eye[k])] + rest)
    return bases


def gell_mann_settings(d: int = 4) -> MeasurementSet:
    return MeasurementSet.from_bases(gell_mann_bases(d), SettingFamily.GELL_MANN.value)


_APPENDIX_BASES = {
    SettingFamily.UNF: _unf_bases,
    SettingFamily.ISO2: _iso2_bases,
    SettingFamily.PSI4: _psi4_bases,
}


def appendix_settings(family: Union[SettingFamily, str]) -> MeasurementSet:
    """The lab settings used for the UNF, ISO2 and PSI4 protocols (all in C^4)"""
    family = SettingFamily(family)
    if family == SettingFamily.GELL_MANN:
        return gell_mann_settings(4)
    return MeasurementSet.from_bases(_APPENDIX_BASES[family](), family.value)


def settings_for(family: Union[SettingFamily, str], d: int = 4) -> MeasurementSet:
    """Named family lookup used by the CLI and the benchmark"""
    family = SettingFamily(family)
    if family == SettingFamily.GELL_MANN:
        return gell_mann_settings(d)
    if d != 4:
        raise DimensionError(f"setting family '{family.value}' is defined for d = 4 only, got d = {d}")
    return appendix_settings(family)


def born_probabilities(rho, meas: MeasurementSet) -> np.ndarray:
    """P(a,b|x,y) = tr[(N_{a|x} (x) N_{b|y}) rho], indexed [x, y, a, b]"""
    d = meas.local_dim
    matrix = linalg.as_matrix(getattr(rho, "matrix", rho))
    if matrix.shape != (d * d, d * d):
        raise DimensionError(f"state of shape {matrix.shape} does not match local dimension {d}")
    ops = meas.operators
    return np.einsum("xaij,ybkl,jlik->xyab", ops, ops, matrix.reshape(d, d, d, d)).real
