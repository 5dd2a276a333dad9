"""
Repository layer for file storage
"""
import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Type, TypeVar

import numpy as np
import structlog
from pydantic import BaseModel, ValidationError

from entdim.exceptions import DocumentError
from entdim.services.certify import ExperimentRecord
from entdim.services.measurements import MeasurementSet, settings_for
from entdim.services.sdp import LoccPolicy, ProtocolCertificate, complete_policy, effective_povm
from entdim.services.states import DensityMatrix, state_from_matrix
from entdim.storage.models import (
    CertificateDocument,
    ExperimentRecordDocument,
    MeasurementSetDocument,
    SettingFamily,
    SolverDiagnostics,
    SolverStatus,
    StateDocument,
    TargetDescriptor,
    TargetFamily,
    matrix_to_rows,
    rows_to_matrix,
)

logger = structlog.get_logger(__name__)

DocumentT = TypeVar("DocumentT", bound=BaseModel)

FIXTURE_DIRECTORY = Path(__file__).parent / "fixtures"


def _field_path(error: ValidationError) -> Optional[str]:
    errors = error.errors()
    if not errors:
        return None
    loc = errors[0].get("loc", ())
    return ".".join(str(part) for part in loc) or None


class DocumentRepository:
    """Save and load JSON documents with schema validation"""

    def __init__(self, root: Optional[str] = None):
        self.root = Path(root) if root else None

    def _path(self, path) -> Path:
        path = Path(path)
        if self.root is not None and not path.is_absolute():
            path = self.root / path
        return path

    def save(self, document: BaseModel, path) -> Path:
        """Write a document as indented JSON, creating parent directories"""
        target = self._path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(document.model_dump_json(indent=2))
        logger.info("document_saved", kind=type(document).__name__, path=str(target))
        return target

    def load(self, path, model: Type[DocumentT]) -> DocumentT:
        """Read and validate a document; any failure raises DocumentError"""
        source = self._path(path)
        try:
            raw = source.read_text()
        except OSError as e:
            raise DocumentError(f"cannot read {source}: {e.strerror or e}") from e
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise DocumentError(f"{source} is not valid JSON: {e.msg} (line {e.lineno})") from e
        try:
            return model.model_validate(data)
        except ValidationError as e:
            field = _field_path(e)
            detail = e.errors()[0]["msg"] if e.errors() else str(e)
            raise DocumentError(f"{source}: {detail}", field=field) from e


# ---------------------------------------------------------------------------
# Domain <-> document conversion
# ---------------------------------------------------------------------------


def state_to_document(rho: DensityMatrix) -> StateDocument:
    return StateDocument.from_array(rho.matrix, rho.dims)


def state_from_document(doc: StateDocument) -> DensityMatrix:
    return state_from_matrix(doc.to_array(), doc.dims)


def measurements_to_document(meas: MeasurementSet) -> MeasurementSetDocument:
    return MeasurementSetDocument.from_array(meas.operators, meas.family)


def measurements_from_document(doc: MeasurementSetDocument) -> MeasurementSet:
    return MeasurementSet(doc.to_array(), doc.family)


def certificate_to_document(
    certificate: ProtocolCertificate,
    target: TargetDescriptor,
    rho: DensityMatrix,
    meas: MeasurementSet,
    threshold: float = 0.0,
    include_witness: bool = True,
) -> CertificateDocument:
    """Sparse 1-based policy rows; witness matrices are optional"""
    rows = [(x + 1, y + 1, c, a + 1, b + 1, v) for x, y, c, a, b, v in certificate.policy.entries(threshold)]
    return CertificateDocument(
        target=target,
        state=state_to_document(rho),
        measurements=measurements_to_document(meas),
        d=certificate.d,
        m=certificate.m,
        D=certificate.D,
        p1=certificate.p1,
        p2=certificate.p2,
        robustness=certificate.robustness,
        lambda_scalar=certificate.lambda_scalar,
        witness_residual=certificate.witness_residual,
        cleaned=certificate.cleaned,
        policy=rows,
        lambda1=matrix_to_rows(certificate.lambda1) if include_witness and certificate.lambda1 is not None else None,
        lambda2=matrix_to_rows(certificate.lambda2) if include_witness and certificate.lambda2 is not None else None,
        solver=SolverDiagnostics(
            status=certificate.solver_status.value,
            solver=certificate.solver,
            duality_gap=certificate.duality_gap,
            lower_bound=certificate.lower_bound,
            upper_bound=certificate.upper_bound,
            solve_time_s=certificate.solve_time,
        ),
    )


@dataclass(eq=False)
class StoredCertificate:
    """A certificate read back from disk together with the state and settings it was solved for"""
    certificate: ProtocolCertificate
    state: DensityMatrix
    measurements: MeasurementSet
    target: TargetDescriptor


def certificate_from_document(doc: CertificateDocument) -> StoredCertificate:
    meas = measurements_from_document(doc.measurements)
    policy = LoccPolicy.from_entries(
        [(x - 1, y - 1, c, a - 1, b - 1, v) for x, y, c, a, b, v in doc.policy], doc.m, doc.d
    )
    m_c, m_u = effective_povm(policy, meas)
    certificate = ProtocolCertificate(
        p1=doc.p1,
        p2=doc.p2,
        policy=policy,
        m_c=m_c,
        m_u=m_u,
        lambda1=rows_to_matrix(doc.lambda1) if doc.lambda1 is not None else None,
        lambda2=rows_to_matrix(doc.lambda2) if doc.lambda2 is not None else None,
        lambda_scalar=doc.lambda_scalar,
        solver_status=SolverStatus(doc.solver.status),
        duality_gap=doc.solver.duality_gap,
        witness_residual=doc.witness_residual,
        D=doc.D,
        lower_bound=doc.solver.lower_bound,
        upper_bound=doc.solver.upper_bound,
        solver=doc.solver.solver,
        solve_time=doc.solver.solve_time_s or 0.0,
        cleaned=doc.cleaned,
    )
    return StoredCertificate(certificate, state_from_document(doc.state), meas, doc.target)


def record_to_document(record: ExperimentRecord) -> ExperimentRecordDocument:
    if record.counts is None or record.rounds_per_pair is None:
        raise DocumentError("only sampled records (with counts) can be stored", field="counts")
    counts = [
        [record.counts[x, y].tolist() if record.measured[x, y] else None for y in range(record.m)]
        for x in range(record.m)
    ]
    return ExperimentRecordDocument(
        dims=record.d, settings=record.m, rounds_per_pair=record.rounds_per_pair, counts=counts
    )


def record_from_document(doc: ExperimentRecordDocument) -> ExperimentRecord:
    m, d = doc.settings, doc.dims
    counts = np.zeros((m, m, d, d), dtype=np.int64)
    measured = np.zeros((m, m), dtype=bool)
    for x, row in enumerate(doc.counts):
        for y, table in enumerate(row):
            if table is not None:
                counts[x, y] = table
                measured[x, y] = True
    try:
        return ExperimentRecord.from_counts(counts, doc.rounds_per_pair, measured)
    except ValueError as e:
        raise DocumentError(str(e), field="counts") from e


# ---------------------------------------------------------------------------
# Published protocol tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixtureTable:
    """A published C-probability table and the instances it was solved for"""
    name: str
    filename: str
    settings: SettingFamily
    target: TargetFamily
    p_values: Tuple[float, ...]
    D: int


FIXTURE_TABLES: Dict[str, FixtureTable] = {
    t.name: t
    for t in (
        FixtureTable("unf_000", "unf_000.csv", SettingFamily.UNF, TargetFamily.UNF, (0.0,), 2),
        FixtureTable("unf_020", "unf_020.csv", SettingFamily.UNF, TargetFamily.UNF, (0.2,), 2),
        FixtureTable("unf_040", "unf_040.csv", SettingFamily.UNF, TargetFamily.UNF, (0.4, 0.6), 2),
        FixtureTable("unf_080", "unf_080.csv", SettingFamily.UNF, TargetFamily.UNF, (0.8,), 2),
        FixtureTable("unf_100", "unf_100.csv", SettingFamily.UNF, TargetFamily.UNF, (1.0,), 2),
        FixtureTable("iso2_050", "iso2_050.csv", SettingFamily.ISO2, TargetFamily.ISO2, (0.5, 0.6, 0.7, 0.8), 1),
        FixtureTable("iso2_090", "iso2_090.csv", SettingFamily.ISO2, TargetFamily.ISO2, (0.9,), 1),
    )
}


class FixtureRepository:
    """Loads the bundled protocol tables (CSV columns x,y,a,b,P, 1-based)"""

    def __init__(self, directory: Optional[str] = None):
        self.directory = Path(directory) if directory else FIXTURE_DIRECTORY

    def names(self) -> List[str]:
        return list(FIXTURE_TABLES)

    def table(self, name: str) -> FixtureTable:
        try:
            return FIXTURE_TABLES[name]
        except KeyError:
            raise DocumentError(f"unknown fixture table '{name}'", field="name") from None

    def load_entries(self, name: str) -> List[Tuple[int, int, int, int, float]]:
        """0-based (x, y, a, b, P) rows"""
        path = self.directory / self.table(name).filename
        entries = []
        with open(path, newline="") as handle:
            for line, row in enumerate(csv.DictReader(handle), start=2):
                try:
                    entries.append(
                        (int(row["x"]) - 1, int(row["y"]) - 1, int(row["a"]) - 1, int(row["b"]) - 1, float(row["P"]))
                    )
                except (KeyError, TypeError, ValueError) as e:
                    raise DocumentError(f"{path.name} line {line}: {e}", field=f"line {line}") from e
        return entries

    def load_table(self, name: str) -> Tuple[LoccPolicy, MeasurementSet]:
        """The completed policy together with the settings it is meant for"""
        table = self.table(name)
        meas = settings_for(table.settings)
        policy = complete_policy(self.load_entries(name), meas.m, meas.local_dim)
        logger.debug("fixture_loaded", name=name, entries=int(np.count_nonzero(policy.table_c)))
        return policy, meas


# ---------------------------------------------------------------------------
# Benchmark output
# ---------------------------------------------------------------------------


class BenchCsvWriter:
    """One row per benchmark state; failed states keep empty robustness and count"""

    COLUMNS = ("seed", "state_index", "robustness", "nonzero_count", "solve_time_s", "status")

    def __init__(self, path):
        self.path = Path(path)

    def write(self, records: Iterable) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=self.COLUMNS)
            writer.writeheader()
            count = 0
            for record in records:
                writer.writerow(record.csv_row())
                count += 1
        logger.info("bench_csv_written", path=str(self.path), rows=count)
        return self.path
