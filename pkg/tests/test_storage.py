"""
Tests for documents, repositories and the bundled protocol tables
"""
import csv
import json

import numpy as np
import pytest
from pydantic import ValidationError

from entdim.exceptions import DocumentError
from entdim.services.bench import BenchRecord
from entdim.services.certify import sample_record
from entdim.services.measurements import gell_mann_settings
from entdim.services.sdp import effective_povm, synthesize
from entdim.services.states import max_entangled, rho_iso2
from entdim.storage.models import (
    CertificateDocument,
    ExperimentRecordDocument,
    StateDocument,
    TargetDescriptor,
    TargetFamily,
)
from entdim.storage.repo import (
    FIXTURE_TABLES,
    BenchCsvWriter,
    DocumentRepository,
    FixtureRepository,
    certificate_from_document,
    certificate_to_document,
    record_from_document,
    record_to_document,
    state_from_document,
    state_to_document,
)


@pytest.fixture(scope="module")
def qubit_document():
    meas = gell_mann_settings(2)
    target = max_entangled(2).density()
    cert = synthesize(target, meas, 1).certificate
    descriptor = TargetDescriptor(family=TargetFamily.MAX_ENTANGLED, dim=2)
    return certificate_to_document(cert, descriptor, target, meas), cert


class TestDocumentRepository:
    """Test JSON document storage"""

    def test_state_round_trip(self, tmp_path):
        repo = DocumentRepository(str(tmp_path))
        rho = rho_iso2(0.3)
        repo.save(state_to_document(rho), "state.json")
        loaded = state_from_document(repo.load("state.json", StateDocument))
        assert np.allclose(loaded.matrix, rho.matrix, atol=0)
        assert loaded.dims == (4, 4)

    def test_schema_version_written(self, tmp_path):
        path = DocumentRepository().save(state_to_document(rho_iso2(0.1)), tmp_path / "s.json")
        assert json.loads(path.read_text())["schema_version"] == 1

    def test_field_path_on_bad_document(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"dims": ["x", 4], "matrix": []}))
        with pytest.raises(DocumentError) as exc:
            DocumentRepository(str(tmp_path)).load("bad.json", StateDocument)
        assert exc.value.field == "dims.0"

    def test_invalid_json(self, tmp_path):
        (tmp_path / "broken.json").write_text("{not json")
        with pytest.raises(DocumentError):
            DocumentRepository(str(tmp_path)).load("broken.json", StateDocument)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DocumentError):
            DocumentRepository(str(tmp_path)).load("absent.json", StateDocument)


class TestCertificateDocument:
    """Test certificate serialization"""

    def test_round_trip_keeps_errors(self, qubit_document):
        doc, cert = qubit_document
        reread = CertificateDocument.model_validate_json(doc.model_dump_json())
        stored = certificate_from_document(reread)
        assert stored.certificate.p1 == cert.p1
        assert stored.certificate.p2 == cert.p2
        assert np.allclose(stored.certificate.m_c, cert.m_c, atol=1e-12)
        assert stored.target.label == "max_entangled_2"

    def test_policy_rows_are_one_based(self, qubit_document):
        doc, _ = qubit_document
        assert min(min(x, y, a, b) for x, y, _, a, b, _ in doc.policy) >= 1
        assert {row[2] for row in doc.policy} <= {"C", "U"}

    def test_rejects_bad_rows(self, qubit_document):
        doc, _ = qubit_document
        data = json.loads(doc.model_dump_json())
        data["policy"][0][2] = "X"
        with pytest.raises(ValidationError):
            CertificateDocument.model_validate(data)
        data["policy"][0][2] = "C"
        data["policy"][0][0] = 0
        with pytest.raises(ValidationError):
            CertificateDocument.model_validate(data)

    def test_target_needs_parameter(self):
        with pytest.raises(ValidationError):
            TargetDescriptor(family=TargetFamily.UNF)


class TestRecordDocument:
    """Test experiment record serialization"""

    def test_round_trip_with_unmeasured_pairs(self):
        meas = gell_mann_settings(2)
        record = sample_record(max_entangled(2).density(), meas, 100, seed=2, pairs=[(0, 0), (1, 1)])
        doc = record_to_document(record)
        assert doc.counts[0][1] is None
        back = record_from_document(ExperimentRecordDocument.model_validate_json(doc.model_dump_json()))
        assert np.array_equal(back.counts, record.counts)
        assert np.array_equal(back.measured, record.measured)

    def test_wrong_totals(self):
        doc = ExperimentRecordDocument(dims=2, settings=1, rounds_per_pair=10, counts=[[[[1, 2], [3, 0]]]])
        with pytest.raises(DocumentError):
            record_from_document(doc)


class TestFixtures:
    """Test the bundled protocol tables"""

    @pytest.mark.parametrize("name", sorted(FIXTURE_TABLES))
    def test_table_loads_into_valid_policy(self, name):
        policy, meas = FixtureRepository().load_table(name)
        assert policy.is_valid(1e-9)
        m_c, m_u = effective_povm(policy, meas)
        eigenvalues = np.linalg.eigvalsh(m_c)
        assert eigenvalues.min() >= -1e-9
        assert eigenvalues.max() <= 1 + 1e-6
        assert np.allclose(m_c + m_u, np.eye(16), atol=1e-9)

    def test_entries_are_zero_based(self):
        entries = FixtureRepository().load_entries("unf_040")
        assert entries[0] == (0, 0, 0, 1, 0.459)
        assert len(entries) == 26

    def test_unknown_table(self):
        with pytest.raises(DocumentError):
            FixtureRepository().table("missing")


class TestBenchCsvWriter:
    """Test benchmark CSV output"""

    def test_write_and_read(self, tmp_path):
        records = [
            BenchRecord(0, 0, "unf", 0.125, 40, 1.5, "optimal"),
            BenchRecord(0, 1, "unf", None, None, 0.2, "failed"),
        ]
        writer = BenchCsvWriter(tmp_path / "out" / "bench.csv")
        writer.write(records)
        with open(tmp_path / "out" / "bench.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert list(rows[0]) == list(BenchCsvWriter.COLUMNS)
        assert rows[0]["robustness"] == "0.125"
        assert rows[1]["status"] == "failed"
        assert rows[1]["robustness"] == ""
