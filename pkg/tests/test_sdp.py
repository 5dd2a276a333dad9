"""
Tests for protocol synthesis, extraction and witness checks
"""
import numpy as np
import pytest

from entdim.exceptions import AssemblyError, DomainError, ExtractionError
from entdim.services import sdp
from entdim.services.measurements import appendix_settings, gell_mann_settings
from entdim.services.sdp import (
    LoccPolicy,
    assemble_program,
    assemble_witness_program,
    complete_policy,
    effective_povm,
    minimal_type_one_error,
    randomized_witness_oracle,
    synthesize,
    verify_witness,
)
from entdim.services.solver import PSD, RawSolution, SolverOptions
from entdim.services.states import max_entangled, product_state, rho_iso2, rho_unf
from entdim.storage.models import SolverStatus, WitnessStatus

# (family, p, D, published robustness)
RESULTS_TABLE = [
    ("unf", 0.0, 2, 0.167),
    ("unf", 0.2, 2, 0.112),
    ("unf", 0.4, 2, 0.070),
    ("unf", 0.6, 2, 0.040),
    ("unf", 0.8, 2, 0.018),
    ("unf", 1.0, 2, 0.0),
    ("iso2", 0.5, 1, 0.146),
    ("iso2", 0.6, 1, 0.108),
    ("iso2", 0.7, 1, 0.071),
    ("iso2", 0.8, 1, 0.033),
    ("iso2", 0.9, 1, 0.0),
    ("iso2", 1.0, 1, 0.0),
]


def _target(family, p):
    return rho_unf(p) if family == "unf" else rho_iso2(p)


def _feasible_point(prog, policy, p1, p2):
    """Variable vector with the given policy, zero witness matrices and lambda = 0"""
    x = np.zeros(prog.n_variables)
    for name, value in (
        ("p_c", policy.table_c),
        ("p_u", policy.table_u),
        ("q", policy.marginal_q),
        ("r", policy.marginal_r),
        ("p1", p1),
        ("p2", p2),
    ):
        blk = prog.block(name)
        x[blk.offset:blk.stop] = np.ravel(value)
    return x


@pytest.fixture(scope="module")
def qubit_synthesis():
    """Psi_2 with the three Pauli bases, D = 1"""
    meas = gell_mann_settings(2)
    target = max_entangled(2).density()
    return synthesize(target, meas, 1, SolverOptions(solver="auto")), target, meas


class TestLoccPolicy:
    """Test the policy container"""

    def test_always_u_is_valid(self):
        policy = LoccPolicy.always_u(3, 4)
        assert policy.is_valid()
        m_c, m_u = effective_povm(policy, appendix_settings("unf"))
        assert np.allclose(m_c, 0)
        assert np.allclose(m_u, np.eye(16))

    def test_always_c_gives_identity(self):
        meas = appendix_settings("iso2")
        base = LoccPolicy.always_u(3, 4)
        policy = LoccPolicy(3, 4, base.table_u, base.table_c, base.marginal_q, base.marginal_r)
        m_c, _ = effective_povm(policy, meas)
        assert np.allclose(m_c, np.eye(16))

    def test_violations(self):
        policy = LoccPolicy.always_u(2, 2)
        policy.table_u[0, 0, 0, 0] = 0.5
        found = policy.violations()
        assert any("P(x,y|a)" in f for f in found)
        with pytest.raises(ExtractionError):
            policy.validate()

    def test_entries_and_back(self):
        policy = complete_policy([(0, 0, 0, 0, 0.3), (1, 1, 2, 3, 0.2)], 3, 4)
        rows = policy.entries(1e-12)
        rebuilt = LoccPolicy.from_entries(rows, 3, 4)
        assert np.allclose(rebuilt.table_c, policy.table_c)
        assert np.allclose(rebuilt.marginal_r, policy.marginal_r)
        assert all(v > 1e-12 for *_, v in rows)


class TestCompletePolicy:
    """Test U-completion of C-only tables"""

    def test_valid_and_c_preserved(self):
        entries = [(0, 0, 0, 1, 0.2), (0, 1, 1, 1, 0.1), (2, 2, 3, 3, 0.05)]
        policy = complete_policy(entries, 3, 4)
        assert policy.is_valid(1e-12)
        assert policy.table_c[0, 0, 0, 1] == pytest.approx(0.2)
        assert policy.marginal_r.sum() == pytest.approx(1.0)

    def test_rescales_oversized_tables(self):
        entries = [(0, 0, a, a, 0.6) for a in range(2)] + [(1, 1, a, a, 0.6) for a in range(2)]
        policy = complete_policy(entries, 2, 2)
        assert policy.is_valid(1e-12)
        assert policy.table_c[0, 0, 0, 0] == pytest.approx(0.5)

    def test_effective_povm_is_complete(self):
        meas = appendix_settings("unf")
        policy = complete_policy([(0, 1, 2, 0, 0.25), (2, 0, 1, 3, 0.4)], 3, 4)
        m_c, m_u = effective_povm(policy, meas)
        assert np.allclose(m_c + m_u, np.eye(16), atol=1e-12)
        assert np.linalg.eigvalsh(m_c).min() > -1e-12


class TestAssembly:
    """Test program assembly without solving"""

    def test_block_layout(self):
        prog = assemble_program(rho_unf(0.2), appendix_settings("unf"), 2)
        assert prog.block("p_c").size == 3 * 3 * 4 * 4
        assert prog.psd_sides() == [128, 128]
        assert [b.name for b in prog.blocks if b.kind == PSD] == ["lambda1", "lambda2"]
        assert prog.meta["D"] == 2

    def test_trivial_protocols_are_feasible(self):
        meas = appendix_settings("iso2")
        prog = assemble_program(rho_iso2(0.5), meas, 1)
        always_u = LoccPolicy.always_u(3, 4)
        assert prog.residual(_feasible_point(prog, always_u, 0.0, 1.0)) < 1e-12
        always_c = LoccPolicy(3, 4, always_u.table_u, always_u.table_c, always_u.marginal_q, always_u.marginal_r)
        assert prog.residual(_feasible_point(prog, always_c, 1.0, 0.0)) < 1e-12

    def test_rejects_vacuous_dimension(self):
        with pytest.raises(DomainError):
            assemble_program(rho_unf(0.2), appendix_settings("unf"), 4)
        with pytest.raises(DomainError):
            assemble_program(rho_unf(0.2), appendix_settings("unf"), 0)

    def test_rejects_higher_levels(self):
        with pytest.raises(AssemblyError):
            assemble_program(rho_unf(0.2), appendix_settings("unf"), 1, level=2)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(AssemblyError):
            assemble_program(max_entangled(2).density(), appendix_settings("unf"), 1)

    def test_witness_program_shapes(self):
        m_c = np.eye(16) / 2
        fixed = assemble_witness_program(m_c, 4, 1, p1=0.5)
        free = assemble_witness_program(m_c, 4, 1)
        assert "p1" not in [b.name for b in fixed.blocks]
        assert free.c[free.block("p1").offset] == 1.0
        assert fixed.n_constraints == free.n_constraints


class TestQubitSynthesis:
    """Test assemble -> solve -> extract on a small instance"""

    def test_certifies_entanglement(self, qubit_synthesis):
        result, _, _ = qubit_synthesis
        assert result.status.solved
        cert = result.certificate
        # the correlation protocol over Z, X, Y already reaches 1/3
        assert cert.robustness > 1 / 3 - 1e-5
        assert cert.robustness <= 1.0

    def test_certificate_identities(self, qubit_synthesis):
        result, target, _ = qubit_synthesis
        cert = result.certificate
        assert np.allclose(cert.m_c + cert.m_u, np.eye(4), atol=1e-7)
        assert cert.p2 == pytest.approx(float(np.trace(cert.m_u @ target.matrix).real), abs=1e-9)
        assert cert.policy.is_valid(1e-6)
        assert cert.witness_residual <= 1e-6
        assert cert.violations() == []

    def test_witness_verifies(self, qubit_synthesis):
        cert = qubit_synthesis[0].certificate
        report = verify_witness(cert.m_c, cert.p1 + 1e-6, 2, 1)
        assert report.status == WitnessStatus.FEASIBLE
        assert report.residual <= 1e-6

    def test_witness_rejects_smaller_bound(self, qubit_synthesis):
        cert = qubit_synthesis[0].certificate
        report = verify_witness(cert.m_c, cert.p1 - 0.05, 2, 1)
        assert report.status != WitnessStatus.FEASIBLE

    def test_minimal_type_one_error(self, qubit_synthesis):
        cert = qubit_synthesis[0].certificate
        assert minimal_type_one_error(cert.m_c, 2, 1) <= cert.p1 + 1e-5

    def test_non_psd_witness_block_is_not_feasible(self, monkeypatch):
        m_c = np.eye(4) / 2
        prog = assemble_witness_program(m_c, 2, 1, p1=0.5)
        x = np.zeros(prog.n_variables)
        blk = prog.block("lambda1")
        side = blk.shape[0]
        x[blk.offset:blk.stop] = -np.eye(side).ravel(order="F")
        monkeypatch.setattr(sdp, "solve", lambda prog, options=None: RawSolution(SolverStatus.OPTIMAL, x))
        monkeypatch.setattr(sdp, "_witness_residual", lambda *args: 0.0)
        report = verify_witness(m_c, 0.5, 2, 1)
        assert report.status == WitnessStatus.INDETERMINATE
        assert report.min_eigenvalue == pytest.approx(-1.0)
        assert "eigenvalue" in report.message

    def test_witness_reports_min_eigenvalue(self, qubit_synthesis):
        cert = qubit_synthesis[0].certificate
        report = verify_witness(cert.m_c, cert.p1 + 1e-6, 2, 1)
        assert report.min_eigenvalue >= -1e-6

    def test_oracle(self, qubit_synthesis):
        cert = qubit_synthesis[0].certificate
        result = randomized_witness_oracle(cert.m_c, cert.p1, 1, n_samples=500, seed=0)
        assert result.passed
        assert result.samples == 500

    def test_product_state_is_not_certified(self):
        target = product_state(2, seed=4).density()
        result = synthesize(target, gell_mann_settings(2), 1)
        assert result.status.solved
        assert result.certificate.robustness < 1e-5


@pytest.mark.slow
class TestResultsTable:
    """Test the published robustness values"""

    @pytest.mark.parametrize("family,p,D,expected", RESULTS_TABLE)
    def test_robustness(self, family, p, D, expected):
        result = synthesize(_target(family, p), appendix_settings(family), D)
        assert result.status == SolverStatus.OPTIMAL
        assert result.solution.solver == "CLARABEL"
        cert = result.certificate
        assert abs(cert.duality_gap) <= 1e-7
        assert cert.robustness == pytest.approx(expected, abs=0.005)
        assert cert.witness_residual <= 1e-6

    def test_certificate_soundness(self):
        result = synthesize(rho_unf(0.4), appendix_settings("unf"), 2)
        cert = result.certificate
        assert verify_witness(cert.m_c, cert.p1 + 1e-6, 4, 2).feasible
        assert randomized_witness_oracle(cert.m_c, cert.p1, 2, n_samples=2000, seed=1).passed


@pytest.fixture(scope="module")
def unf_full_robustness():
    return synthesize(rho_unf(0.2), appendix_settings("unf"), 2).certificate.robustness


@pytest.mark.slow
class TestMonotonicity:
    """Test the objective under fewer settings and larger D"""

    @pytest.mark.parametrize("kept", [[0, 1], [0, 2], [1, 2], [0], [1], [2]])
    def test_removing_settings(self, unf_full_robustness, kept):
        target, meas = rho_unf(0.2), appendix_settings("unf")
        fewer = synthesize(target, meas.subset(kept), 2).certificate
        assert fewer.robustness <= unf_full_robustness + 1e-6

    def test_increasing_dimension(self):
        target, meas = rho_unf(0.2), appendix_settings("unf")
        d1 = synthesize(target, meas, 1).certificate
        d2 = synthesize(target, meas, 2).certificate
        d3 = synthesize(target, meas, 3).certificate
        assert d2.robustness <= d1.robustness + 1e-6
        assert d3.robustness <= d2.robustness + 1e-6


@pytest.mark.slow
class TestPsi4:
    """Test Psi_4 with the two PSI4 settings at D = 3"""

    @pytest.fixture(scope="class")
    def psi4(self):
        target = max_entangled(4).density()
        meas = appendix_settings("psi4")
        return synthesize(target, meas, 3), target, meas

    def test_certificate_is_sound(self, psi4):
        result, target, _ = psi4
        assert result.status == SolverStatus.OPTIMAL
        cert = result.certificate
        assert np.allclose(cert.m_c + cert.m_u, np.eye(16), atol=1e-7)
        assert cert.p2 == pytest.approx(float(np.trace(cert.m_u @ target.matrix).real), abs=1e-9)
        report = verify_witness(cert.m_c, cert.p1 + 1e-6, 4, 3)
        assert report.feasible
        assert report.residual <= 1e-6
        assert randomized_witness_oracle(cert.m_c, cert.p1, 3, n_samples=2000, seed=2).passed

    def test_robustness_is_positive(self, psi4):
        # the published 0.084 bounds the two-setting value from above
        cert = psi4[0].certificate
        assert 0.0 < cert.robustness <= 0.084 + 0.01
