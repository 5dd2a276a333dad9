"""
Tests for p-values, experimental type-II errors and round simulation
"""
import math
from fractions import Fraction

import numpy as np
import pytest

from entdim.exceptions import DimensionError, DomainError, IncompleteDataError, SimulationError
from entdim.services.certify import (
    ExperimentRecord,
    alice_marginals,
    born_record,
    certification_outcome,
    certify_record,
    expected_pvalue_bound,
    log_p_value,
    p2_exp,
    p_value,
    sample_record,
    simulate_certificate,
    simulate_rounds,
)
from entdim.services.measurements import appendix_settings, born_probabilities, gell_mann_settings
from entdim.services.sdp import LoccPolicy, complete_policy, effective_povm, synthesize
from entdim.services.states import max_entangled, product_state, rho_iso2, rho_unf


def exact_tail(v, n, p1):
    """sum_{k>=v} C(n,k) p1^k (1-p1)^(n-k) in exact rational arithmetic"""
    p = Fraction(p1)
    return sum(math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(v, n + 1))


@pytest.fixture(scope="module")
def qubit_certificate():
    meas = gell_mann_settings(2)
    target = max_entangled(2).density()
    return synthesize(target, meas, 1).certificate, target, meas


class TestPValue:
    """Test the binomial tail"""

    @pytest.mark.parametrize("n", [1, 7, 20, 50])
    @pytest.mark.parametrize("p1", [0.1, 0.5, 0.833])
    def test_matches_exact_oracle(self, n, p1):
        for v in range(0, n + 1, max(1, n // 7)):
            exact = float(exact_tail(v, n, p1))
            assert p_value(v, n, p1) == pytest.approx(exact, rel=1e-12, abs=1e-300)

    def test_edge_cases(self):
        assert p_value(0, 10, 0.3) == 1.0
        assert p_value(10, 10, 0.3) == 0.3**10
        assert p_value(0, 0, 0.3) == 1.0
        assert p_value(3, 10, 0.0) == 0.0
        assert p_value(3, 10, 1.0) == 1.0

    def test_monotone_in_v(self):
        values = [p_value(v, 30, 0.4) for v in range(31)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_monotone_in_p1(self):
        grid = np.linspace(0.0, 1.0, 41)
        for v in (1, 7, 15, 30):
            values = [p_value(v, 30, p) for p in grid]
            assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))

    def test_domain(self):
        with pytest.raises(DomainError):
            p_value(5, 4, 0.5)
        with pytest.raises(DomainError):
            p_value(1, 4, 1.5)
        with pytest.raises(DomainError):
            p_value(-1, 4, 0.5)

    def test_log_p_value(self):
        assert log_p_value(12, 40, 0.2) == pytest.approx(math.log(p_value(12, 40, 0.2)), rel=1e-10)
        # far tail where the p-value itself underflows
        assert log_p_value(10_000, 10_000, 0.5) == pytest.approx(10_000 * math.log(0.5), rel=1e-12)
        assert log_p_value(0, 10, 0.5) == 0.0


class TestExpectedBound:
    """Test the bound on the mean p-value"""

    def test_single_round(self):
        assert expected_pvalue_bound(0.5, 0.333, 1) == pytest.approx(0.972111, abs=1e-6)

    def test_decays(self):
        assert expected_pvalue_bound(0.4, 0.2, 100) < expected_pvalue_bound(0.4, 0.2, 10)

    def test_vacuous(self):
        with pytest.raises(DomainError):
            expected_pvalue_bound(0.7, 0.5, 3)


class TestCertificationOutcome:
    """Test the certified verdict"""

    def test_threshold(self):
        assert certification_outcome(90, 100, 0.5, 0.01).certified
        assert not certification_outcome(55, 100, 0.5, 0.01).certified

    def test_frequency(self):
        outcome = certification_outcome(3, 12, 0.2)
        assert outcome.frequency == pytest.approx(0.25)
        assert certification_outcome(0, 0, 0.2).frequency == 0.0


class TestExperimentRecord:
    """Test records and the experimental type-II error"""

    def test_exact_record_reproduces_p2(self):
        meas = appendix_settings("unf")
        rho = rho_unf(0.4)
        policy = complete_policy([(0, 0, 0, 1, 0.2), (1, 2, 3, 0, 0.1)], 3, 4)
        _, m_u = effective_povm(policy, meas)
        expected = float(np.trace(m_u @ rho.matrix).real)
        assert p2_exp(born_record(rho, meas), policy) == pytest.approx(expected, abs=1e-12)

    def test_missing_pairs(self):
        meas = appendix_settings("iso2")
        policy = complete_policy([(0, 1, 0, 0, 0.3)], 3, 4)
        record = sample_record(rho_iso2(0.5), meas, 50, seed=1, pairs=[(0, 0)])
        with pytest.raises(IncompleteDataError) as exc:
            p2_exp(record, policy)
        assert (0, 1) in exc.value.missing
        assert "(1,2)" in str(exc.value)

    def test_dimension_mismatch(self):
        record = born_record(rho_iso2(0.5), appendix_settings("iso2"))
        with pytest.raises(DimensionError):
            p2_exp(record, LoccPolicy.always_u(2, 4))

    def test_sampled_counts(self):
        record = sample_record(rho_iso2(0.3), appendix_settings("iso2"), 200, seed=5)
        assert record.counts.sum(axis=(2, 3)).tolist() == [[200] * 3] * 3
        assert np.allclose(record.estimated_probs.sum(axis=(2, 3)), 1.0)

    def test_from_counts_checks_totals(self):
        counts = np.zeros((1, 1, 2, 2), dtype=int)
        counts[0, 0, 0, 0] = 5
        with pytest.raises(DomainError):
            ExperimentRecord.from_counts(counts, 6)

    def test_certify_record(self, qubit_certificate):
        cert, target, meas = qubit_certificate
        verdict = certify_record(born_record(target, meas), cert)
        assert verdict.p2_exp == pytest.approx(cert.p2, abs=1e-9)
        assert verdict.certified
        assert verdict.robustness == pytest.approx(cert.robustness, abs=1e-9)


class TestSimulation:
    """Test round-by-round simulation of a protocol"""

    def test_alice_marginals_match_joint(self):
        meas = appendix_settings("unf")
        rho = rho_unf(0.3)
        probs = born_probabilities(rho, meas)
        pa = alice_marginals(rho, meas)
        for y in range(meas.m):
            assert np.allclose(probs[:, y].sum(axis=2), pa, atol=1e-12)
        assert np.allclose(pa.sum(axis=1), 1.0)
        assert np.allclose(alice_marginals(rho.matrix, meas), pa, atol=1e-14)

    def test_concentrates_on_target(self, qubit_certificate):
        cert, target, meas = qubit_certificate
        n = 100_000
        outcome = simulate_certificate(target, meas, cert, n, seed=11)
        mean = 1 - cert.p2
        sigma = math.sqrt(max(mean * (1 - mean), 1e-12) / n)
        assert abs(outcome.frequency - mean) <= 4 * sigma + 1e-9
        assert outcome.certified

    def test_product_state_stays_below_p1(self, qubit_certificate):
        cert, _, meas = qubit_certificate
        n = 100_000
        outcome = simulate_rounds(product_state(2, seed=2).density(), meas, cert.policy, n, seed=3, p1=cert.p1)
        sigma = math.sqrt(cert.p1 * (1 - cert.p1) / n)
        assert outcome.frequency <= cert.p1 + 4 * sigma

    def test_deterministic(self, qubit_certificate):
        cert, target, meas = qubit_certificate
        a = simulate_certificate(target, meas, cert, 5000, seed=9)
        b = simulate_certificate(target, meas, cert, 5000, seed=9)
        assert a.c_count == b.c_count

    def test_always_u_never_accepts(self):
        meas = appendix_settings("iso2")
        outcome = simulate_rounds(rho_iso2(0.2), meas, LoccPolicy.always_u(3, 4), 1000, seed=0)
        assert outcome.c_count == 0
        assert outcome.p_value == 1.0

    def test_rejects_unnormalized_policy(self):
        policy = LoccPolicy.always_u(3, 4)
        policy.marginal_r[0] = 0.5
        with pytest.raises(SimulationError):
            simulate_rounds(rho_iso2(0.2), appendix_settings("iso2"), policy, 10, seed=0)

    def test_zero_rounds(self):
        outcome = simulate_rounds(rho_iso2(0.2), appendix_settings("iso2"), LoccPolicy.always_u(3, 4), 0)
        assert outcome.rounds == 0
        assert outcome.p_value == 1.0


@pytest.mark.slow
class TestIsotropicSimulation:
    """Test concentration on a solved two-qudit protocol"""

    def test_target_and_product_state(self):
        meas = appendix_settings("iso2")
        target = rho_iso2(0.5)
        cert = synthesize(target, meas, 1).certificate
        n = 100_000
        on_target = simulate_certificate(target, meas, cert, n, seed=21)
        mean = 1 - cert.p2
        assert abs(on_target.frequency - mean) <= 4 * math.sqrt(mean * (1 - mean) / n) + 1e-9
        product = simulate_rounds(product_state(4, seed=4).density(), meas, cert.policy, n, seed=22)
        assert product.frequency <= cert.p1 + 4 * math.sqrt(cert.p1 * (1 - cert.p1) / n)
