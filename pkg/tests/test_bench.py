"""
Tests for the random-state benchmark and its executor
"""
import numpy as np
import pytest

from entdim.exceptions import DomainError
from entdim.services.bench import (
    BenchRecord,
    compare_families,
    count_nonzero,
    mean_robustness,
    required_probabilities,
    run_benchmark,
    sample_bench_states,
    solve_state,
)
from entdim.services.measurements import appendix_settings, gell_mann_settings
from entdim.services.sdp import LoccPolicy, complete_policy, synthesize
from entdim.services.solver import SolverOptions
from entdim.services.states import product_state, rho_unf, schmidt_rank
from entdim.storage.models import SolverStatus
from entdim.workers.pool import SerialExecutor, create_executor
from entdim.workers.tasks import BenchTask, solve_bench_state


class TestCounting:
    """Test sparsity counts"""

    def test_always_u(self):
        policy = LoccPolicy.always_u(3, 4)
        assert count_nonzero(policy) == 16
        assert required_probabilities(policy) == 0

    def test_c_entries(self):
        policy = complete_policy([(0, 0, 0, 0, 0.4), (1, 2, 3, 1, 0.2)], 3, 4)
        assert required_probabilities(policy) == 2
        assert count_nonzero(policy) >= 2

    def test_threshold_must_be_positive(self):
        with pytest.raises(DomainError):
            count_nonzero(LoccPolicy.always_u(2, 2), threshold=0.0)
        with pytest.raises(DomainError):
            required_probabilities(LoccPolicy.always_u(2, 2), threshold=-1.0)


class TestSampling:
    """Test benchmark state sampling"""

    def test_schmidt_rank_two(self):
        states = sample_bench_states(5, seed=3)
        assert len(states) == 5
        assert all(schmidt_rank(s) == 2 for s in states)
        assert all(s.dims == (4, 4) for s in states)

    def test_prefix_stable(self):
        short = sample_bench_states(2, seed=10)
        long = sample_bench_states(6, seed=10)
        assert np.allclose(short[1].vector, long[1].vector)

    def test_requires_states(self):
        with pytest.raises(DomainError):
            sample_bench_states(0)


class TestExecutor:
    """Test executor selection"""

    def test_serial_by_default(self):
        assert isinstance(create_executor(1), SerialExecutor)

    def test_serial_map_preserves_order(self):
        with SerialExecutor() as executor:
            assert list(executor.map(lambda v: v * v, [3, 1, 2])) == [9, 1, 4]

    def test_serial_captures_exceptions(self):
        future = SerialExecutor().submit(lambda: 1 / 0)
        with pytest.raises(ZeroDivisionError):
            future.result()


class TestSolveState:
    """Test single-state solves and failure capture"""

    def test_solves_rank_two_state(self):
        state = sample_bench_states(1, seed=0)[0]
        record = solve_state(state, appendix_settings("unf"), 1, seed=0, state_index=0)
        assert record.ok
        assert record.status in (SolverStatus.OPTIMAL.value, SolverStatus.NEAR_OPTIMAL.value)
        assert -1e-6 <= record.robustness <= 1.0
        assert record.nonzero_count > 0
        assert record.family == "unf"

    def test_record_reverifies(self):
        state = sample_bench_states(1, seed=1)[0]
        record = solve_state(state, appendix_settings("iso2"), 1)
        cert = record.certificate
        rho = np.outer(record.state, record.state.conj())
        p2 = float(np.trace(cert.m_u @ rho).real)
        assert 1 - cert.p1 - p2 == pytest.approx(record.robustness, abs=1e-6)

    def test_task_failure_becomes_record(self):
        state = sample_bench_states(1, seed=0)[0]
        task = BenchTask(4, 0, "gell_mann", state, gell_mann_settings(2), 1, SolverOptions())
        record = solve_bench_state(task)
        assert not record.ok
        assert record.status == SolverStatus.FAILED.value
        assert record.state_index == 4
        assert "AssemblyError" in record.error

    def test_csv_row_of_failed_record(self):
        record = BenchRecord(1, 2, "unf", None, None, 0.5, "failed")
        row = record.csv_row()
        assert row["robustness"] == ""
        assert row["nonzero_count"] == ""
        assert row["status"] == "failed"


class TestRunBenchmark:
    """Test batched benchmark runs"""

    def test_order_and_seed(self):
        records = run_benchmark(2, appendix_settings("iso2"), D=1, seed=5, workers=1)
        assert [r.state_index for r in records] == [0, 1]
        assert all(r.seed == 5 for r in records)
        assert all(r.ok for r in records)
        assert mean_robustness(records) == pytest.approx(np.mean([r.robustness for r in records]))

    def test_product_state_control(self):
        states = [product_state(4, seed=s) for s in (7, 8)]
        records = run_benchmark(2, appendix_settings("unf"), D=1, states=states, workers=1)
        assert all(r.ok for r in records)
        assert all(r.robustness <= 1e-4 for r in records)

    def test_chunksize_reaches_executor(self, monkeypatch):
        seen = []

        class RecordingExecutor(SerialExecutor):
            def map(self, fn, *iterables, timeout=None, chunksize=1):
                seen.append(chunksize)
                return super().map(fn, *iterables, timeout=timeout, chunksize=chunksize)

        monkeypatch.setattr("entdim.workers.pool.create_executor", lambda workers=None: RecordingExecutor())
        records = run_benchmark(3, appendix_settings("iso2"), D=1, seed=5, chunksize=2)
        assert seen == [2]
        assert [r.state_index for r in records] == [0, 1, 2]

    def test_rejects_zero_chunksize(self):
        with pytest.raises(DomainError):
            run_benchmark(1, appendix_settings("iso2"), D=1, chunksize=0)

    def test_mean_of_failures(self):
        assert mean_robustness([BenchRecord(0, 0, "unf", None, None, 0.0, "failed")]) is None


@pytest.mark.slow
class TestFamilyTrend:
    """Test that more settings certify more on average"""

    def test_thirteen_settings_beat_three(self):
        comparison = compare_families(200, ["unf", "gell_mann"], D=1, seed=0)
        means = comparison.mean_robustness
        assert means["gell_mann"] > means["unf"]

    def test_required_probabilities_order_of_magnitude(self):
        cert = synthesize(rho_unf(0.2), appendix_settings("unf"), 2).certificate
        # published protocol needs 22 probabilities; optimal policies are degenerate
        assert 5 <= required_probabilities(cert.policy) <= 144
