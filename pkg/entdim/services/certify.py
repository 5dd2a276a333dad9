"""
Statistics: p-values, experimental type-II errors and round simulation
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.special import logsumexp
from scipy.stats import binom

from entdim.deps import settings
from entdim.exceptions import DimensionError, DomainError, IncompleteDataError, SimulationError
from entdim.services.measurements import MeasurementSet, born_probabilities
from entdim.services.sdp import LoccPolicy, ProtocolCertificate
from entdim.services.states import SeedLike, reduced_state

logger = structlog.get_logger(__name__)

NORMALIZATION_TOL = 1e-6
SIMULATION_CHUNK = 1_000_000


def _check_counts(v: int, n: int) -> Tuple[int, int]:
    if int(v) != v or int(n) != n:
        raise DomainError(f"v and n must be integers, got v={v}, n={n}")
    v, n = int(v), int(n)
    if n < 0 or not 0 <= v <= n:
        raise DomainError(f"need 0 <= v <= n, got v={v}, n={n}")
    return v, n


def _check_probability(p: float, name: str) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {p}")
    return p


def p_value(v: int, n: int, p1: float) -> float:
    """
    Largest probability that a state of Schmidt number <= D yields at least v outcomes C
    in n rounds: sum_{k=v}^{n} C(n,k) p1^k (1-p1)^(n-k).
    """
    v, n = _check_counts(v, n)
    p1 = _check_probability(p1, "p1")
    if v == 0:
        return 1.0
    if v == n:
        return p1**n
    if p1 == 0.0:
        return 0.0
    if p1 == 1.0:
        return 1.0
    # survival function of the binomial, evaluated through the regularized incomplete beta
    return float(min(1.0, max(0.0, binom.sf(v - 1, n, p1))))


def log_p_value(v: int, n: int, p1: float) -> float:
    """Natural log of p_value, accumulated in log space so far tails do not underflow"""
    v, n = _check_counts(v, n)
    p1 = _check_probability(p1, "p1")
    if v == 0:
        return 0.0
    if p1 == 0.0:
        return -np.inf
    if p1 == 1.0:
        return 0.0
    k = np.arange(v, n + 1)
    return float(min(0.0, logsumexp(binom.logpmf(k, n, p1))))


def expected_pvalue_bound(p1: float, p2: float, n: int) -> float:
    """Upper bound [1 - (1 - p1 - p2)^2]^n on the mean p-value after n rounds on the target"""
    p1 = _check_probability(p1, "p1")
    p2 = _check_probability(p2, "p2")
    if int(n) != n or n < 0:
        raise DomainError(f"n must be a nonnegative integer, got {n}")
    total = p1 + p2
    if total > 1.0:
        raise DomainError(f"p1 + p2 = {total} > 1: the bound is vacuous")
    return (1.0 - (1.0 - total) ** 2) ** int(n)


@dataclass
class CertificationOutcome:
    """v outcomes C in n rounds and the resulting verdict"""
    c_count: int
    rounds: int
    p1_used: float
    p_value: float
    significance: float

    @property
    def certified(self) -> bool:
        return self.p_value < self.significance

    @property
    def frequency(self) -> float:
        return self.c_count / self.rounds if self.rounds else 0.0


def certification_outcome(v: int, n: int, p1: float, significance: Optional[float] = None) -> CertificationOutcome:
    significance = settings.significance if significance is None else significance
    return CertificationOutcome(int(v), int(n), float(p1), p_value(v, n, p1), float(significance))


# ---------------------------------------------------------------------------
# Experiment records
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ExperimentRecord:
    """
    Outcome statistics per setting pair, indexed [x, y, a, b].

    Sampled records carry integer counts with rounds_per_pair rounds per measured pair;
    exact records (Born probabilities) carry probabilities only. Unmeasured pairs are
    masked out by `measured`.
    """
    probabilities: np.ndarray
    measured: np.ndarray
    counts: Optional[np.ndarray] = None
    rounds_per_pair: Optional[int] = None

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.measured = np.asarray(self.measured, dtype=bool)
        m, m2, d, d2 = self.probabilities.shape
        if m != m2 or d != d2 or self.measured.shape != (m, m):
            raise DimensionError(f"record shape {self.probabilities.shape} / mask {self.measured.shape} is inconsistent")

    @property
    def m(self) -> int:
        return self.probabilities.shape[0]

    @property
    def d(self) -> int:
        return self.probabilities.shape[2]

    @property
    def estimated_probs(self) -> np.ndarray:
        return self.probabilities

    @classmethod
    def from_counts(cls, counts: np.ndarray, rounds_per_pair: int, measured: Optional[np.ndarray] = None) -> "ExperimentRecord":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 4:
            raise DimensionError(f"counts must be indexed [x, y, a, b], got shape {counts.shape}")
        m = counts.shape[0]
        measured = np.ones((m, m), dtype=bool) if measured is None else np.asarray(measured, dtype=bool)
        if (counts < 0).any():
            raise DomainError("counts must be nonnegative")
        totals = counts.sum(axis=(2, 3))
        bad = np.argwhere(measured & (totals != rounds_per_pair))
        if len(bad):
            x, y = bad[0]
            raise DomainError(
                f"pair ({x + 1},{y + 1}) has {int(totals[x, y])} rounds, expected {rounds_per_pair}"
            )
        probabilities = np.where(measured[..., None, None], counts / rounds_per_pair, 0.0)
        return cls(probabilities, measured, counts, int(rounds_per_pair))

    def missing_pairs(self, policy: LoccPolicy) -> List[Tuple[int, int]]:
        """Setting pairs the policy uses that this record never measured"""
        used = ((policy.table_c > 0) | (policy.table_u > 0)).any(axis=(2, 3))
        return [(int(x), int(y)) for x, y in np.argwhere(used & ~self.measured)]


def born_record(rho, meas: MeasurementSet) -> ExperimentRecord:
    """Exact record: every pair measured, probabilities straight from the Born rule"""
    probs = born_probabilities(rho, meas)
    return ExperimentRecord(np.clip(probs, 0.0, None), np.ones((meas.m, meas.m), dtype=bool))


def sample_record(
    rho,
    meas: MeasurementSet,
    rounds_per_pair: int,
    seed: SeedLike = None,
    pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> ExperimentRecord:
    """Multinomial sample of rounds_per_pair rounds for each listed pair (default: all pairs)"""
    if rounds_per_pair < 1:
        raise DomainError(f"rounds_per_pair must be >= 1, got {rounds_per_pair}")
    rng = np.random.default_rng(seed)
    probs = np.clip(born_probabilities(rho, meas), 0.0, None)
    m, d = meas.m, meas.local_dim
    measured = np.zeros((m, m), dtype=bool)
    for x, y in pairs if pairs is not None else np.ndindex(m, m):
        measured[x, y] = True
    counts = np.zeros((m, m, d, d), dtype=np.int64)
    for x, y in zip(*np.nonzero(measured)):
        p = probs[x, y].ravel()
        counts[x, y] = rng.multinomial(rounds_per_pair, p / p.sum()).reshape(d, d)
    return ExperimentRecord.from_counts(counts, rounds_per_pair, measured)


def p2_exp(record: ExperimentRecord, policy: LoccPolicy) -> float:
    """sum_{x,y,a,b} P(x,y,U|a,b) p(a,b|x,y): the type-II error the policy would have shown"""
    if record.m != policy.m or record.d != policy.d:
        raise DimensionError(
            f"record (m={record.m}, d={record.d}) does not match policy (m={policy.m}, d={policy.d})"
        )
    missing = record.missing_pairs(policy)
    if missing:
        raise IncompleteDataError(missing)
    return float(np.sum(policy.table_u * record.probabilities))


@dataclass
class ExperimentalVerdict:
    p1: float
    p2_exp: float

    @property
    def robustness(self) -> float:
        return 1.0 - self.p1 - self.p2_exp

    @property
    def certified(self) -> bool:
        return self.p1 + self.p2_exp < 1.0


def certify_record(record: ExperimentRecord, certificate: ProtocolCertificate) -> ExperimentalVerdict:
    """
    Verdict from estimated operator averages: entanglement dimension > D when p1 + p2_exp < 1.

    No finite-sample correction is applied to p2_exp.
    """
    verdict = ExperimentalVerdict(certificate.p1, p2_exp(record, certificate.policy))
    logger.info("record_certified", p1=verdict.p1, p2_exp=verdict.p2_exp, certified=verdict.certified)
    return verdict


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def alice_marginals(rho, meas: MeasurementSet) -> np.ndarray:
    """p(a|x) = tr[N_{a|x} rho_A] from the reduced state, indexed [x, a]"""
    d = meas.local_dim
    rho_a = reduced_state(rho, 0, (d, d))
    return np.clip(np.einsum("xaij,ji->xa", meas.operators, rho_a).real, 0.0, None)


def _inverse_cdf(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise categorical draw: weights (n, k) need not be normalized"""
    cdf = np.cumsum(weights, axis=1)
    cdf /= cdf[:, -1:]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), weights.shape[1] - 1)


def _reached_violation(masses: np.ndarray, targets: np.ndarray, what: str) -> None:
    bad = np.abs(masses - targets) > NORMALIZATION_TOL
    bad |= targets <= 0
    if bad.any():
        index = int(np.argmax(bad))
        raise SimulationError(
            f"{what} does not normalize where it is reached: mass {masses[index]:.3e} vs {targets[index]:.3e}"
        )


def _simulate_chunk(
    rng: np.random.Generator, size: int, probs: np.ndarray, pa: np.ndarray, policy: LoccPolicy
) -> int:
    u = rng.random((size, 5))
    r = policy.marginal_r

    x = _inverse_cdf(np.broadcast_to(r, (size, r.size)), u[:, 0])
    a = _inverse_cdf(pa[x], u[:, 1])

    q_xa = policy.marginal_q[x, :, a]
    _reached_violation(q_xa.sum(axis=1), r[x], "P(x,y|a)")
    y = _inverse_cdf(q_xa, u[:, 2])

    b = _inverse_cdf(probs[x, y, a], u[:, 3])

    c_mass = policy.table_c[x, y, a, b]
    cu_mass = c_mass + policy.table_u[x, y, a, b]
    _reached_violation(cu_mass, policy.marginal_q[x, y, a], "P(x,y,c|a,b)")
    return int(np.count_nonzero(u[:, 4] * cu_mass < c_mass))


def simulate_rounds(
    rho,
    meas: MeasurementSet,
    policy: LoccPolicy,
    n: int,
    seed: SeedLike = None,
    p1: float = 0.0,
    significance: Optional[float] = None,
) -> CertificationOutcome:
    """
    Run the protocol n times on fresh copies of rho.

    Each round draws x ~ P(x), Alice's outcome a by the Born rule, y ~ P(x,y|a)/P(x),
    Bob's outcome b conditioned on a, and c ~ P(x,y,c|a,b)/P(x,y|a). The p-value uses p1.
    """
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if policy.m != meas.m or policy.d != meas.local_dim:
        raise DimensionError("policy and measurement set disagree on m or d")
    if abs(float(policy.marginal_r.sum()) - 1.0) > NORMALIZATION_TOL:
        raise SimulationError(f"P(x) sums to {policy.marginal_r.sum():.9f}")

    probs = np.clip(born_probabilities(rho, meas), 0.0, None)
    pa = alice_marginals(rho, meas)

    rng = np.random.default_rng(seed)
    v, done = 0, 0
    while done < n:
        size = min(SIMULATION_CHUNK, n - done)
        v += _simulate_chunk(rng, size, probs, pa, policy)
        done += size

    outcome = certification_outcome(v, n, p1, significance)
    logger.info("rounds_simulated", rounds=n, c_count=v, p_value=outcome.p_value, certified=outcome.certified)
    return outcome


def simulate_certificate(
    rho, meas: MeasurementSet, certificate: ProtocolCertificate, n: int, seed: SeedLike = None
) -> CertificationOutcome:
    return simulate_rounds(rho, meas, certificate.policy, n, seed, p1=certificate.p1)
