"""Committee sampling security: probability that a randomly drawn committee is
entirely Byzantine, and the reward-to-slash ratio needed to make an attack pay.

All probabilities are exact :class:`fractions.Fraction` values; floats appear
only when reporting.
"""
from __future__ import annotations

import hashlib
import itertools
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Sequence

BRUTE_FORCE_LIMIT = 10**6


class InvalidParams(ValueError):
    pass


class UndefinedRatio(ValueError):
    pass


class InstanceTooLarge(ValueError):
    pass


class _AttackImpossible:
    """Sentinel returned when no all-Byzantine committee can be drawn."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ATTACK_IMPOSSIBLE"

    def __bool__(self) -> bool:
        return False


ATTACK_IMPOSSIBLE = _AttackImpossible()


@dataclass(frozen=True)
class SecurityParams:
    population: int
    byzantine: int
    committee: int
    reward: Fraction | float | int = 0
    slash: Fraction | float | int = 1

    def __post_init__(self):
        if self.population < 1:
            raise InvalidParams("population must be positive")
        if not 0 <= self.byzantine <= self.population:
            raise InvalidParams(
                f"need 0 <= byzantine <= population, got M={self.byzantine}, N={self.population}"
            )
        if not 1 <= self.committee <= self.population:
            raise InvalidParams(
                f"need 1 <= committee <= population, got n={self.committee}, N={self.population}"
            )
        if self.reward < 0:
            raise InvalidParams("reward must be nonnegative")
        if self.slash <= 0:
            raise InvalidParams("slash must be positive")

    def with_committee(self, n: int) -> SecurityParams:
        return SecurityParams(self.population, self.byzantine, n, self.reward, self.slash)

    @property
    def below_one_third(self) -> bool:
        """True when the Byzantine count satisfies M < N/3."""
        return 3 * self.byzantine < self.population


def hypergeom_pmf(params: SecurityParams, m: int) -> Fraction:
    """Probability of exactly ``m`` Byzantine members in a committee drawn
    without replacement."""
    N, M, n = params.population, params.byzantine, params.committee
    if m < 0 or m > n:
        return Fraction(0)
    if m > M or n - m > N - M:
        return Fraction(0)
    return Fraction(math.comb(M, m) * math.comb(N - M, n - m), math.comb(N, n))


def all_byzantine_prob(params: SecurityParams) -> Fraction:
    return hypergeom_pmf(params, params.committee)


def monotonicity_ratio(params: SecurityParams) -> Fraction:
    """Ratio P(n)/P(n+1) of all-Byzantine probabilities for consecutive
    committee sizes, computed from the two exact probabilities."""
    n = params.committee
    if n >= params.byzantine:
        raise UndefinedRatio(
            f"committee size {n} >= byzantine count {params.byzantine}: P(n+1) is zero"
        )
    return all_byzantine_prob(params) / all_byzantine_prob(params.with_committee(n + 1))


def expected_revenue(params: SecurityParams, p_success) -> Fraction | float:
    """Expected payoff of an attack that succeeds with ``p_success``."""
    if not 0 <= p_success <= 1:
        raise InvalidParams("p_success must lie in [0, 1]")
    r, xi, p = params.reward, params.slash, p_success
    if isinstance(r, float) or isinstance(xi, float) or isinstance(p, float):
        return float(p) * float(r) - (1 - float(p)) * float(xi)
    return Fraction(p) * Fraction(r) - (1 - Fraction(p)) * Fraction(xi)


def min_reward_ratio(params: SecurityParams) -> Fraction | _AttackImpossible:
    """Smallest r/xi at which attacking breaks even: 1/P(all Byzantine) - 1."""
    p = all_byzantine_prob(params)
    if p == 0:
        return ATTACK_IMPOSSIBLE
    return 1 / p - 1


def brute_force_all_byzantine(params: SecurityParams) -> Fraction:
    """Enumerate every committee and count the all-Byzantine ones.

    Members ``0..M-1`` are the Byzantine ones. Independent of the closed form.
    """
    N, M, n = params.population, params.byzantine, params.committee
    if math.comb(N, n) > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(f"C({N},{n}) exceeds {BRUTE_FORCE_LIMIT} subsets")
    hits = total = 0
    for subset in itertools.combinations(range(N), n):
        total += 1
        if all(member < M for member in subset):
            hits += 1
    return Fraction(hits, total)


@dataclass(frozen=True)
class StakeProfile:
    stakes: Sequence[tuple[Hashable, Fraction | float | int]]
    unit: Fraction | float | int

    def __post_init__(self):
        if self.unit <= 0:
            raise InvalidParams("stake unit must be positive")
        for node, s in self.stakes:
            if s < 0:
                raise InvalidParams(f"negative stake for {node!r}")


def expand_stake_units(profile: StakeProfile) -> list[tuple[Hashable, int]]:
    """Multiplicity of each node: number of full stake units it holds."""
    return [(node, math.floor(s / profile.unit)) for node, s in profile.stakes]


def virtual_population(profile: StakeProfile) -> list[Hashable]:
    """Flatten a stake profile into one entry per full stake unit."""
    out = []
    for node, k in expand_stake_units(profile):
        out.extend([node] * k)
    return out


def _seed_bytes(seed) -> bytes:
    if isinstance(seed, bytes):
        return seed
    return repr(seed).encode()


def sample_committee(population: Sequence[Hashable], n: int, seed) -> set:
    """Draw ``n`` distinct members without replacement, deterministically in
    ``seed`` and the population order.

    Stands in for VRF-based selection: the generator is keyed by a SHA-256
    digest of the seed so nearby seeds give unrelated draws.
    """
    if n < 0 or n > len(population):
        raise InvalidParams(f"cannot draw {n} from a population of {len(population)}")
    key = hashlib.sha256(b"committee:" + _seed_bytes(seed)).digest()
    rng = random.Random(int.from_bytes(key, "big"))
    return set(rng.sample(list(population), n))


def sweep(population: int, byzantine: int, n_min: int, n_max: int,
          reward=0, slash=1) -> list[dict]:
    """Rows of (n, P_all_byzantine, min_reward_ratio) for a committee-size sweep."""
    rows = []
    for n in range(n_min, n_max + 1):
        params = SecurityParams(population, byzantine, n, reward, slash)
        p = all_byzantine_prob(params)
        ratio = min_reward_ratio(params)
        viable = None
        if ratio is not ATTACK_IMPOSSIBLE:
            viable = expected_revenue(params, p) >= 0
        rows.append({
            "n": n,
            "p_all_byzantine": float(p),
            "p_exact": f"{p.numerator}/{p.denominator}",
            "min_reward_ratio": None if ratio is ATTACK_IMPOSSIBLE else float(ratio),
            "attack_impossible": ratio is ATTACK_IMPOSSIBLE,
            "attack_viable": viable,
        })
    return rows
