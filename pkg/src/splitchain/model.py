"""Node, block and workload types shared by the consensus and execution engines."""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

BLOCK_TX_MIN = 240
BLOCK_TX_MAX = 480
DIGEST_BYTES = 32
REFERENCE_SEED = 16356
REFERENCE_TOTAL_TX = 7995
REFERENCE_BLOCKS = 20


class PerfClass(str, Enum):
    SLOW = "slow"
    MEDIUM = "medium"
    FAST = "fast"

    @property
    def per_tx_us(self) -> int:
        return PER_TX_US[self]

    @property
    def power(self) -> int:
        """Compute power in slow-node units."""
        return POWER_UNITS[self]


# Per-transaction execution cost in microseconds.
PER_TX_US: Mapping[PerfClass, int] = {
    PerfClass.SLOW: 10_000,
    PerfClass.MEDIUM: 5_000,
    PerfClass.FAST: 2_500,
}

POWER_UNITS: Mapping[PerfClass, int] = {
    PerfClass.SLOW: 1,
    PerfClass.MEDIUM: 5,
    PerfClass.FAST: 25,
}


class Role(str, Enum):
    CONSENSUS = "consensus"
    EXECUTION = "execution"
    BOTH = "both"

    @property
    def orders(self) -> bool:
        return self in (Role.CONSENSUS, Role.BOTH)

    @property
    def executes(self) -> bool:
        return self in (Role.EXECUTION, Role.BOTH)


class Mode(str, Enum):
    SEPARATED = "separated"
    COMBINED = "combined"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: Role
    perf_class: PerfClass
    region: int
    stake: int = 1

    def __post_init__(self):
        if self.stake <= 0:
            raise ValueError(f"node {self.id}: stake must be positive")


def digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x00")
    return h.hexdigest()


GENESIS = digest("genesis")


@dataclass(frozen=True)
class Block:
    height: int
    proposer: str
    tx_digests: tuple[str, ...]
    parent: str
    state_commitment: Optional[str] = None

    def __post_init__(self):
        if self.height < 1:
            raise ValueError("block height starts at 1")

    @property
    def tx_count(self) -> int:
        return len(self.tx_digests)

    @property
    def digest(self) -> str:
        return digest("block", self.height, self.proposer, self.parent,
                      self.state_commitment or "", *self.tx_digests)

    @property
    def size_mb(self) -> float:
        return (self.tx_count * DIGEST_BYTES + 256) / 1e6


def tx_digests(seed, height: int, count: int) -> tuple[str, ...]:
    return tuple(digest("tx", seed, height, i) for i in range(count))


class Workload:
    """Seeded stream of block sizes; block ``h`` holds the ``h``-th draw from
    ``[240, 480]``."""

    def __init__(self, seed=REFERENCE_SEED, lo: int = BLOCK_TX_MIN, hi: int = BLOCK_TX_MAX):
        self.seed = seed
        self.lo, self.hi = lo, hi
        self._rng = random.Random(seed)
        self._sizes: list[int] = []

    def size(self, height: int) -> int:
        while len(self._sizes) < height:
            self._sizes.append(self._rng.randint(self.lo, self.hi))
        return self._sizes[height - 1]

    def sizes(self, blocks: int) -> list[int]:
        return [self.size(h) for h in range(1, blocks + 1)]


def calibrate_seed(blocks: int = REFERENCE_BLOCKS, total: int = REFERENCE_TOTAL_TX,
                   start: int = 0, limit: int = 10**6) -> int:
    """Smallest seed >= ``start`` whose first ``blocks`` draws sum to ``total``."""
    for seed in range(start, start + limit):
        if sum(Workload(seed).sizes(blocks)) == total:
            return seed
    raise LookupError(f"no seed in [{start}, {start + limit}) gives {total} tx over {blocks} blocks")
