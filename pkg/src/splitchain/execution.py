"""Execution-role nodes: apply finalized blocks in order and publish receipts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .model import GENESIS, PER_TX_US, Block, NodeSpec, PerfClass, digest


class HeightGap(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class ToyState:
    commitment: str = GENESIS
    applied_height: int = 0


@dataclass(frozen=True)
class ExecutionReceipt:
    block: str
    height: int
    executor: str
    result_commitment: str
    completed_at: int


def chain_commitment(parent_commitment: str, tx_digests: Sequence[str]) -> str:
    """Fold the ordered transaction digests into the parent commitment."""
    acc = parent_commitment
    for tx in tx_digests:
        acc = digest("apply", acc, tx)
    return digest("state", acc, len(tx_digests))


def execution_time_us(tx_count: int, perf_class: PerfClass, parallelism: int = 1,
                      per_tx_us: Mapping[PerfClass, int] = PER_TX_US) -> int:
    if parallelism < 1:
        raise ValueError("parallelism must be a positive count")
    return math.ceil(tx_count / parallelism) * per_tx_us[perf_class]


def execute_block(node: NodeSpec, block: Block, state: ToyState, parallelism: int = 1,
                  started_at: int = 0,
                  per_tx_us: Mapping[PerfClass, int] = PER_TX_US) -> tuple[ExecutionReceipt, ToyState]:
    """Run ``block`` on top of ``state``; returns the receipt and the new state.

    The receipt is stamped ``started_at`` plus the node's execution time.
    """
    if block.height != state.applied_height + 1:
        raise HeightGap(f"block {block.height} does not follow applied height {state.applied_height}")
    duration = execution_time_us(block.tx_count, node.perf_class, parallelism, per_tx_us)
    commitment = chain_commitment(state.commitment, block.tx_digests)
    receipt = ExecutionReceipt(block.digest, block.height, node.id, commitment,
                               started_at + duration)
    return receipt, ToyState(commitment, block.height)


def pipeline_throughput(receipts: Sequence[ExecutionReceipt], total_tx: int,
                        run_start: int = 0) -> float:
    """Transactions per second from ``run_start`` to the last receipt (times in us)."""
    if not receipts:
        raise EmptyInput("no receipts")
    heights = [r.height for r in receipts]
    if heights != list(range(heights[0], heights[0] + len(heights))):
        raise ValueError("receipts must cover a contiguous height range in order")
    elapsed = receipts[-1].completed_at - run_start
    if elapsed <= 0:
        raise ValueError("last receipt must complete after the run start")
    return total_tx / (elapsed / 1e6)


@dataclass
class Executor:
    """Event-loop state machine for one execution node.

    Finalized blocks may arrive out of order; they wait in a buffer until
    their parent height has been applied. A started block occupies the node
    until its receipt time.
    """

    spec: NodeSpec
    parallelism: int = 1
    per_tx_us: Mapping[PerfClass, int] = field(default_factory=lambda: dict(PER_TX_US))
    state: ToyState = field(default_factory=ToyState)
    busy_until: int = 0
    receipts: list[ExecutionReceipt] = field(default_factory=list)
    execution_us: int = 0
    pending: dict[int, Block] = field(default_factory=dict)

    def deliver(self, block: Block) -> None:
        if block.height > self.state.applied_height:
            self.pending.setdefault(block.height, block)

    def start_next(self, now: int) -> ExecutionReceipt | None:
        """Begin the next in-order block if idle; the returned receipt is
        published at its ``completed_at``."""
        nxt = self.state.applied_height + 1
        if self.busy_until > now or nxt not in self.pending:
            return None
        receipt, self.state = execute_block(self.spec, self.pending.pop(nxt), self.state,
                                            self.parallelism, now, self.per_tx_us)
        self.execution_us += receipt.completed_at - now
        self.busy_until = receipt.completed_at
        return receipt

    def complete(self, receipt: ExecutionReceipt) -> None:
        self.receipts.append(receipt)
