"""Rotating-proposer, two-phase (prevote/precommit) BFT consensus driven by the
discrete-event loop.

In ``separated`` mode blocks carry only ordered transaction digests and
consensus nodes never execute. In ``combined`` mode the proposer executes the
block to embed a state commitment and every validator re-executes it before
voting.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .execution import Executor, ToyState, chain_commitment, execution_time_us
from .model import (GENESIS, PER_TX_US, Block, Mode, NodeSpec, PerfClass,
                    Workload, tx_digests)
from .netmodel import EventQueue, LatencyMatrix, SimEvent, message_latency, ms_to_us

log = logging.getLogger(__name__)

QUORUM = Fraction(2, 3)
VERIFY_CHARGE_US = 1_000
VOTE_SIZE_MB = 0.0001
CERT_SIZE_MB = 0.0005


class EmptyCommittee(ValueError):
    pass


class WrongProposer(ValueError):
    pass


class DuplicateVote(ValueError):
    pass


class CommitmentMismatch(RuntimeError):
    pass


class Phase(str, Enum):
    PREVOTE = "prevote"
    PRECOMMIT = "precommit"


@dataclass(frozen=True)
class Vote:
    voter: str
    block: str
    phase: Phase
    height: int


@dataclass(frozen=True)
class QuorumDecision:
    height: int
    block: str
    supporting_stake_fraction: Fraction
    finalized: bool


def next_proposer(height: int, committee: Sequence[NodeSpec]) -> str:
    if not committee:
        raise EmptyCommittee("committee is empty")
    return committee[(height - 1) % len(committee)].id


def propose_block(proposer: NodeSpec, height: int, workload: Workload, mode: Mode,
                  prev_state: ToyState, parent: str = GENESIS,
                  committee: Sequence[NodeSpec] | None = None,
                  per_tx_us: Mapping[PerfClass, int] = PER_TX_US) -> tuple[Block, int]:
    """Build the block for ``height``; returns it with the proposer's
    execution charge in microseconds (zero in separated mode)."""
    if committee is not None and next_proposer(height, committee) != proposer.id:
        raise WrongProposer(f"{proposer.id} is not the proposer for height {height}")
    txs = tx_digests(workload.seed, height, workload.size(height))
    if Mode(mode) is Mode.SEPARATED:
        return Block(height, proposer.id, txs, parent), 0
    charge = execution_time_us(len(txs), proposer.perf_class, 1, per_tx_us)
    commitment = chain_commitment(prev_state.commitment, txs)
    return Block(height, proposer.id, txs, parent, commitment), charge


def validate_proposal(node: NodeSpec, block: Block, mode: Mode, prev_state: ToyState,
                      per_tx_us: Mapping[PerfClass, int] = PER_TX_US) -> tuple[bool, int]:
    """Check a proposal; returns ``(accepted, charge_us)``.

    Separated mode is a structural check with a fixed 1 ms charge. Combined
    mode re-executes every transaction and compares state commitments.
    """
    if Mode(mode) is Mode.SEPARATED:
        ok = block.state_commitment is None and block.height == prev_state.applied_height + 1
        return ok, VERIFY_CHARGE_US
    charge = execution_time_us(block.tx_count, node.perf_class, 1, per_tx_us)
    expected = chain_commitment(prev_state.commitment, block.tx_digests)
    return block.state_commitment == expected, charge


def tally(votes: Iterable[Vote], stakes: Mapping[str, int | Fraction], phase: Phase | None = None,
          ) -> QuorumDecision:
    """Sum voter stake for one (height, phase, block); finalized iff the
    supporting fraction is strictly above two thirds."""
    votes = list(votes)
    if not votes:
        raise ValueError("no votes to tally")
    first = votes[0]
    phase = Phase(phase) if phase is not None else first.phase
    seen = set()
    for v in votes:
        if (v.height, v.phase, v.block) != (first.height, phase, first.block):
            raise ValueError("votes must share height, phase and block")
        if v.voter in seen:
            raise DuplicateVote(f"{v.voter} voted twice at height {v.height} ({phase.value})")
        seen.add(v.voter)
    total = sum(Fraction(s) for s in stakes.values())
    support = sum(Fraction(stakes[v.voter]) for v in votes) / total
    return QuorumDecision(first.height, first.block, support, support > QUORUM)


def percentile_bound_us(committee: Sequence[NodeSpec], tx_count: int,
                        per_tx_us: Mapping[PerfClass, int] = PER_TX_US) -> int:
    """Re-execution time of the slowest member of the fastest subset whose
    stake exceeds two thirds of the committee."""
    total = sum(Fraction(n.stake) for n in committee)
    acc = Fraction(0)
    for node in sorted(committee, key=lambda n: per_tx_us[n.perf_class]):
        acc += node.stake
        if acc / total > QUORUM:
            return execution_time_us(tx_count, node.perf_class, 1, per_tx_us)
    raise EmptyCommittee("committee is empty")


@dataclass(frozen=True)
class Message:
    height: int
    body: object
    sent_at: int


@dataclass
class RoundRecord:
    height: int
    proposer: str
    tx_count: int
    propose_time: int
    finalize_time: int | None = None

    @property
    def latency_us(self) -> int:
        return self.finalize_time - self.propose_time

    def as_dict(self) -> dict:
        return {
            "height": self.height,
            "proposer": self.proposer,
            "t": self.tx_count,
            "propose_time_us": self.propose_time,
            "finalize_time_us": self.finalize_time,
            "latency_ms": self.latency_us / 1000,
        }


@dataclass
class ConsensusNode:
    spec: NodeSpec
    state: ToyState = field(default_factory=ToyState)
    busy_until: int = 0
    validated_height: int = 0
    execution_us: int = 0
    verification_us: int = 0
    pending: dict[int, Block] = field(default_factory=dict)
    prevoted: set[int] = field(default_factory=set)
    precommitted: set[int] = field(default_factory=set)
    polka_seen: set[int] = field(default_factory=set)
    chain: list[str] = field(default_factory=list)
    start_request: int | None = None


class Network:
    """One simulated deployment: a consensus committee, optional execution
    nodes and the event loop connecting them.

    Votes are collected by the height's proposer, which broadcasts a prevote
    certificate and, on a precommit quorum, the commit.
    """

    def __init__(self, committee: Sequence[NodeSpec], mode: Mode, workload: Workload,
                 matrix: LatencyMatrix, blocks: int, executors: Sequence[NodeSpec] = (),
                 parallelism: int = 1, per_tx_us: Mapping[PerfClass, int] = PER_TX_US,
                 record_trace: bool = True):
        if not committee:
            raise EmptyCommittee("committee is empty")
        self.committee = list(committee)
        self.mode = Mode(mode)
        self.workload = workload
        self.matrix = matrix
        self.blocks = blocks
        self.per_tx_us = dict(per_tx_us)
        self.queue = EventQueue(record_trace=record_trace)
        self.nodes = {s.id: ConsensusNode(s) for s in self.committee}
        self.executors = {s.id: Executor(s, parallelism, dict(per_tx_us)) for s in executors}
        self.specs = {s.id: s for s in [*self.committee, *executors]}
        self.stakes = {s.id: s.stake for s in self.committee}
        self.rounds: dict[int, RoundRecord] = {}
        self.proposed: dict[int, Block] = {}
        self.finalized: dict[int, Block] = {}
        self.decisions: dict[int, QuorumDecision] = {}
        self.messages_sent = 0
        self.bytes_sent_mb = 0.0
        self._votes: dict[tuple[int, Phase], dict[str, Vote]] = {}
        self._polka: set[int] = set()
        self._started = False
        self._handlers = {
            "round_start": self._on_round_start,
            "proposal": self._on_proposal,
            "validated": self._on_validated,
            "prevote": self._on_vote,
            "precommit": self._on_vote,
            "polka": self._on_polka,
            "commit": self._on_commit,
            "executed": self._on_executed,
        }

    # -- public driving API -------------------------------------------------

    @property
    def now(self) -> int:
        return self.queue.now

    @property
    def trace(self) -> list[SimEvent]:
        return self.queue.trace

    def consensus_round(self, height: int) -> tuple[Block, int]:
        """Advance the simulation until ``height`` finalizes; returns the block
        and its finalization latency in microseconds."""
        if height > 1 and height - 1 not in self.finalized:
            raise RuntimeError(f"height {height - 1} has not finalized")
        if not self._started:
            self._started = True
            self.queue.schedule(self.now, "round_start", next_proposer(1, self.committee),
                                payload=Message(1, None, self.now))
        self.queue.run_until(lambda: height in self.finalized, self._dispatch)
        return self.finalized[height], self.rounds[height].latency_us

    def run(self) -> None:
        for h in range(1, self.blocks + 1):
            self.consensus_round(h)
        if self.mode is Mode.SEPARATED:
            self.queue.run_until(self.executors_done, self._dispatch)
        self.queue.run_until(lambda: len(self.queue) == 0, self._dispatch)

    def executors_done(self) -> bool:
        return all(e.state.applied_height == self.blocks and len(e.receipts) == self.blocks
                   for e in self.executors.values())

    def proposer(self, height: int) -> str:
        return next_proposer(height, self.committee)

    # -- messaging ----------------------------------------------------------

    def _send(self, src: str, dst: str, kind: str, size_mb: float, height: int, body,
              at: int | None = None) -> None:
        sent_at = self.now if at is None else at
        if src == dst:
            delay = 0
        else:
            delay = ms_to_us(message_latency(self.matrix, self.specs[src].region,
                                             self.specs[dst].region, size_mb))
            self.messages_sent += 1
            self.bytes_sent_mb += size_mb
        self.queue.schedule(sent_at + delay, kind, dst, src, size_mb,
                            Message(height, body, sent_at))

    def _broadcast(self, src: str, kind: str, size_mb: float, height: int, body,
                   at: int | None = None, include_executors: bool = False) -> None:
        for node in self.committee:
            self._send(src, node.id, kind, size_mb, height, body, at)
        if include_executors:
            for ex_id in self.executors:
                self._send(src, ex_id, kind, size_mb, height, body, at)

    def _dispatch(self, event: SimEvent) -> None:
        self._handlers[event.kind](event)

    # -- proposer -----------------------------------------------------------

    def _on_round_start(self, event: SimEvent) -> None:
        node = self.nodes[event.target]
        node.start_request = event.payload.height
        self._try_start(node)

    def _try_start(self, node: ConsensusNode) -> None:
        h = node.start_request
        if h is None or node.busy_until > self.now:
            return
        if h - 1 not in node.prevoted and h > 1:
            # Still has to validate the parent before building on it.
            return
        node.start_request = None
        spec = node.spec
        parent = self.finalized[h - 1].digest if h > 1 else GENESIS
        block, charge = propose_block(spec, h, self.workload, self.mode, node.state, parent,
                                      self.committee, self.per_tx_us)
        self.rounds[h] = RoundRecord(h, spec.id, block.tx_count, self.now)
        self.proposed[h] = block
        ready = self.now + charge
        node.busy_until = ready
        node.execution_us += charge
        node.validated_height = h
        if self.mode is Mode.COMBINED:
            node.state = ToyState(block.state_commitment, h)
        else:
            node.state = ToyState(node.state.commitment, h)
        log.debug("h=%d proposer=%s t=%d ready=%d", h, spec.id, block.tx_count, ready)
        self.queue.schedule(ready, "validated", spec.id, spec.id, payload=Message(h, block, ready))
        for other in self.committee:
            if other.id != spec.id:
                self._send(spec.id, other.id, "proposal", block.size_mb, h, block, at=ready)

    # -- validators ---------------------------------------------------------

    def _on_proposal(self, event: SimEvent) -> None:
        node = self.nodes[event.target]
        block = event.payload.body
        if block.height > node.validated_height:
            node.pending.setdefault(block.height, block)
        self._try_validate(node)

    def _try_validate(self, node: ConsensusNode) -> None:
        h = node.validated_height + 1
        if node.busy_until > self.now or h not in node.pending:
            return
        block = node.pending.pop(h)
        ok, charge = validate_proposal(node.spec, block, self.mode, node.state, self.per_tx_us)
        if not ok:
            raise CommitmentMismatch(f"{node.spec.id} rejected block {h}")
        if self.mode is Mode.COMBINED:
            node.execution_us += charge
            node.state = ToyState(block.state_commitment, h)
        else:
            node.verification_us += charge
            node.state = ToyState(node.state.commitment, h)
        node.validated_height = h
        node.busy_until = self.now + charge
        self.queue.schedule(node.busy_until, "validated", node.spec.id, node.spec.id,
                            payload=Message(h, block, self.now))

    def _on_validated(self, event: SimEvent) -> None:
        node = self.nodes[event.target]
        h, block = event.payload.height, event.payload.body
        node.prevoted.add(h)
        vote = Vote(node.spec.id, block.digest, Phase.PREVOTE, h)
        self._send(node.spec.id, self.proposer(h), "prevote", VOTE_SIZE_MB, h, vote)
        if h in node.polka_seen:
            self._precommit(node, h, block.digest)
        self._try_validate(node)
        self._try_start(node)

    def _precommit(self, node: ConsensusNode, h: int, block_digest: str) -> None:
        if h in node.precommitted:
            return
        node.precommitted.add(h)
        vote = Vote(node.spec.id, block_digest, Phase.PRECOMMIT, h)
        self._send(node.spec.id, self.proposer(h), "precommit", VOTE_SIZE_MB, h, vote)

    def _on_polka(self, event: SimEvent) -> None:
        node = self.nodes[event.target]
        h = event.payload.height
        node.polka_seen.add(h)
        if h in node.prevoted:
            self._precommit(node, h, event.payload.body)

    # -- vote collection ----------------------------------------------------

    def _on_vote(self, event: SimEvent) -> None:
        vote: Vote = event.payload.body
        h = vote.height
        bucket = self._votes.setdefault((h, vote.phase), {})
        if vote.voter in bucket:
            raise DuplicateVote(f"{vote.voter} voted twice at height {h}")
        bucket[vote.voter] = vote
        if vote.phase is Phase.PREVOTE:
            if h in self._polka:
                return
            if tally(bucket.values(), self.stakes, Phase.PREVOTE).finalized:
                self._polka.add(h)
                self._broadcast(event.target, "polka", CERT_SIZE_MB, h, vote.block)
            return
        if h in self.finalized:
            return
        decision = tally(bucket.values(), self.stakes, Phase.PRECOMMIT)
        if decision.finalized:
            self._finalize(event.target, h, decision)

    def _finalize(self, proposer: str, h: int, decision: QuorumDecision) -> None:
        block = self.proposed[h]
        self.finalized[h] = block
        self.decisions[h] = decision
        self.rounds[h].finalize_time = self.now
        log.debug("h=%d finalized at %d (support %.3f)", h, self.now,
                  float(decision.supporting_stake_fraction))
        for node in self.committee:
            self._send(proposer, node.id, "commit", CERT_SIZE_MB, h, block)
        for ex_id in self.executors:
            self._send(proposer, ex_id, "commit", block.size_mb, h, block)

    # -- commits & execution -------------------------------------------------

    def _on_commit(self, event: SimEvent) -> None:
        block: Block = event.payload.body
        if event.target in self.executors:
            ex = self.executors[event.target]
            ex.deliver(block)
            self._kick_executor(ex)
            return
        node = self.nodes[event.target]
        node.chain.append(block.digest)
        nxt = block.height + 1
        if nxt <= self.blocks and self.proposer(nxt) == node.spec.id:
            node.start_request = nxt
            self._try_start(node)

    def _kick_executor(self, ex: Executor) -> None:
        receipt = ex.start_next(self.now)
        if receipt is not None:
            self.queue.schedule(receipt.completed_at, "executed", ex.spec.id, ex.spec.id,
                                payload=Message(receipt.height, receipt, self.now))

    def _on_executed(self, event: SimEvent) -> None:
        ex = self.executors[event.target]
        ex.complete(event.payload.body)
        self._kick_executor(ex)
