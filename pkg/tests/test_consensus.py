from fractions import Fraction

import pytest

from splitchain import harness
from splitchain.consensus import (
    VERIFY_CHARGE_US,
    DuplicateVote,
    EmptyCommittee,
    Network,
    Phase,
    Vote,
    WrongProposer,
    next_proposer,
    percentile_bound_us,
    propose_block,
    tally,
    validate_proposal,
)
from splitchain.execution import ToyState
from splitchain.model import Block, Mode, NodeSpec, PerfClass, Role, Workload
from splitchain.netmodel import LatencyMatrix, message_latency, ms_to_us


def committee(n, perf=PerfClass.SLOW, role=Role.BOTH):
    return [NodeSpec(f"n{i:02d}", role, perf, i % 8) for i in range(n)]


def test_next_proposer_rotation():
    c = committee(30)
    assert next_proposer(1, c) == "n00"
    assert next_proposer(31, c) == "n00"
    assert next_proposer(5, committee(1)) == "n00"
    with pytest.raises(EmptyCommittee):
        next_proposer(1, [])


def test_proposer_fairness():
    c = committee(7)
    counts = {}
    for h in range(1, 3 * 7 + 1):
        p = next_proposer(h, c)
        counts[p] = counts.get(p, 0) + 1
    assert set(counts.values()) == {3}


def test_propose_separated_has_no_commitment():
    c = committee(4)
    block, charge = propose_block(c[0], 1, Workload(), Mode.SEPARATED, ToyState(), committee=c)
    assert block.state_commitment is None
    assert charge == 0
    assert 240 <= block.tx_count <= 480


def test_propose_combined_charges_execution():
    c = committee(4)
    wl = Workload()
    wl._sizes = [400]
    block, charge = propose_block(c[0], 1, wl, Mode.COMBINED, ToyState(), committee=c)
    assert charge == 4_000_000
    assert block.state_commitment is not None


def test_propose_wrong_proposer():
    c = committee(4)
    with pytest.raises(WrongProposer):
        propose_block(c[1], 1, Workload(), Mode.SEPARATED, ToyState(), committee=c)


def test_block_sequence_is_seeded():
    c = committee(4)
    a = [propose_block(c[(h - 1) % 4], h, Workload(5), Mode.SEPARATED, ToyState(h - 1))[0]
         for h in range(1, 6)]
    b = [propose_block(c[(h - 1) % 4], h, Workload(5), Mode.SEPARATED, ToyState(h - 1))[0]
         for h in range(1, 6)]
    assert a == b


def _block(t, mode):
    wl = Workload()
    wl._sizes = [t]
    node = NodeSpec("p", Role.BOTH, PerfClass.SLOW, 0)
    return propose_block(node, 1, wl, mode, ToyState())[0]


def test_validate_separated():
    v = NodeSpec("v", Role.CONSENSUS, PerfClass.SLOW, 1)
    assert validate_proposal(v, _block(300, Mode.SEPARATED), Mode.SEPARATED, ToyState()) == (True, VERIFY_CHARGE_US)


def test_validate_combined_slow():
    v = NodeSpec("v", Role.BOTH, PerfClass.SLOW, 1)
    assert validate_proposal(v, _block(400, Mode.COMBINED), Mode.COMBINED, ToyState()) == (True, 4_000_000)


def test_validate_rejects_tampered_commitment():
    v = NodeSpec("v", Role.BOTH, PerfClass.FAST, 1)
    b = _block(250, Mode.COMBINED)
    tampered = Block(b.height, b.proposer, b.tx_digests, b.parent, "00" * 32)
    ok, _ = validate_proposal(v, tampered, Mode.COMBINED, ToyState())
    assert not ok


def _votes(k, phase=Phase.PRECOMMIT):
    return [Vote(f"n{i:02d}", "blk", phase, 1) for i in range(k)]


@pytest.mark.parametrize("k,finalized", [(21, True), (20, False), (30, True)])
def test_tally_quorum(k, finalized):
    stakes = {n.id: 1 for n in committee(30)}
    decision = tally(_votes(k), stakes, Phase.PRECOMMIT)
    assert decision.finalized is finalized
    assert decision.supporting_stake_fraction == Fraction(k, 30)


def test_tally_duplicate_vote():
    stakes = {n.id: 1 for n in committee(30)}
    with pytest.raises(DuplicateVote):
        tally(_votes(3) + _votes(1), stakes)


def test_tally_mixed_blocks_rejected():
    stakes = {n.id: 1 for n in committee(3)}
    votes = _votes(2) + [Vote("n02", "other", Phase.PRECOMMIT, 1)]
    with pytest.raises(ValueError):
        tally(votes, stakes)


def test_tally_weighted_stake():
    stakes = {"a": 5, "b": 1, "c": 1}
    assert tally([Vote("a", "x", Phase.PREVOTE, 1)], stakes).finalized


def test_percentile_bound_table():
    fleet = harness.build_experiment("II").fleet
    # Fastest >2/3 of 32 equal stakes needs 22 nodes: 2 fast, 10 medium, 10 slow.
    assert percentile_bound_us(fleet, 400) == 4_000_000
    fast_heavy = committee(10, PerfClass.FAST) + committee(2, PerfClass.SLOW)
    assert percentile_bound_us(fast_heavy, 400) == 1_000_000


def test_zero_latency_separated_round():
    c = committee(4, role=Role.CONSENSUS)
    ex = [NodeSpec("x", Role.EXECUTION, PerfClass.FAST, 0)]
    net = Network(c, Mode.SEPARATED, Workload(), LatencyMatrix.uniform(0, 0), 3, executors=ex)
    _, latency = net.consensus_round(1)
    assert latency == VERIFY_CHARGE_US


def test_combined_round_latency_bounds():
    c = committee(4)
    net = Network(c, Mode.COMBINED, Workload(), LatencyMatrix.uniform(0, 0), 1)
    block, latency = net.consensus_round(1)
    # Proposer executes, then validators re-execute in parallel.
    assert latency == 2 * block.tx_count * 10_000


def test_round_requires_previous_height():
    net = Network(committee(4), Mode.COMBINED, Workload(), LatencyMatrix.uniform(0, 0), 3)
    with pytest.raises(RuntimeError):
        net.consensus_round(2)


@pytest.fixture(scope="module")
def runs():
    return {i: harness.run(harness.build_experiment(i)) for i in ("I", "II")}


@pytest.mark.parametrize("exp", ["I", "II"])
def test_safety_single_chain(runs, exp):
    net = runs[exp].network
    final = [net.finalized[h].digest for h in range(1, net.blocks + 1)]
    for node in net.nodes.values():
        assert node.chain == final[:len(node.chain)]
        assert len(node.chain) == net.blocks
    for h in range(2, net.blocks + 1):
        assert net.finalized[h].parent == net.finalized[h - 1].digest


@pytest.mark.parametrize("exp", ["I", "II"])
def test_every_finalization_strictly_above_two_thirds(runs, exp):
    for d in runs[exp].network.decisions.values():
        assert d.finalized and d.supporting_stake_fraction > Fraction(2, 3)


def test_mode_contract_no_execution_in_separated(runs):
    for node in runs["I"].network.nodes.values():
        assert node.execution_us == 0
        assert node.verification_us in (19 * VERIFY_CHARGE_US, 20 * VERIFY_CHARGE_US)


def test_blocks_carry_commitments_only_in_combined(runs):
    assert all(b.state_commitment is None for b in runs["I"].network.finalized.values())
    assert all(b.state_commitment for b in runs["II"].network.finalized.values())


def test_combined_mode_percentile_bound(runs):
    net = runs["II"].network
    for h, rec in net.rounds.items():
        assert rec.latency_us >= percentile_bound_us(net.committee, rec.tx_count)


@pytest.mark.parametrize("exp", ["I", "II"])
def test_causality(runs, exp):
    net = runs[exp].network
    for e in net.trace:
        if e.src is None or e.src == e.target or e.kind in ("validated", "executed", "round_start"):
            continue
        a, b = net.specs[e.src].region, net.specs[e.target].region
        assert e.fire_at >= e.payload.sent_at + ms_to_us(net.matrix.min_one_way_ms(a, b))
        assert e.fire_at == e.payload.sent_at + ms_to_us(message_latency(net.matrix, a, b, e.size_mb))


def test_same_block_sequence_across_modes(runs):
    seq_i = [b.tx_digests for b in runs["I"].network.finalized.values()]
    seq_ii = [b.tx_digests for b in runs["II"].network.finalized.values()]
    assert seq_i == seq_ii
