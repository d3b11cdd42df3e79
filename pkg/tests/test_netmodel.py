import pytest
from hypothesis import given, strategies as st

from splitchain.netmodel import (
    NUM_REGIONS,
    BandwidthReport,
    DeadlockError,
    EventQueue,
    LatencyConfigError,
    LatencyMatrix,
    ProtocolClass,
    Region,
    TimeTravelError,
    bandwidth_load,
    message_count_per_block,
    message_latency,
    ms_to_us,
    trace_csv,
)


def test_default_matrix_shape_and_invariants():
    m = LatencyMatrix.default()
    assert len(m.regions) == NUM_REGIONS == 8
    for i in range(8):
        assert m.one_way_ms[i][i] == 2
        for j in range(8):
            assert m.one_way_ms[i][j] == m.one_way_ms[j][i]
            assert m.one_way_ms[i][i] <= m.one_way_ms[i][j]
    assert m.per_mb_ms == 8


def test_matrix_text_roundtrip(tmp_path):
    m = LatencyMatrix.default()
    path = tmp_path / "lat.ini"
    path.write_text(m.to_text())
    assert LatencyMatrix.from_file(path) == m


@pytest.mark.parametrize("rows", [
    [[0, 1], [2, 0]],
    [[5, 1], [1, 5]],
    [[0, -1], [-1, 0]],
    [[0, float("inf")], [float("inf"), 0]],
])
def test_matrix_rejects_bad_entries(rows):
    regions = (Region(0, "a"), Region(1, "b"))
    with pytest.raises(LatencyConfigError):
        LatencyMatrix(regions, tuple(tuple(float(v) for v in r) for r in rows), 0.0)


def test_matrix_rejects_wrong_region_count():
    text = LatencyMatrix.default().to_text().replace("us-west, ", "", 1)
    with pytest.raises(LatencyConfigError):
        LatencyMatrix.from_text(text)


def test_message_latency_examples():
    zero = LatencyMatrix.uniform(0, 0)
    assert message_latency(zero, 0, 1, 123.0, 7) == 7
    m = LatencyMatrix.uniform(50, 10)
    assert message_latency(m, 0, 3, 0.1, 0) == pytest.approx(51)
    default = LatencyMatrix.default()
    assert message_latency(default, 4, 4, 0, 0) == default.one_way_ms[4][4]


@given(st.integers(0, 7), st.integers(0, 7), st.floats(0, 10), st.floats(0, 1000))
def test_latency_at_least_processing(a, b, size, process):
    assert message_latency(LatencyMatrix.default(), a, b, size, process) >= process


def test_ms_to_us_rounds_up():
    assert ms_to_us(51.0) == 51_000
    assert ms_to_us(0.0001) == 1
    assert ms_to_us(2.0008) == 2001


def test_bandwidth_examples():
    assert bandwidth_load(1, 0.001, message_count_per_block(32, "quadratic")).load == pytest.approx(1.024)
    assert bandwidth_load(0, 5, 7).load == 0
    assert bandwidth_load(2, 0.5, 10).load == 10


def test_bandwidth_report_identity_enforced():
    with pytest.raises(ValueError):
        BandwidthReport(1.0, 1.0, 2, 3.0)


@given(st.floats(0, 100), st.floats(0, 100), st.integers(0, 10**6))
def test_bandwidth_identity(beta, b, eta):
    r = bandwidth_load(beta, b, eta)
    assert r.load == r.beta * r.b * r.eta


def test_message_counts():
    assert message_count_per_block(32, ProtocolClass.QUADRATIC) == 1024
    assert message_count_per_block(1024, ProtocolClass.N_LOG_N) == 10240
    assert message_count_per_block(1, "quadratic") == 1
    assert message_count_per_block(1, "n_log_n") == 1
    assert message_count_per_block(1, "linear_c", c=3) == 3
    assert message_count_per_block(10, "linear_c", c=3) == 30
    with pytest.raises(ValueError):
        message_count_per_block(0, "quadratic")


def test_queue_orders_by_time():
    q = EventQueue()
    q.schedule(5, "a")
    q.schedule(3, "b")
    assert q.pop().kind == "b"
    assert q.pop().kind == "a"


def test_queue_ties_break_by_insertion():
    q = EventQueue()
    for kind in "xyz":
        q.schedule(4, kind)
    assert [q.pop().kind for _ in range(3)] == list("xyz")


def test_queue_rejects_time_travel():
    q = EventQueue()
    q.schedule(10, "a")
    q.pop()
    with pytest.raises(TimeTravelError):
        q.schedule(9, "b")


def test_run_until_empty_queue_stop_true():
    q = EventQueue(start=17)
    assert q.run_until(lambda: True) == 17


def test_run_until_single_event():
    q = EventQueue()
    done = []
    q.schedule(291_000_000, "finish")
    assert q.run_until(lambda: bool(done), done.append) == 291_000_000


def test_run_until_deadlock():
    q = EventQueue()
    q.schedule(1, "a")
    with pytest.raises(DeadlockError):
        q.run_until(lambda: False)


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=50))
def test_time_never_decreases(times):
    q = EventQueue()
    for t in times:
        q.schedule(t, "e")
    seen = []
    q.run_until(lambda: not len(q), lambda e: seen.append((e.fire_at, e.seq)))
    assert seen == sorted(seen)


def _chain(q, log):
    # Each event spawns a follow-up until a fixed depth: a tiny deterministic model.
    def handle(e):
        log.append(e.trace_row())
        if e.payload < 5:
            q.schedule(q.now + 3 * e.payload + 1, "tick", e.target, payload=e.payload + 1)
    return handle


def test_identical_runs_identical_traces():
    traces = []
    for _ in range(2):
        q, log = EventQueue(), []
        q.schedule(0, "tick", "n0", payload=0)
        q.schedule(0, "tick", "n1", payload=2)
        end = q.run_until(lambda: not len(q), _chain(q, log))
        traces.append((end, log, trace_csv(q.trace)))
    assert traces[0] == traces[1]
    assert traces[0][2].splitlines()[0] == "fire_at_us,seq,event_kind,from,to,size_mb"
