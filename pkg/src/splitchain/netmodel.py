"""Network cost model and the deterministic event loop.

Simulated time is an integer count of microseconds.
"""
from __future__ import annotations

import configparser
import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

US_PER_MS = 1000
NUM_REGIONS = 8


class TimeTravelError(RuntimeError):
    pass


class DeadlockError(RuntimeError):
    pass


class LatencyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    id: int
    label: str

    def __post_init__(self):
        if not 0 <= self.id < NUM_REGIONS:
            raise ValueError(f"region id {self.id} outside [0, {NUM_REGIONS})")


@dataclass(frozen=True)
class LatencyMatrix:
    regions: tuple[Region, ...]
    one_way_ms: tuple[tuple[float, ...], ...]
    per_mb_ms: float = 8.0

    def __post_init__(self):
        k = len(self.regions)
        if len(self.one_way_ms) != k or any(len(row) != k for row in self.one_way_ms):
            raise LatencyConfigError(f"latency matrix must be {k}x{k}")
        for i in range(k):
            for j in range(k):
                v = self.one_way_ms[i][j]
                if not math.isfinite(v) or v < 0:
                    raise LatencyConfigError(f"entry [{i}][{j}] = {v} is not a finite nonnegative value")
                if v != self.one_way_ms[j][i]:
                    raise LatencyConfigError(f"matrix not symmetric at [{i}][{j}]")
                if self.one_way_ms[i][i] > v:
                    raise LatencyConfigError(f"diagonal [{i}][{i}] exceeds off-diagonal [{i}][{j}]")
        if not math.isfinite(self.per_mb_ms) or self.per_mb_ms < 0:
            raise LatencyConfigError("per_mb_ms must be finite and nonnegative")

    @classmethod
    def uniform(cls, one_way_ms: float = 0.0, per_mb_ms: float = 0.0) -> LatencyMatrix:
        regions = tuple(Region(i, f"r{i}") for i in range(NUM_REGIONS))
        rows = tuple(tuple(float(one_way_ms) for _ in regions) for _ in regions)
        return cls(regions, rows, per_mb_ms)

    @classmethod
    def default(cls) -> LatencyMatrix:
        text = resources.files("splitchain.data").joinpath("latency.ini").read_text()
        return cls.from_text(text)

    @classmethod
    def from_file(cls, path: str | Path) -> LatencyMatrix:
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> LatencyMatrix:
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
            labels = [s.strip() for s in parser["latency"]["regions"].split(",")]
            per_mb = parser["latency"].getfloat("per_mb_ms", fallback=8.0)
            rows_section = parser["one_way_ms"]
            rows = tuple(
                tuple(float(x) for x in rows_section[label].split(","))
                for label in labels
            )
        except (configparser.Error, KeyError, ValueError) as exc:
            raise LatencyConfigError(f"bad latency config: {exc}") from exc
        if len(labels) != NUM_REGIONS:
            raise LatencyConfigError(f"expected {NUM_REGIONS} regions, got {len(labels)}")
        regions = tuple(Region(i, label) for i, label in enumerate(labels))
        return cls(regions, rows, per_mb)

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        parser["latency"] = {
            "regions": ", ".join(r.label for r in self.regions),
            "per_mb_ms": repr(self.per_mb_ms),
        }
        parser["one_way_ms"] = {
            r.label: ", ".join(repr(v) for v in row)
            for r, row in zip(self.regions, self.one_way_ms)
        }
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def min_one_way_ms(self, src: int, dst: int) -> float:
        return self.one_way_ms[src][dst]


def _region_id(region: Region | int) -> int:
    return region.id if isinstance(region, Region) else int(region)


def message_latency(matrix: LatencyMatrix, src: Region | int, dst: Region | int,
                    size_mb: float, process_ms: float = 0.0) -> float:
    """Delivery-plus-processing delay in milliseconds: transmission time
    (fixed one-way latency plus per-MB cost) followed by processing."""
    if size_mb < 0 or process_ms < 0:
        raise ValueError("size and processing time must be nonnegative")
    one_way = matrix.one_way_ms[_region_id(src)][_region_id(dst)]
    return one_way + matrix.per_mb_ms * size_mb + process_ms


def ms_to_us(ms: float) -> int:
    # Round up so a delivery never lands before its modeled latency.
    return math.ceil(round(ms * US_PER_MS, 6))


@dataclass(frozen=True)
class BandwidthReport:
    beta: float
    b: float
    eta: int
    load: float

    def __post_init__(self):
        if self.load != self.beta * self.b * self.eta:
            raise ValueError("load must equal beta * b * eta")


def bandwidth_load(beta: float, b: float, eta: int) -> BandwidthReport:
    """Total consensus-committee bandwidth in MB/s for block rate ``beta``,
    message size ``b`` (MB) and ``eta`` messages per block."""
    if beta < 0 or b < 0 or eta < 0:
        raise ValueError("bandwidth inputs must be nonnegative")
    return BandwidthReport(beta, b, eta, beta * b * eta)


class ProtocolClass(str, Enum):
    QUADRATIC = "quadratic"
    N_LOG_N = "n_log_n"
    LINEAR_C = "linear_c"


def message_count_per_block(n_nodes: int, protocol_class: ProtocolClass | str,
                            c: int = 4) -> int:
    """Messages exchanged per block by a committee of ``n_nodes``."""
    if n_nodes < 1:
        raise ValueError("committee must contain at least one node")
    protocol_class = ProtocolClass(protocol_class)
    if protocol_class is ProtocolClass.QUADRATIC:
        return n_nodes * n_nodes
    if protocol_class is ProtocolClass.N_LOG_N:
        if n_nodes == 1:
            return 1
        return math.ceil(n_nodes * math.log2(n_nodes))
    return c * n_nodes


@dataclass(frozen=True)
class SimEvent:
    fire_at: int
    seq: int
    kind: str
    target: Any
    src: Any = None
    size_mb: float = 0.0
    payload: Any = field(default=None, compare=False)

    def trace_row(self) -> tuple:
        return (self.fire_at, self.seq, self.kind,
                "" if self.src is None else self.src,
                "" if self.target is None else self.target,
                f"{self.size_mb:.6f}")


TRACE_HEADER = ("fire_at_us", "seq", "event_kind", "from", "to", "size_mb")


class EventQueue:
    """Priority queue of :class:`SimEvent` ordered by ``(fire_at, seq)``."""

    def __init__(self, start: int = 0, record_trace: bool = True):
        self.now = start
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._seq = 0
        self.record_trace = record_trace
        self.trace: list[SimEvent] = []

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, fire_at: int, kind: str, target: Any = None, src: Any = None,
                 size_mb: float = 0.0, payload: Any = None) -> SimEvent:
        if fire_at < self.now:
            raise TimeTravelError(f"cannot schedule at {fire_at} before now={self.now}")
        event = SimEvent(int(fire_at), self._seq, kind, target, src, size_mb, payload)
        self._seq += 1
        heapq.heappush(self._heap, (event.fire_at, event.seq, event))
        return event

    def pop(self) -> SimEvent:
        _, _, event = heapq.heappop(self._heap)
        self.now = event.fire_at
        if self.record_trace:
            self.trace.append(event)
        return event

    def run_until(self, stop: Callable[[], bool],
                  handler: Callable[[SimEvent], None] = lambda e: None) -> int:
        """Dispatch events in order until ``stop()`` holds; return the time."""
        while not stop():
            if not self._heap:
                raise DeadlockError(f"event queue drained at t={self.now} before stop condition")
            handler(self.pop())
        return self.now


def write_trace_csv(events: Iterable[SimEvent], out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for event in events:
        writer.writerow(event.trace_row())


def trace_csv(events: Sequence[SimEvent]) -> str:
    buf = io.StringIO()
    write_trace_csv(events, buf)
    return buf.getvalue()
