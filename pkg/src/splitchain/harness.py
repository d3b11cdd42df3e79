"""The three reference experiments: fleets, runs and the comparison report."""
from __future__ import annotations

import configparser
import csv
import io
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .consensus import Network
from .execution import ExecutionReceipt
from .model import (PER_TX_US, REFERENCE_BLOCKS, REFERENCE_SEED, Mode, NodeSpec,
                    PerfClass, Role, Workload)
from .netmodel import (NUM_REGIONS, BandwidthReport, LatencyMatrix, ProtocolClass,
                       bandwidth_load, message_count_per_block)

EXPERIMENT_IDS = ("I", "II", "III")
# Effective intra-node concurrency of execution nodes; 2.5 ms / 4 ~ 0.63 ms per tx.
DEFAULT_PARALLELISM = 4

# Published processing time (s) and throughput (tx/s) for comparison rows.
REFERENCE_RESULTS = {
    "I": (5.14, 1555.4),
    "II": (291.0, 27.5),
    "III": (293.0, 27.3),
}
REFERENCE_SPEEDUP = 56

ASSUMPTIONS = (
    "latency matrix is a representative placeholder; absolute times are not comparable",
    "per-MB transmission cost defaults to 8 ms/MB (~1 Gbps)",
    "combined-mode proposers execute the block before broadcasting it",
    "execution-node parallelism reconciles the separated-mode per-tx rate",
)

_FLEETS = {
    "I": ((PerfClass.SLOW, 20, Role.CONSENSUS), (PerfClass.MEDIUM, 10, Role.CONSENSUS),
          (PerfClass.FAST, 2, Role.EXECUTION)),
    "II": ((PerfClass.SLOW, 20, Role.BOTH), (PerfClass.MEDIUM, 10, Role.BOTH),
           (PerfClass.FAST, 2, Role.BOTH)),
    "III": ((PerfClass.SLOW, 32, Role.BOTH),),
}
_MODES = {"I": Mode.SEPARATED, "II": Mode.COMBINED, "III": Mode.COMBINED}


class InvalidOverride(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    fleet: tuple[NodeSpec, ...]
    mode: Mode
    blocks: int = REFERENCE_BLOCKS
    seed: int = REFERENCE_SEED
    matrix: LatencyMatrix = field(default_factory=LatencyMatrix.default, repr=False)
    parallelism: int = DEFAULT_PARALLELISM
    per_tx_us: Mapping[PerfClass, int] = field(default_factory=lambda: dict(PER_TX_US))

    @property
    def committee(self) -> list[NodeSpec]:
        return [n for n in self.fleet if n.role.orders]

    @property
    def executors(self) -> list[NodeSpec]:
        return [n for n in self.fleet if n.role is Role.EXECUTION]

    def validate(self) -> None:
        if not self.committee:
            raise InvalidOverride("fleet has no consensus nodes")
        if self.blocks < 1:
            raise InvalidOverride(f"blocks must be >= 1, got {self.blocks}")
        if self.parallelism < 1:
            raise InvalidOverride(f"parallelism must be >= 1, got {self.parallelism}")
        if self.mode is Mode.SEPARATED and not self.executors:
            raise InvalidOverride("separated mode needs at least one execution node")
        if self.mode is Mode.COMBINED and self.executors:
            raise InvalidOverride("combined mode has no execution-only nodes")
        if any(v <= 0 for v in self.per_tx_us.values()):
            raise InvalidOverride("per-transaction times must be positive")


def make_fleet(groups: Sequence[tuple[PerfClass, int, Role]]) -> tuple[NodeSpec, ...]:
    """Instantiate node groups in order, assigning regions round-robin."""
    fleet = []
    for perf_class, count, role in groups:
        for i in range(count):
            region = len(fleet) % NUM_REGIONS
            fleet.append(NodeSpec(f"{perf_class.value}-{i:02d}", role, perf_class, region))
    return tuple(fleet)


def build_experiment(id: str, counts: Mapping[str, int] | None = None,
                     **overrides) -> ExperimentConfig:
    """Fleet and mode for experiment ``id``; ``counts`` replaces per-class node
    counts, other keyword overrides replace config fields."""
    if id not in _FLEETS:
        raise InvalidOverride(f"unknown experiment {id!r}; expected one of {EXPERIMENT_IDS}")
    groups = list(_FLEETS[id])
    if counts:
        role = groups[0][2] if id != "I" else None
        new_groups = []
        for cls in PerfClass:
            n = counts.get(cls.value)
            if n is None:
                n = next((c for pc, c, _ in groups if pc is cls), 0)
            if n < 0:
                raise InvalidOverride(f"negative count for {cls.value}")
            r = role or (Role.EXECUTION if cls is PerfClass.FAST else Role.CONSENSUS)
            new_groups.append((cls, n, r))
        groups = new_groups
    unknown = set(overrides) - {"blocks", "seed", "matrix", "parallelism", "per_tx_us"}
    if unknown:
        raise InvalidOverride(f"unknown override(s): {sorted(unknown)}")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "per_tx_us" in overrides:
        overrides["per_tx_us"] = {**PER_TX_US, **{PerfClass(k): v for k, v in overrides["per_tx_us"].items()}}
    config = ExperimentConfig(id, make_fleet(groups), _MODES[id], **overrides)
    config.validate()
    return config


@dataclass
class RunMetrics:
    experiment: str
    mode: Mode
    seed: int
    total_tx: int
    processing_time_us: int
    rounds: list[dict]
    bandwidth: BandwidthReport
    messages_per_block: float
    receipts: list[ExecutionReceipt] = field(default_factory=list)
    network: Network | None = field(default=None, repr=False, compare=False)

    @property
    def processing_time_s(self) -> float:
        return self.processing_time_us / 1e6

    @property
    def throughput_tps(self) -> float:
        return self.total_tx / self.processing_time_s

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "mode": self.mode.value,
            "seed": self.seed,
            "total_tx": self.total_tx,
            "processing_time_s": self.processing_time_s,
            "throughput_tps": round(self.throughput_tps, 3),
            "bandwidth": {
                "beta_blocks_per_s": round(self.bandwidth.beta, 6),
                "b_mb": round(self.bandwidth.b, 9),
                "eta_quadratic": self.bandwidth.eta,
                "load_mb_per_s": round(self.bandwidth.load, 6),
                "messages_per_block_observed": round(self.messages_per_block, 3),
            },
            "rounds": self.rounds,
        }


def run(config: ExperimentConfig, record_trace: bool = True) -> RunMetrics:
    """Simulate ``config`` to completion."""
    config.validate()
    workload = Workload(config.seed)
    net = Network(config.committee, config.mode, workload, config.matrix, config.blocks,
                  executors=config.executors, parallelism=config.parallelism,
                  per_tx_us=config.per_tx_us, record_trace=record_trace)
    net.run()
    start = net.rounds[1].propose_time
    last_final = net.rounds[config.blocks].finalize_time
    receipts: list[ExecutionReceipt] = []
    if config.mode is Mode.SEPARATED:
        for h in range(1, config.blocks + 1):
            per_height = [r for e in net.executors.values() for r in e.receipts if r.height == h]
            receipts.append(min(per_height, key=lambda r: (r.completed_at, r.executor)))
        end = max(r.completed_at for r in receipts)
    else:
        end = last_final
    consensus_span_s = (last_final - start) / 1e6
    msg_size = net.bytes_sent_mb / net.messages_sent if net.messages_sent else 0.0
    bandwidth = bandwidth_load(config.blocks / consensus_span_s if consensus_span_s else 0.0,
                               msg_size,
                               message_count_per_block(len(config.committee), ProtocolClass.QUADRATIC))
    return RunMetrics(
        experiment=config.id,
        mode=config.mode,
        seed=config.seed,
        total_tx=sum(workload.sizes(config.blocks)),
        processing_time_us=end - start,
        rounds=[net.rounds[h].as_dict() for h in range(1, config.blocks + 1)],
        bandwidth=bandwidth,
        messages_per_block=net.messages_sent / config.blocks,
        receipts=receipts,
        network=net,
    )


def compute_power_ratio(a: ExperimentConfig, b: ExperimentConfig) -> Fraction:
    """Aggregate compute power of fleet ``a`` over fleet ``b``, in slow-node units."""
    pa = sum(n.perf_class.power for n in a.fleet)
    pb = sum(n.perf_class.power for n in b.fleet)
    if not pa or not pb:
        raise ValueError("fleets must be nonempty")
    return Fraction(pa, pb)


def _ratios(metrics: Sequence[RunMetrics]) -> list[dict]:
    out = []
    for i, a in enumerate(metrics):
        for b in metrics[i + 1:]:
            row = {
                "pair": f"{a.experiment}/{b.experiment}",
                "throughput_ratio": round(a.throughput_tps / b.throughput_tps, 4),
                "relative_difference": round(abs(a.throughput_tps - b.throughput_tps)
                                             / b.throughput_tps, 6),
            }
            ref_a, ref_b = REFERENCE_RESULTS.get(a.experiment), REFERENCE_RESULTS.get(b.experiment)
            if ref_a and ref_b:
                row["reference_ratio"] = round(ref_a[1] / ref_b[1], 4)
            if (a.experiment, b.experiment) == ("I", "II"):
                row["reference_ratio_quoted"] = REFERENCE_SPEEDUP
            out.append(row)
    return out


def report_data(metrics: Sequence[RunMetrics]) -> dict:
    if not metrics:
        raise ValueError("report needs at least one run")
    runs = []
    for m in metrics:
        row = m.as_dict()
        ref = REFERENCE_RESULTS.get(m.experiment)
        if ref:
            row["reference_processing_time_s"], row["reference_throughput_tps"] = ref
        runs.append(row)
    return {
        "calibration_seed": metrics[0].seed,
        "runs": runs,
        "ratios": _ratios(metrics) if len(metrics) > 1 else [],
        "assumptions": list(ASSUMPTIONS),
    }


def report(metrics: Sequence[RunMetrics], fmt: str = "json") -> str:
    """Render the comparison document as ``json``, ``csv`` or ``table``."""
    data = report_data(metrics)
    if fmt == "json":
        return json.dumps(data, indent=2) + "\n"
    cols = ("experiment", "mode", "total_tx", "processing_time_s", "throughput_tps",
            "reference_processing_time_s", "reference_throughput_tps")
    rows = [[r.get(c, "") for c in cols] for r in data["runs"]]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        w.writerows(rows)
        if data["ratios"]:
            w.writerow([])
            w.writerow(("pair", "throughput_ratio", "reference_ratio"))
            for r in data["ratios"]:
                w.writerow((r["pair"], r["throughput_ratio"], r.get("reference_ratio", "")))
        return buf.getvalue()
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    text = [[str(c) for c in cols]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in text) for i in range(len(cols))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in text]
    for r in data["ratios"]:
        ref = r.get("reference_ratio_quoted", r.get("reference_ratio", "-"))
        lines.append(f"{r['pair']:>8}: throughput ratio {r['throughput_ratio']:.2f}"
                     f" (reference {ref})")
    for m in metrics:
        bw = m.bandwidth
        lines.append(f"{m.experiment:>8}: B = {bw.beta:.3f}/s * {bw.b:.6f} MB * {bw.eta}"
                     f" = {bw.load:.4f} MB/s")
    lines.append(f"calibration seed: {data['calibration_seed']}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def load_config_file(path: str | Path) -> dict:
    """Read run settings from an INI file.

    Sections: ``[run]`` (seed, blocks, parallelism), ``[fleet]`` (slow,
    medium, fast counts), ``[per_tx_us]`` and optionally ``[latency]`` with
    ``[one_way_ms]`` in the latency-matrix format.
    """
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    parser.read_string(text)
    out: dict = {}
    if parser.has_section("run"):
        sec = parser["run"]
        for key in ("seed", "blocks", "parallelism"):
            if key in sec:
                out[key] = sec.getint(key)
    if parser.has_section("fleet"):
        out["counts"] = {k: int(v) for k, v in parser["fleet"].items()}
    if parser.has_section("per_tx_us"):
        out["per_tx_us"] = {k: int(v) for k, v in parser["per_tx_us"].items()}
    if parser.has_section("latency"):
        out["matrix"] = LatencyMatrix.from_text(text)
    return out


def trace_paths(path: str | Path, ids: Sequence[str]) -> dict[str, Path]:
    path = Path(path)
    if len(ids) == 1:
        return {ids[0]: path}
    return {i: path.with_name(f"{path.stem}.{i}{path.suffix}") for i in ids}


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    new = replace(config, **{k: v for k, v in kw.items() if v is not None})
    new.validate()
    return new
