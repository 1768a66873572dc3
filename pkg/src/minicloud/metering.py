"""CPU metering: sample ingestion, windowed utilization reports, sizing
recommendations, and the seeded synthetic load profiles per workload class."""

from __future__ import annotations

import csv
import io
import math
import random
from collections import deque
from dataclasses import dataclass

from .core import WorkloadClass
from .errors import InsufficientData, UnknownInstance


@dataclass(frozen=True)
class MeterSample:
    instance_id: str
    at: float
    cpu_pct: float  # aggregate over the instance's allocated vcpus

    def __post_init__(self):
        if not 0.0 <= self.cpu_pct <= 100.0:
            raise ValueError("cpu_pct must be within 0..100")


def round2(value: float) -> float:
    """Round-half-even to 2 decimals; the single rounding rule used by
    both reports and their recomputation oracles."""
    return round(value, 2)


def percentile95(values: list[float]) -> float:
    ordered = sorted(values)
    index = max(0, math.ceil(0.95 * len(ordered)) - 1)
    return ordered[index]


class MeteringService:
    def __init__(self, retention: int = 100_000, min_samples: int = 100,
                 dev_threshold: float = 0.60):
        self.retention = retention
        self.min_samples = min_samples
        self.dev_threshold = dev_threshold
        self.samples: deque[MeterSample] = deque(maxlen=retention)

    def ingest(self, sample: MeterSample, known_instance: bool = True) -> None:
        if not known_instance:
            raise UnknownInstance(f"no instance {sample.instance_id}")
        self.samples.append(sample)

    def window_samples(self, start: float, end: float) -> list[MeterSample]:
        return [s for s in self.samples if start <= s.at <= end]

    def report(self, start: float, end: float,
               classes: dict[str, WorkloadClass]) -> dict:
        """Aggregate utilization over [start, end].

        `classes` maps instance id -> workload class; samples for unknown
        instances are skipped.
        """
        rows: dict[str, list[float]] = {}
        for s in self.window_samples(start, end):
            if s.instance_id in classes:
                rows.setdefault(s.instance_id, []).append(s.cpu_pct)
        per_instance = []
        per_class_values: dict[str, list[float]] = {}
        for instance_id in sorted(rows):
            values = rows[instance_id]
            cls = classes[instance_id].value
            per_class_values.setdefault(cls, []).extend(values)
            per_instance.append({
                "instance_id": instance_id,
                "workload_class": cls,
                "mean_pct": round2(sum(values) / len(values)),
                "p95_pct": round2(percentile95(values)),
                "samples": len(values),
            })
        per_class = {}
        for cls, values in sorted(per_class_values.items()):
            per_class[cls] = {
                "mean_pct": round2(sum(values) / len(values)),
                "p95_pct": round2(percentile95(values)),
                "sample_count": len(values),
            }
        return {
            "window": {"start": start, "end": end},
            "per_class": per_class,
            "per_instance": per_instance,
        }

    def recommend_vcpu(self, workload_class: WorkloadClass, mean_pct: float,
                       p95_pct: float, allocated_vcpu: int, sample_count: int) -> int:
        """Sizing rule: low-utilization development instances get a single
        vcpu; service instances get ceil of p95 demand, at least two."""
        if sample_count < self.min_samples:
            raise InsufficientData(
                f"need {self.min_samples} samples, have {sample_count}"
            )
        demand_vcpu = (p95_pct / 100.0) * allocated_vcpu
        if workload_class == WorkloadClass.DEVELOPMENT:
            if mean_pct < self.dev_threshold * 100.0:
                return 1
            return max(1, math.ceil(demand_vcpu))
        return max(2, math.ceil(demand_vcpu))

    def export_csv(self, report: dict) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["class", "instance_id", "mean_pct", "p95_pct", "samples"])
        for row in report["per_instance"]:
            writer.writerow([
                row["workload_class"], row["instance_id"],
                row["mean_pct"], row["p95_pct"], row["samples"],
            ])
        return out.getvalue()

    def plot_series(self, report: dict) -> dict:
        """Chart-ready series: one entry per workload class."""
        return {
            "series": [
                {"label": cls, "mean_pct": stats["mean_pct"],
                 "p95_pct": stats["p95_pct"], "samples": stats["sample_count"]}
                for cls, stats in report["per_class"].items()
            ]
        }

    def state_dict(self) -> dict:
        return {
            "retention": self.retention,
            "min_samples": self.min_samples,
            "dev_threshold": self.dev_threshold,
            "samples": [[s.instance_id, s.at, s.cpu_pct] for s in self.samples],
        }

    def load_state(self, state: dict) -> None:
        self.retention = state["retention"]
        self.min_samples = state["min_samples"]
        self.dev_threshold = state["dev_threshold"]
        self.samples = deque(
            (MeterSample(i, at, pct) for i, at, pct in state["samples"]),
            maxlen=self.retention,
        )


def synthetic_load(instance_id: str, workload_class: WorkloadClass, rng: random.Random,
                   start: float, interval: float, count: int) -> list[MeterSample]:
    """Seeded per-class CPU profiles.

    service: bursty on-off (high plateaus with idle valleys);
    development: low steady utilization with mild noise.
    """
    samples = []
    bursting = False
    for i in range(count):
        at = start + i * interval
        if workload_class == WorkloadClass.SERVICE:
            if rng.random() < 0.25:
                bursting = not bursting
            pct = rng.uniform(55.0, 95.0) if bursting else rng.uniform(5.0, 25.0)
        else:
            pct = min(35.0, max(1.0, rng.gauss(14.0, 5.0)))
        samples.append(MeterSample(instance_id=instance_id, at=at, cpu_pct=pct))
    return samples
