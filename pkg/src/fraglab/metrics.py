"""Fragmentation and modeled-throughput measurement.

A fragment is a maximal physically-contiguous run within an object's layout;
a contiguous object has exactly 1.  Throughput figures here are modeled from
the volume's seek/band cost model, never wall clock, and are labeled as such
in the harness output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .store import ObjectRecord, ObjectStore


def fragments_of(record: "ObjectRecord") -> int:
    """Maximal runs of physically adjacent clusters, in logical order."""
    extents = record.extents
    if not extents:
        return 0
    count = 1
    prev_end = extents[0].end
    for ext in extents[1:]:
        if ext.offset != prev_end:
            count += 1
        prev_end = ext.end
    return count


def nearest_rank(sorted_values: list[int], percentile: float) -> int:
    """Nearest-rank percentile over pre-sorted values; 0 for an empty list."""
    if not sorted_values:
        return 0
    rank = math.ceil(percentile / 100.0 * len(sorted_values))
    return sorted_values[max(rank, 1) - 1]


@dataclass
class FragReport:
    """One measurement row: layout quality at a given storage age."""

    storage_age: float
    n_objects: int
    frag_mean: float
    frag_p50: int
    frag_p99: int
    frag_max: int
    free_runs: dict[int, int]          # run length -> count, committed free only
    free_runs_count: int
    free_bytes: int
    est_read_throughput: float         # modeled bytes/second over all live objects
    est_write_throughput: float        # modeled bytes/second over the last interval
    policy: str
    seed: int
    config_echo: dict = field(default_factory=dict)
    reads: dict | None = None          # observed read stats, only when reads ran

    def to_dict(self) -> dict:
        d = {
            "storage_age": self.storage_age,
            "n_objects": self.n_objects,
            "frag_mean": self.frag_mean,
            "frag_p50": self.frag_p50,
            "frag_p99": self.frag_p99,
            "frag_max": self.frag_max,
            "free_runs": {str(k): v for k, v in sorted(self.free_runs.items())},
            "free_runs_count": self.free_runs_count,
            "free_bytes": self.free_bytes,
            "est_read_throughput": self.est_read_throughput,
            "est_write_throughput": self.est_write_throughput,
            "policy": self.policy,
            "seed": self.seed,
            "config_echo": self.config_echo,
        }
        if self.reads is not None:
            d["reads"] = self.reads
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FragReport":
        return cls(
            storage_age=d["storage_age"],
            n_objects=d["n_objects"],
            frag_mean=d["frag_mean"],
            frag_p50=d["frag_p50"],
            frag_p99=d["frag_p99"],
            frag_max=d["frag_max"],
            free_runs={int(k): v for k, v in d["free_runs"].items()},
            free_runs_count=d["free_runs_count"],
            free_bytes=d["free_bytes"],
            est_read_throughput=d["est_read_throughput"],
            est_write_throughput=d["est_write_throughput"],
            policy=d["policy"],
            seed=d["seed"],
            config_echo=d.get("config_echo", {}),
            reads=d.get("reads"),
        )


def build_report(
    store: "ObjectStore",
    *,
    interval_write_bytes: int = 0,
    interval_model_seconds: float = 0.0,
    seed: int = 0,
    config_echo: dict | None = None,
    reads: dict | None = None,
) -> FragReport:
    """Aggregate fragment statistics and modeled throughput for the store now.

    Read throughput is total live bytes over the modeled cost of reading
    every live object once; write throughput is the supplied interval's
    bytes over its modeled seconds (0 when the interval is empty).
    """
    volume = store.volume
    frags = sorted(fragments_of(rec) for rec in store.records())
    n = len(frags)
    total_bytes = 0
    total_read_seconds = 0.0
    for rec in store.records():
        total_bytes += rec.size
        total_read_seconds += volume.read_cost(rec.extents, store.cost_model)
    hist = volume.free_extent_histogram()
    clock = store.clock
    return FragReport(
        storage_age=clock.age if clock.live_bytes > 0 else 0.0,
        n_objects=n,
        frag_mean=(sum(frags) / n) if n else 0.0,
        frag_p50=nearest_rank(frags, 50),
        frag_p99=nearest_rank(frags, 99),
        frag_max=frags[-1] if n else 0,
        free_runs=hist,
        free_runs_count=sum(hist.values()),
        free_bytes=volume.free_clusters * volume.cluster_size,
        est_read_throughput=(total_bytes / total_read_seconds) if total_read_seconds > 0 else 0.0,
        est_write_throughput=(
            interval_write_bytes / interval_model_seconds if interval_model_seconds > 0 else 0.0
        ),
        policy=store.config.policy.kind,
        seed=seed,
        config_echo=dict(config_echo or {}),
        reads=reads,
    )
