"""Synthetic get/put workloads clocked by storage age.

The canonical experiment is: bulk load n objects onto a clean volume, then
repeatedly pick a live object uniformly at random and replace it with a
safe write (optionally interleaving uniform-random reads), measuring
fragmentation at a fixed schedule of storage ages.

Randomness comes from the package's own xorshift64* stream.  Bulk load and
aging use independently derived streams, and each iteration draws in a fixed
order (victim, then size, then the read gate and reader when reads are on),
so a (spec, seed) pair replays byte-identically anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InfeasibleSpecError, NoSpaceError, UsageError
from .metrics import FragReport, build_report
from .rng import Xorshift64Star, derive_seed
from .store import AgeClock, ObjectStore

_BULK_STREAM = 0
_AGING_STREAM = 1


@dataclass(frozen=True)
class SizeDist:
    """Object-size distribution: constant, or uniform around the same mean."""

    kind: str = "constant"   # "constant" | "uniform"
    mean: int = 1 << 20      # bytes
    half_width: int = 0      # uniform only: draw from [mean-hw, mean+hw]

    def validate(self) -> None:
        if self.kind not in ("constant", "uniform"):
            raise UsageError(f"unknown size distribution {self.kind!r}")
        if self.mean <= 0:
            raise UsageError("size distribution mean must be > 0")
        if not 0 <= self.half_width < self.mean:
            raise UsageError("half_width must satisfy 0 <= half_width < mean")


def sample_size(dist: SizeDist, rng: Xorshift64Star) -> int:
    """One size draw in bytes; constant distributions consume no randomness."""
    if dist.kind == "constant":
        return dist.mean
    return rng.randint(dist.mean - dist.half_width, dist.mean + dist.half_width)


@dataclass
class WorkloadSpec:
    n_objects: int
    size_dist: SizeDist
    target_age: float
    seed: int = 0
    read_fraction: float = 0.0
    measurement_ages: list[float] = field(default_factory=list)

    def validate(self) -> None:
        if self.n_objects < 1:
            raise UsageError("n_objects must be >= 1")
        if self.target_age < 0:
            raise UsageError("target_age must be >= 0")
        if not 0.0 <= self.read_fraction < 1.0:
            raise UsageError("read_fraction must be in [0, 1)")
        self.size_dist.validate()
        for age in self.measurement_ages:
            if age < 0 or age > self.target_age:
                raise UsageError("measurement ages must lie in [0, target_age]")
        if sorted(self.measurement_ages) != list(self.measurement_ages):
            raise UsageError("measurement ages must be sorted ascending")


def storage_age(clock: AgeClock) -> float:
    """Bytes ever written divided by bytes live; raises with no live bytes."""
    return clock.age


def bulk_load(store: ObjectStore, spec: WorkloadSpec) -> None:
    """Populate an empty store; the result defines storage age 0."""
    spec.validate()
    if len(store) != 0:
        raise UsageError("bulk_load requires an empty store")
    rng = Xorshift64Star(derive_seed(spec.seed, _BULK_STREAM))
    sizes = [sample_size(spec.size_dist, rng) for _ in range(spec.n_objects)]
    cs = store.volume.cluster_size
    required = sum(-(-s // cs) for s in sizes)
    available = store.volume.total_clusters
    if required > available:
        raise InfeasibleSpecError(
            f"bulk load needs {required} clusters but the volume has {available}",
            required_clusters=required,
            available_clusters=available,
        )
    for oid, size in enumerate(sizes):
        try:
            store.put_new(oid, size)
        except NoSpaceError as exc:
            raise InfeasibleSpecError(
                f"bulk load ran out of space at object {oid} of {spec.n_objects}"
                f" (policy {store.config.policy.kind}): {exc}",
                required_clusters=required,
                available_clusters=available,
            ) from exc
    store.clock.reset_turnover()


class _ReadStats:
    __slots__ = ("count", "bytes", "seconds")

    def __init__(self):
        self.count = 0
        self.bytes = 0
        self.seconds = 0.0

    def add(self, nbytes: int, seconds: float) -> None:
        self.count += 1
        self.bytes += nbytes
        self.seconds += seconds

    def take(self) -> dict:
        out = {"count": self.count, "bytes": self.bytes, "model_seconds": self.seconds}
        self.count, self.bytes, self.seconds = 0, 0, 0.0
        return out


def run_to_age(store: ObjectStore, spec: WorkloadSpec) -> list[FragReport]:
    """Age a bulk-loaded store to the target age via uniform-random safe writes.

    Emits one report per measurement age (including age 0 if scheduled).
    A no-space during aging propagates; the harness snapshots and aborts.
    """
    spec.validate()
    if store.live_count() == 0:
        raise UsageError("run_to_age requires a bulk-loaded store")
    rng = Xorshift64Star(derive_seed(spec.seed, _AGING_STREAM))
    echo = _config_echo(store, spec)
    pending = list(spec.measurement_ages)
    reports: list[FragReport] = []
    read_stats = _ReadStats()

    def emit_due() -> None:
        while pending and store.clock.age >= pending[0]:
            pending.pop(0)
            interval_bytes, interval_seconds = store.take_write_interval()
            reports.append(
                build_report(
                    store,
                    interval_write_bytes=interval_bytes,
                    interval_model_seconds=interval_seconds,
                    seed=spec.seed,
                    config_echo=echo,
                    reads=read_stats.take() if spec.read_fraction > 0 else None,
                )
            )

    emit_due()
    while store.clock.age < spec.target_age:
        victim = store.id_at(rng.randrange(store.live_count()))
        new_size = sample_size(spec.size_dist, rng)
        store.safe_write(victim, new_size)
        if spec.read_fraction > 0 and rng.random() < spec.read_fraction:
            reader = store.id_at(rng.randrange(store.live_count()))
            rec, cost = store.get(reader)
            read_stats.add(rec.size, cost)
        emit_due()
    return reports


def _config_echo(store: ObjectStore, spec: WorkloadSpec) -> dict:
    return {
        "policy": store.config.policy.kind,
        "fragmenting": store.config.policy.fragmenting,
        "seed": spec.seed,
        "n_objects": spec.n_objects,
        "size_dist": {
            "kind": spec.size_dist.kind,
            "mean": spec.size_dist.mean,
            "half_width": spec.size_dist.half_width,
        },
        "target_age": spec.target_age,
        "read_fraction": spec.read_fraction,
        "write_request_size": store.config.write_request_size,
        "size_hint": store.config.size_hint,
        "checkpoint_every": store.config.checkpoint_every,
        "free_mode": store.config.free_mode,
        "total_clusters": store.volume.total_clusters,
        "cluster_size": store.volume.cluster_size,
    }
