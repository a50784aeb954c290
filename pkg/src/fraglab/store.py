"""Object layer: get/put/delete with safe-write replacement on a Volume.

Objects are opaque blobs addressed by id.  A put appends in write-request
sized chunks (or allocates the whole object up front when a size hint is
configured); an update writes a complete new copy and then atomically swaps
it for the old one, so a full version of the object exists at every point.

Every allocated cluster is tagged with (owner, sequence) markers.  The
marker scanner (scan_layout) rebuilds all object layouts from those tags
alone, giving an independent check on the record-keeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterator

from .alloc import AllocPolicy, make_policy
from .errors import (
    CorruptionError,
    NoSpaceError,
    NotFoundError,
    UndefinedAgeError,
    UsageError,
)
from .volume import CostModel, Extent, Volume


@dataclass
class ObjectRecord:
    """One stored object: logical size plus its physical layout."""

    id: Hashable
    size: int                 # logical bytes
    extents: list[Extent]     # logical order, adjacent pieces pre-merged
    generation: int = 0       # replacement count

    @property
    def allocated_clusters(self) -> int:
        return sum(e.length for e in self.extents)


@dataclass
class AgeClock:
    """Write-volume accounting that yields storage age.

    bytes_turned_over accumulates the logical bytes of every insert, update
    and delete; dividing by the live bytes gives the volume's storage age
    (under pure replacement: safe writes per object).  Bulk load zeroes the
    turnover so age 0 means "freshly loaded".
    """

    bytes_turned_over: int = 0
    live_bytes: int = 0

    @property
    def age(self) -> float:
        if self.live_bytes <= 0:
            raise UndefinedAgeError("storage age is undefined with no live bytes")
        return self.bytes_turned_over / self.live_bytes

    def reset_turnover(self) -> None:
        self.bytes_turned_over = 0


@dataclass
class StoreConfig:
    policy: AllocPolicy
    write_request_size: int = 65536
    size_hint: bool = False
    checkpoint_every: int = 1     # mutating ops between deferred-free commits
    free_mode: str = "deferred"   # or "immediate"

    def validate(self, volume: Volume) -> None:
        if self.write_request_size < volume.cluster_size:
            raise UsageError("write_request_size must be at least one cluster")
        if self.checkpoint_every < 1:
            raise UsageError("checkpoint_every must be >= 1")
        if self.free_mode not in ("immediate", "deferred"):
            raise UsageError(f"unknown free_mode {self.free_mode!r}")
        if self.policy.requires_deferred_free and self.free_mode != "deferred":
            raise UsageError(f"{self.policy.kind} requires free_mode='deferred'")


@dataclass
class _ReplaceTxn:
    """In-flight safe write; what recovery needs to finish or undo it."""

    oid: Hashable
    new_size: int
    old_extents: list[Extent]
    old_size: int
    temp_key: tuple
    new_extents: list[Extent] = field(default_factory=list)
    committed: bool = False
    old_released: bool = False


# safe-write protocol boundaries, in order; the step hook sees each name
SAFE_WRITE_STEPS = ("temp_written", "forced", "replaced", "old_released")


class ObjectStore:
    """Single-writer object store over one volume."""

    def __init__(self, volume: Volume, config: StoreConfig, cost_model: CostModel | None = None):
        config.validate(volume)
        self.volume = volume
        self.config = config
        self.cost_model = cost_model or CostModel()
        self.clock = AgeClock()
        self._records: dict[Hashable, ObjectRecord] = {}
        self._ids: list[Hashable] = []
        self._pos: dict[Hashable, int] = {}
        self._ops_since_checkpoint = 0
        self._pending: _ReplaceTxn | None = None
        self._interval_bytes = 0
        self._interval_seconds = 0.0
        # test/diagnostic hook: called with each step name; may raise
        self.step_hook: Callable[[str], None] | None = None

    # -- lookups ---------------------------------------------------------

    def __contains__(self, oid: Hashable) -> bool:
        return oid in self._records

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> Iterator[ObjectRecord]:
        return iter(self._records.values())

    def live_count(self) -> int:
        return len(self._ids)

    def id_at(self, index: int) -> Hashable:
        return self._ids[index]

    def _require(self, oid: Hashable) -> ObjectRecord:
        rec = self._records.get(oid)
        if rec is None:
            raise NotFoundError(f"object {oid!r} is not live")
        return rec

    # -- write path --------------------------------------------------------

    def put_new(self, oid: Hashable, size: int) -> ObjectRecord:
        """Create an object.  Fails atomically: on no-space nothing changes."""
        if oid in self._records:
            raise UsageError(f"object {oid!r} already exists")
        if size <= 0:
            raise UsageError("object size must be > 0")
        extents = self._alloc_stream(oid, size)
        rec = ObjectRecord(id=oid, size=size, extents=extents)
        self._records[oid] = rec
        self._pos[oid] = len(self._ids)
        self._ids.append(oid)
        self.clock.live_bytes += size
        self.clock.bytes_turned_over += size
        self._account_write(size, extents)
        self._after_mutation()
        return rec

    def safe_write(self, oid: Hashable, new_size: int) -> ObjectRecord:
        """Replace an object's contents via the temp-copy-then-swap protocol.

        The new copy is fully allocated while the old one stays live (peak
        usage covers both), then one commit step repoints the record; the
        old extents are released afterwards, deferred or immediate per
        config.  A failure before the commit leaves the old version intact.
        """
        rec = self._require(oid)
        if new_size <= 0:
            raise UsageError("object size must be > 0")
        txn = _ReplaceTxn(
            oid=oid,
            new_size=new_size,
            old_extents=rec.extents,
            old_size=rec.size,
            temp_key=("~tmp", oid, rec.generation + 1),
        )
        self._pending = txn
        try:
            txn.new_extents = self._alloc_stream(txn.temp_key, new_size)
        except NoSpaceError:
            self._pending = None
            raise
        self._hook("temp_written")
        self._hook("forced")  # durability point for the temp copy; no-op here
        self._commit_replace(txn)
        self._hook("replaced")
        self.volume.release(txn.old_extents, self.config.free_mode)
        txn.old_released = True
        self._hook("old_released")
        self._pending = None
        self._after_mutation()
        return rec

    def _commit_replace(self, txn: _ReplaceTxn) -> None:
        """The atomic swap: one step after which the new version is current."""
        rec = self._records[txn.oid]
        self.volume.clear_markers(txn.old_extents)
        seq = 0
        for ext in txn.new_extents:
            for cluster in range(ext.offset, ext.end):
                self.volume.set_marker(cluster, txn.oid, seq)
                seq += 1
        rec.extents = txn.new_extents
        rec.size = txn.new_size
        rec.generation += 1
        self.clock.live_bytes += txn.new_size - txn.old_size
        self.clock.bytes_turned_over += txn.new_size
        self._account_write(txn.new_size, txn.new_extents)
        txn.committed = True

    def delete(self, oid: Hashable) -> None:
        rec = self._require(oid)
        self.volume.clear_markers(rec.extents)
        self.volume.release(rec.extents, self.config.free_mode)
        del self._records[oid]
        idx = self._pos.pop(oid)
        last = self._ids.pop()
        if idx < len(self._ids):
            self._ids[idx] = last
            self._pos[last] = idx
        self.clock.live_bytes -= rec.size
        self.clock.bytes_turned_over += rec.size
        self._after_mutation()

    def recover(self) -> None:
        """Resolve an interrupted safe write: roll back before the swap,
        roll forward after it.  Idempotent; safe to call anytime."""
        txn = self._pending
        if txn is None:
            return
        self._pending = None
        if not txn.committed:
            self.volume.clear_markers(txn.new_extents)
            self.volume.release(txn.new_extents, "immediate")
        elif not txn.old_released:
            self.volume.release(txn.old_extents, self.config.free_mode)

    # -- read path ---------------------------------------------------------

    def get(self, oid: Hashable) -> tuple[ObjectRecord, float]:
        rec = self._require(oid)
        return rec, self.volume.read_cost(rec.extents, self.cost_model)

    def scan_layout(self) -> dict[Hashable, list[Extent]]:
        """Rebuild every object's extent list from cluster markers alone.

        Ignores the object records entirely; any marker gap, duplicate or
        orphan is reported as corruption with the offending cluster.
        """
        deferred_clusters = set()
        for ext in self.volume.deferred:
            deferred_clusters.update(range(ext.offset, ext.end))
        by_key: dict[Hashable, list[tuple[int, int]]] = {}
        for cluster, (key, seq) in self.volume.markers.items():
            if isinstance(key, tuple) and key and key[0] == "~tmp":
                raise CorruptionError(
                    f"cluster {cluster} holds a temp marker outside any replacement",
                    cluster=cluster,
                )
            if self.volume.free.intersects(cluster, 1) or cluster in deferred_clusters:
                raise CorruptionError(
                    f"cluster {cluster} is marked but not allocated", cluster=cluster
                )
            by_key.setdefault(key, []).append((seq, cluster))
        layout: dict[Hashable, list[Extent]] = {}
        for key, pairs in by_key.items():
            pairs.sort()
            extents: list[Extent] = []
            prev_seq = -1
            for seq, cluster in pairs:
                if seq == prev_seq:
                    raise CorruptionError(
                        f"object {key!r}: duplicate sequence {seq} at cluster {cluster}",
                        cluster=cluster,
                    )
                if seq != prev_seq + 1:
                    raise CorruptionError(
                        f"object {key!r}: sequence gap before {seq} at cluster {cluster}",
                        cluster=cluster,
                    )
                if extents and extents[-1].end == cluster:
                    extents[-1] = Extent(extents[-1].offset, extents[-1].length + 1)
                else:
                    extents.append(Extent(cluster, 1))
                prev_seq = seq
            layout[key] = extents
        return layout

    def verify_layout(self) -> None:
        """Scanner-vs-records cross check; raises on the first mismatch."""
        scanned = self.scan_layout()
        recorded = {oid: rec.extents for oid, rec in self._records.items()}
        if scanned.keys() != recorded.keys():
            missing = recorded.keys() - scanned.keys()
            extra = scanned.keys() - recorded.keys()
            raise CorruptionError(
                f"scan object set mismatch: missing {sorted(map(repr, missing))},"
                f" unexpected {sorted(map(repr, extra))}"
            )
        for oid, extents in recorded.items():
            if scanned[oid] != extents:
                raise CorruptionError(
                    f"object {oid!r}: scan found {scanned[oid]}, records say {extents}"
                )

    # -- maintenance --------------------------------------------------------

    def checkpoint_now(self) -> None:
        """Commit deferred frees immediately, regardless of cadence."""
        self.volume.checkpoint()
        self.config.policy.note_checkpoint()
        self._ops_since_checkpoint = 0

    def rewrite_layout(self, placements: dict[Hashable, list[tuple[int, int]]]) -> None:
        """Apply a cleaner's relocation map: (seq, cluster) lists per object."""
        for oid, pairs in placements.items():
            rec = self._records.get(oid)
            if rec is None:
                raise CorruptionError(f"cleaner moved clusters of unknown object {oid!r}")
            pairs.sort()
            extents: list[Extent] = []
            for _seq, cluster in pairs:
                if extents and extents[-1].end == cluster:
                    extents[-1] = Extent(extents[-1].offset, extents[-1].length + 1)
                else:
                    extents.append(Extent(cluster, 1))
            rec.extents = extents

    def take_write_interval(self) -> tuple[int, float]:
        """Bytes written and modeled seconds since the last call."""
        out = (self._interval_bytes, self._interval_seconds)
        self._interval_bytes = 0
        self._interval_seconds = 0.0
        return out

    # -- internals ------------------------------------------------------------

    def _append_plan(self, size_bytes: int) -> list[int]:
        """Cluster counts per allocation call for one object write."""
        cs = self.volume.cluster_size
        total = -(-size_bytes // cs)
        if self.config.size_hint:
            return [total]
        plan = []
        allocated = 0
        written = 0
        while written < size_bytes:
            written = min(written + self.config.write_request_size, size_bytes)
            need = -(-written // cs)
            if need > allocated:
                plan.append(need - allocated)
                allocated = need
        return plan

    def _alloc_stream(self, key: Hashable, size_bytes: int) -> list[Extent]:
        """Allocate an object's clusters, marking as it goes.

        Appends chunk by chunk without a size hint; rolls every partial
        allocation back (immediate frees, the data never existed durably)
        if space runs out mid-way.
        """
        volume = self.volume
        policy = self.config.policy
        policy.prepare(self, -(-size_bytes // volume.cluster_size))
        extents: list[Extent] = []
        seq = 0
        try:
            for need in self._append_plan(size_bytes):
                for ext in policy.alloc(volume, need):
                    for cluster in range(ext.offset, ext.end):
                        volume.set_marker(cluster, key, seq)
                        seq += 1
                    if extents and extents[-1].end == ext.offset:
                        extents[-1] = Extent(extents[-1].offset, extents[-1].length + ext.length)
                    else:
                        extents.append(ext)
        except NoSpaceError:
            volume.clear_markers(extents)
            volume.release(extents, "immediate")
            raise
        return extents

    def _account_write(self, size_bytes: int, extents: list[Extent]) -> None:
        self._interval_bytes += size_bytes
        self._interval_seconds += self.volume.read_cost(extents, self.cost_model)

    def _after_mutation(self) -> None:
        self._ops_since_checkpoint += 1
        if self.config.free_mode == "deferred" and self._ops_since_checkpoint >= self.config.checkpoint_every:
            self.checkpoint_now()

    def _hook(self, step: str) -> None:
        if self.step_hook is not None:
            self.step_hook(step)

    # -- snapshots -------------------------------------------------------------

    def to_state(self) -> dict:
        if self._pending is not None:
            raise UsageError("cannot snapshot with a replacement in flight")
        return {
            "volume": self.volume.to_state(),
            "config": {
                "policy": self.config.policy.kind,
                "fragmenting": self.config.policy.fragmenting,
                "write_request_size": self.config.write_request_size,
                "size_hint": self.config.size_hint,
                "checkpoint_every": self.config.checkpoint_every,
                "free_mode": self.config.free_mode,
            },
            "objects": [
                {
                    "id": rec.id,
                    "size": rec.size,
                    "generation": rec.generation,
                    "extents": [[e.offset, e.length] for e in rec.extents],
                }
                for rec in self._records.values()
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "ObjectStore":
        volume = Volume.from_state(state["volume"])
        cfg = state["config"]
        config = StoreConfig(
            policy=make_policy(cfg["policy"], fragmenting=cfg.get("fragmenting", False)),
            write_request_size=int(cfg["write_request_size"]),
            size_hint=bool(cfg["size_hint"]),
            checkpoint_every=int(cfg["checkpoint_every"]),
            free_mode=cfg["free_mode"],
        )
        store = cls(volume, config)
        for obj in state["objects"]:
            rec = ObjectRecord(
                id=obj["id"],
                size=int(obj["size"]),
                extents=[Extent(int(o), int(l)) for o, l in obj["extents"]],
                generation=int(obj["generation"]),
            )
            store._records[rec.id] = rec
            store._pos[rec.id] = len(store._ids)
            store._ids.append(rec.id)
            store.clock.live_bytes += rec.size
        return store
