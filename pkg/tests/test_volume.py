import pytest
from hypothesis import given, settings, strategies as st

from conftest import BitmapOracle, assert_matches_oracle
from fraglab.errors import ConfigurationError, InvariantViolationError
from fraglab.rng import Xorshift64Star
from fraglab.volume import (
    Band,
    CostModel,
    Extent,
    create_volume,
    default_bands,
)


def test_create_volume_one_free_run():
    vol = create_volume(100, 4096, [Band(0, 100, 60e6)])
    assert list(vol.free.runs()) == [Extent(0, 100)]
    assert vol.deferred == []
    assert vol.markers == {}


def test_create_volume_rejects_empty():
    with pytest.raises(ConfigurationError):
        create_volume(0, 4096)


def test_create_volume_one_gib_two_bands():
    bands = [Band(0, 131072, 60e6), Band(131072, 262144, 30e6)]
    vol = create_volume(262144, 4096, bands)
    assert vol.capacity_bytes == 1 << 30
    assert vol.bands == bands


def test_create_volume_rejects_bad_band_partitions():
    with pytest.raises(ConfigurationError):
        create_volume(100, 4096, [Band(0, 50, 60e6), Band(60, 100, 30e6)])  # gap
    with pytest.raises(ConfigurationError):
        create_volume(100, 4096, [Band(0, 50, 30e6), Band(50, 100, 60e6)])  # inner faster
    with pytest.raises(ConfigurationError):
        create_volume(100, 4096, [Band(0, 90, 60e6)])  # short


def test_default_bands_cover_volume():
    bands = default_bands(262144)
    assert bands[0].start_cluster == 0
    assert bands[-1].end_cluster == 262144
    assert bands[0].transfer_rate >= bands[1].transfer_rate


class TestRelease:
    def test_immediate_release_coalesces(self, flat_volume):
        vol = flat_volume
        vol.free.take(0, 0, 100)
        vol.release([Extent(0, 4)], "immediate")
        vol.release([Extent(4, 4)], "immediate")
        assert list(vol.free.runs()) == [Extent(0, 8)]

    def test_deferred_release_not_reusable(self, flat_volume):
        vol = flat_volume
        # allocate 0..20 by hand, then defer 10..13
        vol.free.take(0, 0, 20)
        vol.release([Extent(10, 3)], "deferred")
        assert vol.free_clusters == 80
        assert not vol.free.intersects(10, 3)
        assert vol.deferred == [Extent(10, 3)]

    def test_double_release_aborts(self, flat_volume):
        vol = flat_volume
        vol.free.take(0, 0, 8)
        vol.release([Extent(0, 4)], "immediate")
        with pytest.raises(InvariantViolationError):
            vol.release([Extent(0, 4)], "immediate")

    def test_release_of_deferred_extent_aborts(self, flat_volume):
        vol = flat_volume
        vol.free.take(0, 0, 8)
        vol.release([Extent(0, 4)], "deferred")
        with pytest.raises(InvariantViolationError):
            vol.release([Extent(2, 2)], "deferred")


class TestCheckpoint:
    def test_checkpoint_commits_deferred(self, flat_volume):
        vol = flat_volume
        vol.free.take(0, 0, 20)
        vol.release([Extent(10, 3)], "deferred")
        vol.checkpoint()
        assert vol.deferred == []
        assert vol.free.intersects(10, 3)

    def test_checkpoint_empty_is_noop(self, flat_volume):
        before = list(flat_volume.free.runs())
        flat_volume.checkpoint()
        assert list(flat_volume.free.runs()) == before

    def test_checkpoint_coalesces_with_existing_free(self, flat_volume):
        # oracle: rebuild runs from a cluster bitmap
        vol = flat_volume
        vol.free.take(0, 0, 16)
        oracle = BitmapOracle(100)
        oracle.mark([Extent(0, 16)], "A")
        vol.release([Extent(8, 8)], "immediate")
        oracle.mark([Extent(8, 8)], "F")
        vol.release([Extent(0, 4), Extent(4, 4)], "deferred")
        oracle.mark([Extent(0, 8)], "D")
        vol.checkpoint()
        oracle.mark([Extent(0, 8)], "F")
        assert_matches_oracle(vol, oracle)
        assert list(vol.free.runs())[0] == Extent(0, 100)


class TestReadCost:
    def test_single_extent_arithmetic(self):
        # frozen from 0.008 + 1048576/60e6
        vol = create_volume(1024, 4096, [Band(0, 1024, 60e6)])
        cost = vol.read_cost([Extent(0, 256)], CostModel(seek_time=0.008))
        assert cost == pytest.approx(0.025476266666666667, abs=1e-15)

    def test_adjacent_extents_cost_one_seek(self, flat_volume):
        model = CostModel(seek_time=0.008)
        split = flat_volume.read_cost([Extent(0, 10), Extent(10, 10)], model)
        whole = flat_volume.read_cost([Extent(0, 20)], model)
        assert split == whole

    def test_scattered_fragments_cost_per_seek(self, flat_volume):
        model = CostModel(seek_time=0.008)
        frags = [Extent(0, 4), Extent(10, 4), Extent(20, 4), Extent(30, 4)]
        cost = flat_volume.read_cost(frags, model)
        transfer = 16 * 4096 / 60e6
        assert cost == pytest.approx(4 * 0.008 + transfer)

    def test_more_fragments_cost_strictly_more(self, flat_volume):
        model = CostModel(seek_time=0.008)
        layouts = [
            [Extent(0, 12)],
            [Extent(0, 6), Extent(20, 6)],
            [Extent(0, 4), Extent(20, 4), Extent(40, 4)],
        ]
        costs = [flat_volume.read_cost(lay, model) for lay in layouts]
        assert costs[0] < costs[1] < costs[2]

    def test_band_spanning_extent_splits_at_boundary(self):
        vol = create_volume(100, 4096, [Band(0, 50, 60e6), Band(50, 100, 30e6)])
        cost = vol.read_cost([Extent(40, 20)], CostModel(seek_time=0.0))
        expected = 10 * 4096 / 60e6 + 10 * 4096 / 30e6
        assert cost == pytest.approx(expected)


class TestHistogram:
    def test_empty_volume(self, flat_volume):
        assert flat_volume.free_extent_histogram() == {100: 1}

    def test_two_equal_runs(self, flat_volume):
        vol = flat_volume
        vol.free.take(0, 0, 100)
        vol.release([Extent(0, 4)], "immediate")
        vol.release([Extent(10, 4)], "immediate")
        assert vol.free_extent_histogram() == {4: 2}

    def test_histogram_total_matches_free_count_after_random_ops(self):
        vol = create_volume(512, 4096, [Band(0, 512, 60e6)])
        rng = Xorshift64Star(7)
        allocated = []
        for _ in range(1000):
            if allocated and rng.random() < 0.45:
                ext = allocated.pop(rng.randrange(len(allocated)))
                vol.release([ext], "deferred" if rng.random() < 0.3 else "immediate")
                if rng.random() < 0.2:
                    vol.checkpoint()
            else:
                want = rng.randint(1, 16)
                # first fit by hand against the raw index
                for i, length in enumerate(vol.free.lengths):
                    if length >= want:
                        off = vol.free.offsets[i]
                        vol.free.take(i, off, want)
                        allocated.append(Extent(off, want))
                        break
        hist = vol.free_extent_histogram()
        assert sum(length * n for length, n in hist.items()) == vol.free_clusters


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 63), st.integers(1, 8)), max_size=40))
def test_random_sequences_match_bitmap_oracle(ops):
    """Conservation, coalescing, and deferred isolation against the bitmap."""
    vol = create_volume(64, 4096, [Band(0, 64, 60e6)])
    oracle = BitmapOracle(64)
    allocated = {}
    deferred = []
    for kind, pos, length in ops:
        if kind == 0:  # allocate first-fit at/after pos, length clamped
            for i, run_len in enumerate(vol.free.lengths):
                off = vol.free.offsets[i]
                if off >= pos and run_len >= length:
                    vol.free.take(i, off, length)
                    ext = Extent(off, length)
                    allocated[off] = ext
                    oracle.mark([ext], "A")
                    # nothing allocated may overlap staged deferred extents
                    for d in deferred:
                        assert not (d.offset < ext.end and ext.offset < d.end)
                    break
        elif kind == 1 and allocated:  # release something, immediate
            key = sorted(allocated)[pos % len(allocated)]
            ext = allocated.pop(key)
            vol.release([ext], "immediate")
            oracle.mark([ext], "F")
        elif kind == 2:
            if allocated and pos % 2 == 0:
                key = sorted(allocated)[pos % len(allocated)]
                ext = allocated.pop(key)
                vol.release([ext], "deferred")
                deferred.append(ext)
                oracle.mark([ext], "D")
            else:
                vol.checkpoint()
                oracle.mark(deferred, "F")
                deferred.clear()
        assert_matches_oracle(vol, oracle)


def test_audit_passes_on_consistent_state(flat_volume):
    vol = flat_volume
    vol.free.take(0, 0, 10)
    for c in range(10):
        vol.set_marker(c, "x", c)
    vol.audit()


def test_audit_catches_leak(flat_volume):
    vol = flat_volume
    vol.free.take(0, 0, 10)  # allocated but never marked: a leak
    with pytest.raises(InvariantViolationError):
        vol.audit()


def test_volume_state_round_trip(flat_volume):
    from fraglab.volume import Volume

    vol = flat_volume
    vol.free.take(0, 0, 30)
    vol.release([Extent(20, 5)], "deferred")
    for c in range(20):
        vol.set_marker(c, 7, c)
    for c in range(25, 30):
        vol.set_marker(c, 8, c - 25)
    clone = Volume.from_state(vol.to_state())
    assert list(clone.free.runs()) == list(vol.free.runs())
    assert clone.deferred == vol.deferred
    assert clone.markers == vol.markers
    assert clone.bands == vol.bands
