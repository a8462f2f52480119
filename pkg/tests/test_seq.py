import random

from hypothesis import given, settings
from hypothesis import strategies as st

from hpimsim.seq import (
    Classification,
    InterfaceSeqState,
    NeighborSeqState,
    SeqStamp,
    fresher,
)

T1 = ("10.1.1.100", "224.1.1.1")
T2 = ("10.1.1.100", "224.1.1.2")


class TestFresher:
    def test_higher_boot_time_beats_any_sn(self):
        assert fresher(SeqStamp(2, 1), SeqStamp(1, 1001))

    def test_equal_is_not_fresher(self):
        assert not fresher(SeqStamp(1, 5), SeqStamp(1, 5))

    def test_same_epoch_higher_sn(self):
        assert fresher(SeqStamp(1, 8), SeqStamp(1, 7))

    @given(
        st.tuples(st.integers(0, 5), st.integers(0, 5)),
        st.tuples(st.integers(0, 5), st.integers(0, 5)),
        st.tuples(st.integers(0, 5), st.integers(0, 5)),
    )
    def test_strict_total_order(self, a, b, c):
        sa, sb, sc = (SeqStamp(*x) for x in (a, b, c))
        assert not fresher(sa, sa)
        if a != b:
            assert fresher(sa, sb) != fresher(sb, sa)
        if fresher(sa, sb) and fresher(sb, sc):
            assert fresher(sa, sc)


class TestClassify:
    def test_reversed_pair_within_one_tree(self):
        # A no-longer-upstream with SN=7 overtaken by an upstream with SN=8:
        # late SN=7 must be stale once SN=8 was accepted.
        st_ = NeighborSeqState(neighbor_boot_time=1)
        assert st_.classify(T1, SeqStamp(1, 8)) is Classification.ACCEPT
        assert st_.classify(T1, SeqStamp(1, 7)) is Classification.STALE

    def test_cross_tree_reversal_keeps_per_tree_map(self):
        st_ = NeighborSeqState(neighbor_boot_time=1, per_tree_sn={T1: 1})
        assert st_.classify(T1, SeqStamp(1, 3)) is Classification.ACCEPT
        assert st_.classify(T2, SeqStamp(1, 2)) is Classification.ACCEPT
        assert st_.per_tree_sn == {T1: 3, T2: 2}

    def test_higher_boot_time_requires_sync(self):
        st_ = NeighborSeqState(neighbor_boot_time=1, per_tree_sn={T1: 1000})
        assert st_.classify(T1, SeqStamp(2, 1)) is Classification.REQUIRES_SYNC

    def test_lower_boot_time_stale(self):
        st_ = NeighborSeqState(neighbor_boot_time=2)
        assert st_.classify(T1, SeqStamp(1, 10**6)) is Classification.STALE

    def test_snapshot_sn_floors_unknown_trees(self):
        st_ = NeighborSeqState(neighbor_boot_time=1, neighbor_snapshot_sn=9)
        assert st_.classify(("10.3.3.3", "224.3.3.3"), SeqStamp(1, 3)) is Classification.STALE
        assert st_.classify(("10.3.3.3", "224.3.3.3"), SeqStamp(1, 10)) is Classification.ACCEPT

    def test_equal_sn_stale_but_ackable(self):
        st_ = NeighborSeqState(neighbor_boot_time=1, per_tree_sn={T1: 5})
        assert st_.classify(T1, SeqStamp(1, 5)) is Classification.STALE
        assert st_.should_ack(T1, SeqStamp(1, 5))
        assert not st_.should_ack(T1, SeqStamp(1, 4))

    def test_no_ack_at_or_below_checkpoint(self):
        st_ = NeighborSeqState(neighbor_boot_time=1, checkpoint_sn_in=5, per_tree_sn={T1: 6})
        assert not st_.should_ack(T1, SeqStamp(1, 5))
        assert st_.should_ack(T1, SeqStamp(1, 6))

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 40)), max_size=30))
    @settings(max_examples=200)
    def test_accepted_sns_strictly_increase_within_epoch(self, stamps):
        st_ = NeighborSeqState(neighbor_boot_time=0)
        last_accepted = {}
        for bt, sn in stamps:
            stamp = SeqStamp(bt, sn)
            res = st_.classify(T1, stamp)
            if res is Classification.ACCEPT:
                key = st_.neighbor_boot_time
                prev = last_accepted.get(key)
                assert prev is None or sn > prev
                last_accepted[key] = sn


class TestCheckpoint:
    def test_six_trees_compact_to_one_then_accept_above(self):
        trees = {("10.1.1.%d" % i, "224.1.1.%d" % i): sn
                 for i, sn in enumerate([100, 200, 300, 400, 480, 495])}
        st_ = NeighborSeqState(neighbor_boot_time=1, per_tree_sn=dict(trees))
        st_.apply_checkpoint(490)
        assert len(st_.per_tree_sn) == 1
        assert list(st_.per_tree_sn.values()) == [495]
        survivor = next(iter(st_.per_tree_sn))
        gone = ("10.1.1.0", "224.1.1.0")
        # SN=498 for a compacted tree is above the checkpoint: accepted.
        assert st_.classify(gone, SeqStamp(1, 498)) is Classification.ACCEPT
        assert st_.per_tree_sn[gone] == 498
        assert st_.per_tree_sn[survivor] == 495

    def test_checkpoint_zero_noop(self):
        st_ = NeighborSeqState(neighbor_boot_time=1, per_tree_sn={T1: 3})
        st_.apply_checkpoint(0)
        assert st_.per_tree_sn == {T1: 3}

    def test_older_checkpoint_ignored(self):
        st_ = NeighborSeqState(neighbor_boot_time=1, checkpoint_sn_in=10, per_tree_sn={T1: 20})
        st_.apply_checkpoint(5)
        assert st_.checkpoint_sn_in == 10

    @given(
        st.dictionaries(st.integers(0, 30), st.integers(1, 100), max_size=20),
        st.integers(0, 100),
    )
    def test_matches_filter_oracle(self, tree_map, checkpoint):
        st_ = NeighborSeqState(neighbor_boot_time=1, per_tree_sn=dict(tree_map))
        st_.apply_checkpoint(checkpoint)
        assert st_.per_tree_sn == {t: sn for t, sn in tree_map.items() if sn > checkpoint}

    @given(
        st.lists(st.tuples(st.integers(0, 2), st.integers(0, 60)), max_size=40),
    )
    @settings(max_examples=200)
    def test_compaction_preserves_decisions(self, ops):
        """Compacted state must classify exactly like a shadow state that
        never compacts (the checkpoint only removes SNs already covered)."""
        compacted = NeighborSeqState(neighbor_boot_time=0)
        shadow = NeighborSeqState(neighbor_boot_time=0)
        for kind, val in ops:
            if kind == 0:
                # only checkpoint SNs that the neighbor fully acknowledged,
                # i.e. at or below everything accepted so far
                floor = min([shadow.per_tree_sn.get(T1, 0), shadow.per_tree_sn.get(T2, 0)])
                cp = min(val, floor)
                compacted.apply_checkpoint(cp)
            else:
                tree = T1 if val % 2 else T2
                stamp = SeqStamp(0, val)
                assert compacted.classify(tree, stamp) == shadow.classify(tree, stamp)


class TestAllocate:
    def test_plain_allocation(self):
        st_ = InterfaceSeqState(boot_time=1, interface_sn=50)
        assert st_.allocate(now=123) == (51, False)
        assert st_.interface_sn == 51

    def test_overflow_restarts_space(self):
        st_ = InterfaceSeqState(boot_time=1, interface_sn=20, max_sn=20)
        sn, overflow = st_.allocate(now=999)
        assert (sn, overflow) == (1, True)
        assert st_.boot_time == 999
        assert st_.interface_sn == 1

    def test_overflow_boot_time_strictly_increases(self):
        st_ = InterfaceSeqState(boot_time=500, interface_sn=3, max_sn=3)
        st_.allocate(now=400)  # clock behind previous boot time
        assert st_.boot_time == 501

    def test_checkpoint_out_tracks_prefix_complete(self):
        st_ = InterfaceSeqState(boot_time=1)
        sns = []
        for _ in range(4):
            sn, _ov = st_.allocate(now=0)
            st_.register_pending(sn)
            sns.append(sn)
        assert st_.checkpoint_sn_out == 0
        st_.mark_complete(sns[1])
        assert st_.checkpoint_sn_out == 0
        st_.mark_complete(sns[0])
        assert st_.checkpoint_sn_out == 2
        st_.mark_complete(sns[3])
        st_.mark_complete(sns[2])
        assert st_.checkpoint_sn_out == 4

    @given(st.lists(st.sampled_from(["alloc", "complete"]), max_size=60))
    def test_checkpoint_out_shadow(self, ops):
        st_ = InterfaceSeqState(boot_time=1, max_sn=1 << 30)
        pending = []
        done = set()
        rng = random.Random(7)
        allocated = 0
        for op in ops:
            if op == "alloc":
                sn, _ = st_.allocate(0)
                st_.register_pending(sn)
                pending.append(sn)
                allocated = sn
            elif pending:
                sn = pending.pop(rng.randrange(len(pending)))
                st_.mark_complete(sn)
                done.add(sn)
            expect = 0
            for sn in range(1, allocated + 1):
                if sn in pending:
                    break
                expect = sn
            assert st_.checkpoint_sn_out == expect
