"""Protocol-core behavior driven through a miniature two-router harness:
snapshot synchronization, per-tree sequencing, checkpoint compaction, and
acknowledgment validation."""
from hpimsim import wire
from hpimsim.neighbor import Neighbor, SyncState
from hpimsim.router import Router
from hpimsim.seq import Classification, NeighborSeqState, SeqStamp, fresher
from hpimsim.tree import MetricPair, TreeRef, TreeState

from pump import MS, SRC, US, Wire, _cfg, _originate, _source_iface

# ------------------------------------------------------------ sync handshake


def test_snapshot_sync_five_trees_fragment_three():
    """A master holding five trees and a fragment budget of three finishes
    in three stop-and-wait exchanges (SyncSN 0,0,1,1,2,2) and the slave
    installs all five trees as upstream."""
    groups = ["224.1.1.%d" % k for k in range(1, 6)]
    # higher IP keeps the master role in a simultaneous start
    cfg_m = _cfg("M", "10.0.1.2", fragment_size=3, extra_ifaces=[_source_iface()])
    cfg_s = _cfg("S", "10.0.1.1", fragment_size=3)
    net = Wire(cfg_m, cfg_s)
    master, slave = net.routers["M"], net.routers["S"]
    _originate(master, groups)
    assert len(master.trees) == 5
    # pin the master's interface counter at 50 so the snapshot SN is 51
    master.interfaces["i1"].seq.interface_sn = 50
    master.interfaces["i1"].seq._pending.clear()

    master.start()
    slave.start()
    net.run_until(2 * US)

    syncs = [(s, m.body) for (_t, s, m) in net.log if isinstance(m.body, wire.Sync)]
    # drop the losing simultaneous-master offer, if the slave sent one
    syncs = [x for x in syncs if not (x[0] == "S" and x[1].master)]
    assert [b.sync_sn for (_s, b) in syncs] == [0, 0, 1, 1, 2, 2]
    masters = [b for (_s, b) in syncs if b.master]
    echoes = [b for (_s, b) in syncs if not b.master]
    assert all(b.my_snapshot_sn == 51 for b in masters)
    assert all(b.my_snapshot_sn == 1 for b in echoes)
    assert [b.more for b in masters] == [True, True, False]
    assert [b.more for b in echoes] == [False, False, False]
    # the hello hold time rides along exactly when More is cleared
    for b in masters + echoes:
        assert (b.hello_hold_time is not None) == (not b.more)
    # trees ride in the first two master exchanges: 3 then 2
    assert [len(b.trees) for b in masters] == [3, 2, 0]

    nm = master.interfaces["i1"].neighbors["10.0.1.1"]
    ns = slave.interfaces["i1"].neighbors["10.0.1.2"]
    assert nm.sync_state is SyncState.SYNCED
    assert ns.sync_state is SyncState.SYNCED
    assert sorted(ns.upstream) == sorted(TreeRef(SRC, g) for g in groups)
    assert all(slave.trees[TreeRef(SRC, g)].state is TreeState.UNSURE for g in groups)


def test_sync_survives_message_loss():
    """Dropping the first two master transmissions only delays completion:
    the master retries until the slave answers."""
    cfg_m = _cfg("M", "10.0.1.2", extra_ifaces=[_source_iface()])
    cfg_s = _cfg("S", "10.0.1.1")
    net = Wire(cfg_m, cfg_s)
    _originate(net.routers["M"], ["224.1.1.1"])
    drops = {"n": 0}

    def lossy(sender, msg):
        if sender == "M" and isinstance(msg.body, wire.Sync) and drops["n"] < 2:
            drops["n"] += 1
            return "drop"
        return None

    net.intercept = lossy
    net.routers["M"].start()
    net.routers["S"].start()
    net.run_until(30 * US)
    assert drops["n"] == 2
    assert net.routers["S"].interfaces["i1"].neighbors["10.0.1.2"].sync_state is SyncState.SYNCED


# ------------------------------------------------------- sequencing vignettes


def _synced_neighbor(router, ip="10.0.1.1", boot_time=1):
    n = Neighbor(ip=ip, interface="i1", boot_time=boot_time)
    n.sync_state = SyncState.SYNCED
    n.seq = NeighborSeqState(neighbor_boot_time=boot_time)
    router.interfaces["i1"].neighbors[ip] = n
    return n


def _router_alone(name="R", ip="10.0.1.2"):
    sent = []
    r = Router(
        _cfg(name, ip),
        now=lambda: 0,
        send=lambda ifid, dst, msg: sent.append((ifid, dst, msg)),
        schedule=lambda d, tag: None,
    )
    return r, sent


def _up(sn, group="224.1.1.1", rpc=10):
    return wire.Message(
        boot_time=1, body=wire.IamUpstream(sn=sn, source=SRC, group=group, rpc_preference=0, rpc=rpc)
    )


def _down(sn, group="224.1.1.1"):
    return wire.Message(boot_time=1, body=wire.IamNoLongerUpstream(sn=sn, source=SRC, group=group))


def test_reversed_upstream_pair_ends_upstream():
    """An IamUpstream that overtakes the older IamNoLongerUpstream wins:
    the late withdrawal is recognized as stale and the neighbor stays
    recorded as upstream."""
    r, _sent = _router_alone()
    n = _synced_neighbor(r)
    r.handle_control("i1", n.ip, _up(sn=2))
    r.handle_control("i1", n.ip, _down(sn=1))  # older message arrives last
    assert TreeRef(SRC, "224.1.1.1") in n.upstream
    assert n.seq.per_tree_sn[TreeRef(SRC, "224.1.1.1")] == 2


def test_cross_tree_reversal_keeps_both():
    """Reordering across different trees is harmless because freshness is
    tracked per tree: both messages are accepted."""
    r, _sent = _router_alone()
    n = _synced_neighbor(r)
    r.handle_control("i1", n.ip, _up(sn=3, group="224.1.1.1"))
    r.handle_control("i1", n.ip, _up(sn=2, group="224.1.1.2"))  # lower SN, other tree
    assert n.seq.per_tree_sn == {
        TreeRef(SRC, "224.1.1.1"): 3,
        TreeRef(SRC, "224.1.1.2"): 2,
    }
    assert TreeRef(SRC, "224.1.1.2") in n.upstream


def test_post_reboot_low_sn_is_fresh():
    """(BootTime 2, SN 1) beats (BootTime 1, SN 1000): a rebooted peer's
    first message is never mistaken for a stale one, and triggers a fresh
    synchronization instead of being dropped."""
    assert fresher(SeqStamp(2, 1), SeqStamp(1, 1000))
    r, sent = _router_alone()
    n = _synced_neighbor(r, boot_time=1)
    n.seq.per_tree_sn[TreeRef(SRC, "224.1.1.1")] = 1000
    msg = wire.Message(
        boot_time=2,
        body=wire.IamUpstream(sn=1, source=SRC, group="224.1.1.1", rpc_preference=0, rpc=10),
    )
    r.handle_control("i1", n.ip, msg)
    assert n.boot_time == 2
    assert n.sync_state is not SyncState.SYNCED  # resynchronization started
    assert any(isinstance(m.body, wire.Sync) for (_i, _d, m) in sent)


# ------------------------------------------------------ checkpoint compaction


def test_checkpoint_compacts_tracking_map():
    """Six per-tree records at or below the advertised checkpoint collapse
    into the single checkpoint value; later sequence numbers still pass."""
    st = NeighborSeqState(neighbor_boot_time=1)
    for k in range(6):
        tref = TreeRef(SRC, "224.9.9.%d" % k)
        assert st.classify(tref, SeqStamp(1, 485 + k)) is Classification.ACCEPT
    assert len(st.per_tree_sn) == 6
    st.apply_checkpoint(490)
    assert st.per_tree_sn == {}  # the map is now the one checkpoint entry
    assert st.checkpoint_sn_in == 490
    assert st.classify(TreeRef(SRC, "224.9.9.0"), SeqStamp(1, 498)) is Classification.ACCEPT
    assert st.classify(TreeRef(SRC, "224.9.9.1"), SeqStamp(1, 489)) is Classification.STALE
    # an acknowledgment is never owed for traffic at or below the checkpoint
    assert not st.should_ack(TreeRef(SRC, "224.9.9.1"), SeqStamp(1, 489))


# --------------------------------------------------------- ACK validation


def test_stale_ack_rejected_until_peer_stores_tree():
    """An ACK carrying snapshot numbers from a dead synchronization period
    must not stop retransmission; the message is retried until the peer
    has truly stored the tree under the new period."""
    cfg_a = _cfg("A", "10.0.1.2", extra_ifaces=[_source_iface()])
    cfg_b = _cfg("B", "10.0.1.1")
    net = Wire(cfg_a, cfg_b)
    ra, rb = net.routers["A"], net.routers["B"]
    # first synchronization period: A's snapshot SN 5, B's snapshot SN 30
    ra.interfaces["i1"].seq.interface_sn = 4
    rb.interfaces["i1"].seq.interface_sn = 29
    ra.start()
    rb.start()
    net.run_until(2 * US)
    nb_a = ra.interfaces["i1"].neighbors["10.0.1.1"]
    nb_b = rb.interfaces["i1"].neighbors["10.0.1.2"]
    assert nb_a.synced and nb_b.synced
    assert nb_b.seq.neighbor_snapshot_sn == 5
    assert nb_b.seq.my_snapshot_sn_for_neighbor == 30

    # A loses B (hellos from B suppressed past A's hold time); B still
    # believes the old period is alive
    net.intercept = lambda s, m: "drop" if s == "B" else None
    net.run_until(net.t + (cfg_a.hold_time + 5) * US)
    assert "10.0.1.1" not in ra.interfaces["i1"].neighbors

    # B's next hello reaches A; A opens a new period with snapshot SN 20,
    # but the Sync itself is held back in flight
    ra.interfaces["i1"].seq.interface_sn = 19
    holding = {"on": True}

    def hold_sync(sender, msg):
        if holding["on"] and sender == "A" and isinstance(msg.body, wire.Sync):
            return "hold"
        return None

    net.intercept = hold_sync
    rb._emit_hello("i1")
    net.run_until(net.t + 10 * MS)
    assert ra.interfaces["i1"].neighbors["10.0.1.1"].session is not None
    assert ra.interfaces["i1"].neighbors["10.0.1.1"].session.my_ssn == 20
    assert net.held  # the Sync is in flight behind the data below

    # A starts originating a tree: IamUpstream SN 21 overtakes the Sync
    _originate(ra, ["224.1.1.1"])
    tref = TreeRef(SRC, "224.1.1.1")
    net.run_until(net.t + 10 * MS)
    # B answered from the dead period; A must reject that ACK and keep
    # the transmission pending
    acks = [m.body for (_t, s, m) in net.log if s == "B" and isinstance(m.body, wire.Ack)]
    assert acks and acks[-1].neighbor_snapshot_sn == 5 and acks[-1].my_snapshot_sn == 30
    assert ra.pending.find("i1", tref, 21) is not None

    # the Sync finally arrives; B joins the new period (discarding what it
    # stored prematurely) and the retransmission now sticks
    holding["on"] = False
    net.release_held()
    net.run_until(net.t + 10 * US)
    assert rb.interfaces["i1"].neighbors["10.0.1.2"].synced
    assert tref in rb.interfaces["i1"].neighbors["10.0.1.2"].upstream
    assert rb.trees[tref].state is TreeState.UNSURE
    assert ra.pending.find("i1", tref, 21) is None
    good = [m.body for (_t, s, m) in net.log if s == "B" and isinstance(m.body, wire.Ack)]
    assert good[-1].neighbor_snapshot_sn == 20
    assert "up %s 224.1.1.1" % SRC in rb.state_digest()


def test_neighbor_death_clears_derived_state():
    """When the hold time expires the neighbor and everything learned from
    it disappear."""
    cfg_a = _cfg("A", "10.0.1.2", extra_ifaces=[_source_iface()])
    cfg_b = _cfg("B", "10.0.1.1")
    net = Wire(cfg_a, cfg_b)
    ra, rb = net.routers["A"], net.routers["B"]
    _originate(ra, ["224.1.1.1"])
    ra.start()
    rb.start()
    net.run_until(2 * US)
    tref = TreeRef(SRC, "224.1.1.1")
    assert rb.trees[tref].state is TreeState.UNSURE
    net.intercept = lambda s, m: "drop" if s == "A" else None
    net.run_until(net.t + (cfg_b.hold_time + 40) * US)
    assert "10.0.1.2" not in rb.interfaces["i1"].neighbors
    assert tref not in rb.trees or rb.trees[tref].state is TreeState.INACTIVE
