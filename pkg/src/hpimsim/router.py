"""Router assembly: event dispatch across the protocol engines, data-plane
decisions (RPF check, originator detection, AL hysteresis), the multicast
routing table, and canonical state digests.

A Router is driven entirely through its public handlers (control frames,
data packets, timer wakeups, route updates, membership updates).  It talks
back to its host environment through three callbacks: ``now()`` for the
simulated clock, ``send()`` to emit a frame on a link, and ``schedule()``
to request a timer wakeup.  All times are integer microseconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from . import wire
from .neighbor import Neighbor, SyncSession, SyncState
from .reliable import PendingStore, PendingTransmission
from .seq import Classification, InterfaceSeqState, NeighborSeqState, SeqStamp
from .tree import (
    AW_SELF,
    InterfaceTreeState,
    MetricPair,
    TreeEntry,
    TreeRef,
    TreeState,
    best_upstream_on_link,
    compute_tree_state,
    elect_assert_winner,
    select_parent,
)

US = 1_000_000  # microseconds per second


@dataclass(frozen=True)
class InterfaceConfig:
    id: str
    ip: str
    link: str
    cost: int = 10
    source_ips: FrozenSet[str] = frozenset()


@dataclass
class RouterConfig:
    name: str
    interfaces: List[InterfaceConfig] = field(default_factory=list)
    initial_downstream_interest: bool = True  # flood until pruned
    hello_period: int = 30 * US
    hold_time: int = 120  # seconds, carried in Hello
    sync_rtx_timeout: int = 3 * US
    sync_attempts: int = 5
    rtx_timeout: int = 1 * US
    sat_timeout: int = 210 * US
    al_hysteresis: int = 1 * US
    checkpoint_hello_interval: int = 3
    fragment_size: int = 100
    max_sn: int = 2**32 - 1
    initial_sn: int = 0
    rpc_preference: int = 0
    key: Optional[bytes] = None
    feasibility_enforced: bool = True  # test-only hook; never disable in production


@dataclass
class Interface:
    cfg: InterfaceConfig
    seq: InterfaceSeqState
    neighbors: Dict[str, Neighbor] = field(default_factory=dict)
    up: bool = True
    hello_count: int = 0


@dataclass(frozen=True)
class MRouteEntry:
    tree: TreeRef
    root_interface: Optional[str]
    forwarding_set: FrozenSet[str]


class Router:
    def __init__(
        self,
        config: RouterConfig,
        now: Callable[[], int],
        send: Callable[[str, Optional[str], wire.Message], None],
        schedule: Callable[[int, tuple], None],
        trace: Optional[Callable[[dict], None]] = None,
    ):
        self.cfg = config
        self.name = config.name
        self._now = now
        self._send = send  # (interface id, dst ip or None for multicast, message)
        self._schedule = schedule  # (delay us, timer tag)
        self._trace = trace
        self.interfaces: Dict[str, Interface] = {}
        for ic in config.interfaces:
            self.interfaces[ic.id] = Interface(
                cfg=ic,
                seq=InterfaceSeqState(
                    boot_time=max(now(), 1),
                    interface_sn=config.initial_sn,
                    max_sn=config.max_sn,
                ),
            )
        self.routes: Dict[str, Tuple[Optional[str], Optional[MetricPair]]] = {}
        self.trees: Dict[TreeRef, TreeEntry] = {}
        self.pending = PendingStore()

    # ------------------------------------------------------------------ startup

    def start(self) -> None:
        """Announce ourselves: one Hello per interface, then periodic."""
        for ifid in self.interfaces:
            self._emit_hello(ifid)
            self._schedule(self.cfg.hello_period, ("hello", ifid))

    # ------------------------------------------------------------------ helpers

    def _iface(self, ifid: str) -> Interface:
        return self.interfaces[ifid]

    def _tr(self, **rec) -> None:
        if self._trace is not None:
            rec.setdefault("router", self.name)
            self._trace(rec)

    def _emit(self, ifid: str, dst: Optional[str], body: wire.Body) -> None:
        iface = self._iface(ifid)
        msg = wire.Message(boot_time=iface.seq.boot_time, body=body)
        self._send(ifid, dst, msg)

    # ------------------------------------------------------------------ hello

    def _emit_hello(self, ifid: str) -> None:
        iface = self._iface(ifid)
        if not iface.up:
            return
        iface.hello_count += 1
        cp = None
        if iface.hello_count % self.cfg.checkpoint_hello_interval == 0:
            cp = iface.seq.checkpoint_sn_out
        self._emit(ifid, None, wire.Hello(hold_time=self.cfg.hold_time, checkpoint_sn=cp))

    def handle_timer(self, tag: tuple) -> None:
        kind = tag[0]
        now = self._now()
        if kind == "hello":
            ifid = tag[1]
            if ifid in self.interfaces and self._iface(ifid).up:
                self._emit_hello(ifid)
                self._schedule(self.cfg.hello_period, tag)
        elif kind == "liveness":
            _, ifid, ip = tag
            iface = self.interfaces.get(ifid)
            n = iface.neighbors.get(ip) if iface else None
            if n is None or n.liveness_deadline is None:
                return
            if now >= n.liveness_deadline:
                self._remove_neighbor(ifid, n, reason="liveness")
            else:
                self._schedule(n.liveness_deadline - now, tag)
        elif kind == "sync_rtx":
            _, ifid, ip = tag
            iface = self.interfaces.get(ifid)
            n = iface.neighbors.get(ip) if iface else None
            if n is None or n.session is None:
                return
            s = n.session
            if now < s.retransmit_deadline:
                self._schedule(s.retransmit_deadline - now, tag)
                return
            if s.attempts_left <= 0:
                self._abort_sync(ifid, n)
                return
            s.attempts_left -= 1
            if s.i_am_master and s.last_sent is not None:
                self._emit(ifid, n.ip, s.last_sent)
            s.retransmit_deadline = now + self.cfg.sync_rtx_timeout
            self._schedule(self.cfg.sync_rtx_timeout, tag)
        elif kind == "rtx":
            self._retransmit_due(now)
        elif kind == "sat":
            tref = tag[1]
            entry = self.trees.get(tref)
            if entry is None or entry.sat_deadline is None:
                return
            if now >= entry.sat_deadline:
                entry.source_active = False
                entry.sat_deadline = None
                self._reevaluate(tref)
            else:
                self._schedule(entry.sat_deadline - now, tag)

    # ------------------------------------------------------------------ control-plane dispatch

    def handle_control(self, ifid: str, src_ip: str, msg: wire.Message) -> None:
        iface = self.interfaces.get(ifid)
        if iface is None or not iface.up:
            return
        body = msg.body
        if isinstance(body, wire.Hello):
            self._handle_hello(ifid, src_ip, msg)
        elif isinstance(body, wire.Sync):
            self._handle_sync(ifid, src_ip, msg)
        elif isinstance(body, wire.Ack):
            self._handle_ack(ifid, src_ip, msg)
        else:
            self._handle_sequenced(ifid, src_ip, msg)

    def _handle_hello(self, ifid: str, src_ip: str, msg: wire.Message) -> None:
        iface = self._iface(ifid)
        body: wire.Hello = msg.body
        n = iface.neighbors.get(src_ip)
        if n is None:
            if body.hold_time == 0:
                return
            n = Neighbor(ip=src_ip, interface=ifid, boot_time=msg.boot_time)
            n.hold_time = body.hold_time
            iface.neighbors[src_ip] = n
            self._start_sync(ifid, n)
            return
        if msg.boot_time > n.boot_time:
            self._neighbor_rebooted(ifid, n, msg.boot_time)
            return
        if msg.boot_time < n.boot_time:
            return  # replay from a previous boot
        if body.hold_time == 0:
            self._remove_neighbor(ifid, n, reason="hold-time-zero")
            return
        n.hold_time = body.hold_time
        if n.synced:
            n.liveness_deadline = self._now() + body.hold_time * US
            self._schedule(body.hold_time * US, ("liveness", ifid, src_ip))
            if body.checkpoint_sn is not None:
                n.seq.apply_checkpoint(body.checkpoint_sn)

    def _handle_sequenced(self, ifid: str, src_ip: str, msg: wire.Message) -> None:
        iface = self._iface(ifid)
        body = msg.body
        n = iface.neighbors.get(src_ip)
        if n is None:
            # any control message announces a new neighbor; its state will
            # arrive via synchronization
            n = Neighbor(ip=src_ip, interface=ifid, boot_time=msg.boot_time)
            iface.neighbors[src_ip] = n
            self._start_sync(ifid, n)
            return
        if msg.boot_time > n.boot_time:
            self._neighbor_rebooted(ifid, n, msg.boot_time)
            return
        tref = TreeRef(body.source, body.group)
        stamp = SeqStamp(msg.boot_time, body.sn)
        result = n.seq.classify(tref, stamp)
        if result is Classification.REQUIRES_SYNC:
            return  # handled above via boot time; unreachable
        if n.seq.should_ack(tref, stamp):
            self._send_ack(ifid, n, tref, stamp)
        if result is not Classification.ACCEPT:
            return
        if isinstance(body, wire.IamUpstream):
            n.interest.pop(tref, None)  # also means NOT INTERESTED
            n.upstream[tref] = MetricPair(body.rpc_preference, body.rpc)
            self._reevaluate(tref, cause=("upstream_msg", ifid, src_ip))
        elif isinstance(body, wire.IamNoLongerUpstream):
            n.upstream.pop(tref, None)
            self._reevaluate(tref)
        elif isinstance(body, (wire.Interest, wire.NoInterest)):
            n.upstream.pop(tref, None)  # also means IamNoLongerUpstream
            n.interest[tref] = isinstance(body, wire.Interest)
            self._reevaluate(tref)

    def _send_ack(self, ifid: str, n: Neighbor, tref: TreeRef, stamp: SeqStamp) -> None:
        self._emit(
            ifid,
            n.ip,
            wire.Ack(
                neighbor_sn=stamp.sn,
                source=tref.source,
                group=tref.group,
                neighbor_boot_time=stamp.boot_time,
                neighbor_snapshot_sn=n.seq.neighbor_snapshot_sn,
                my_snapshot_sn=n.seq.my_snapshot_sn_for_neighbor,
            ),
        )

    def _handle_ack(self, ifid: str, src_ip: str, msg: wire.Message) -> None:
        iface = self._iface(ifid)
        body: wire.Ack = msg.body
        n = iface.neighbors.get(src_ip)
        if n is None:
            n = Neighbor(ip=src_ip, interface=ifid, boot_time=msg.boot_time)
            iface.neighbors[src_ip] = n
            self._start_sync(ifid, n)
            return
        if msg.boot_time > n.boot_time:
            self._neighbor_rebooted(ifid, n, msg.boot_time)
            return
        if msg.boot_time < n.boot_time:
            return
        # mutual-number validation: myBT, mySSN, neiBT, neiSSN must all match
        if body.neighbor_boot_time != iface.seq.boot_time:
            return
        if body.neighbor_snapshot_sn != n.seq.my_snapshot_sn_for_neighbor:
            return
        if body.my_snapshot_sn != n.seq.neighbor_snapshot_sn:
            return
        tref = TreeRef(body.source, body.group)
        entry = self.pending.find(ifid, tref, body.neighbor_sn)
        if entry is None or entry.stamp.boot_time != iface.seq.boot_time:
            return
        entry.awaiting.discard(src_ip)
        if not entry.awaiting:
            self._complete_pending(entry)

    # ------------------------------------------------------------------ synchronization

    def _neighbor_rebooted(self, ifid: str, n: Neighbor, new_bt: int) -> None:
        """Higher BootTime seen: drop everything we knew and resync."""
        self._clear_neighbor_tree_state(ifid, n)
        n.boot_time = new_bt
        n.sync_state = SyncState.UNKNOWN
        n.session = None
        n.seq = NeighborSeqState(neighbor_boot_time=new_bt)
        self._start_sync(ifid, n)

    def _clear_neighbor_tree_state(self, ifid: str, n: Neighbor) -> None:
        affected = set(n.upstream) | set(n.interest)
        n.upstream.clear()
        n.interest.clear()
        for tref in sorted(affected):
            self._reevaluate(tref)

    def _build_snapshot(self, ifid: str) -> List[wire.SyncTreeRecord]:
        out = []
        for tref in sorted(self.trees):
            entry = self.trees[tref]
            if entry.state is not TreeState.ACTIVE or entry.metric is None:
                continue
            st = entry.per_if.get(ifid)
            if st is None or st.role_root or st.source_attached:
                continue
            out.append(
                wire.SyncTreeRecord(
                    tref.source, tref.group, entry.metric.rpc_preference, entry.metric.rpc
                )
            )
        return out

    def _cancel_pending_below_snapshot(self, ifid: str, ip: str, stamp: SeqStamp) -> None:
        for e in self.pending.toward_neighbor_below(ifid, ip, stamp):
            e.awaiting.discard(ip)
            if not e.awaiting:
                self._complete_pending(e)

    def _start_sync(self, ifid: str, n: Neighbor) -> None:
        """Open a session toward the neighbor with ourselves as Master."""
        iface = self._iface(ifid)
        self._clear_neighbor_tree_state(ifid, n)
        ssn, _overflow = iface.seq.allocate(self._now())
        iface.seq.register_pending(ssn)
        stamp = SeqStamp(iface.seq.boot_time, ssn)
        self._cancel_pending_below_snapshot(ifid, n.ip, stamp)
        n.seq = NeighborSeqState(
            neighbor_boot_time=n.boot_time, my_snapshot_sn_for_neighbor=ssn
        )
        n.session = SyncSession(
            i_am_master=True,
            my_ssn=ssn,
            neighbor_boot_time=n.boot_time,
            snapshot=self._build_snapshot(ifid),
            fragment_size=self.cfg.fragment_size,
            attempts_left=self.cfg.sync_attempts,
        )
        n.sync_state = SyncState.MASTER
        self._sync_send_master(ifid, n)

    def _sync_send_master(self, ifid: str, n: Neighbor) -> None:
        s = n.session
        k = s.sync_sn
        more = s.more_at(k)
        body = wire.Sync(
            my_snapshot_sn=s.my_ssn,
            neighbor_snapshot_sn=s.neighbor_ssn,
            neighbor_boot_time=s.neighbor_boot_time,
            master=True,
            more=more,
            sync_sn=k,
            trees=tuple(s.fragment(k)),
            hello_hold_time=None if more else self.cfg.hold_time,
        )
        s.sent_more = more
        s.last_sent = body
        s.retransmit_deadline = self._now() + self.cfg.sync_rtx_timeout
        self._schedule(self.cfg.sync_rtx_timeout, ("sync_rtx", ifid, n.ip))
        self._emit(ifid, n.ip, body)

    def _become_slave(self, ifid: str, n: Neighbor, msg: wire.Message) -> None:
        iface = self._iface(ifid)
        body: wire.Sync = msg.body
        if n.session is not None and not n.session.i_am_master:
            # restarted master session: adopt the new identifiers
            session = n.session
            session.neighbor_ssn = body.my_snapshot_sn
            session.neighbor_boot_time = msg.boot_time
            session.sync_sn = 0
            session.received = []
        elif n.session is not None and n.session.i_am_master:
            # lost the master tiebreak; keep our snapshot and SSN
            session = n.session
            session.i_am_master = False
            session.neighbor_ssn = body.my_snapshot_sn
            session.neighbor_boot_time = msg.boot_time
            session.sync_sn = 0
            session.received = []
        else:
            self._clear_neighbor_tree_state(ifid, n)
            ssn, _overflow = iface.seq.allocate(self._now())
            iface.seq.register_pending(ssn)
            stamp = SeqStamp(iface.seq.boot_time, ssn)
            self._cancel_pending_below_snapshot(ifid, n.ip, stamp)
            session = SyncSession(
                i_am_master=False,
                my_ssn=ssn,
                neighbor_boot_time=msg.boot_time,
                neighbor_ssn=body.my_snapshot_sn,
                snapshot=self._build_snapshot(ifid),
                fragment_size=self.cfg.fragment_size,
                attempts_left=self.cfg.sync_attempts,
            )
            n.session = session
        n.boot_time = msg.boot_time
        n.sync_state = SyncState.SLAVE
        n.seq = NeighborSeqState(
            neighbor_boot_time=msg.boot_time,
            neighbor_snapshot_sn=body.my_snapshot_sn,
            my_snapshot_sn_for_neighbor=session.my_ssn,
        )
        session.retransmit_deadline = (
            self._now() + self.cfg.sync_attempts * self.cfg.sync_rtx_timeout
        )
        session.attempts_left = 0  # slave never retransmits on its own
        self._schedule(
            self.cfg.sync_attempts * self.cfg.sync_rtx_timeout, ("sync_rtx", ifid, n.ip)
        )
        self._slave_process(ifid, n, msg)

    def _slave_echo(self, ifid: str, n: Neighbor, k: int, master_more: bool) -> None:
        s = n.session
        more = s.more_at(k)
        body = wire.Sync(
            my_snapshot_sn=s.my_ssn,
            neighbor_snapshot_sn=s.neighbor_ssn,
            neighbor_boot_time=s.neighbor_boot_time,
            master=False,
            more=more,
            sync_sn=k,
            trees=tuple(s.fragment(k)),
            hello_hold_time=None if more else self.cfg.hold_time,
        )
        s.last_sent = body
        self._emit(ifid, n.ip, body)
        if not master_more and not more and k >= 1:
            n.last_echo = body
            self._complete_sync(ifid, n)

    def _slave_process(self, ifid: str, n: Neighbor, msg: wire.Message) -> None:
        s = n.session
        body: wire.Sync = msg.body
        k = body.sync_sn
        if k == s.sync_sn:
            s.received.extend(body.trees)
            if body.hello_hold_time is not None:
                n.hold_time = body.hello_hold_time
            s.sync_sn = k + 1
            s.retransmit_deadline = (
                self._now() + self.cfg.sync_attempts * self.cfg.sync_rtx_timeout
            )
            self._slave_echo(ifid, n, k, body.more)
        elif k == s.sync_sn - 1 and s.last_sent is not None:
            self._emit(ifid, n.ip, s.last_sent)  # echo lost: repeat it

    def _handle_sync(self, ifid: str, src_ip: str, msg: wire.Message) -> None:
        iface = self._iface(ifid)
        body: wire.Sync = msg.body
        n = iface.neighbors.get(src_ip)
        if n is None:
            if not body.master or body.sync_sn != 0:
                return
            n = Neighbor(ip=src_ip, interface=ifid, boot_time=msg.boot_time)
            iface.neighbors[src_ip] = n
            self._become_slave(ifid, n, msg)
            return
        if msg.boot_time > n.boot_time:
            # neighbor rebooted; if it opens a session we follow as slave
            self._clear_neighbor_tree_state(ifid, n)
            n.session = None
            n.sync_state = SyncState.UNKNOWN
            n.boot_time = msg.boot_time
            n.seq = NeighborSeqState(neighbor_boot_time=msg.boot_time)
            if body.master and body.sync_sn == 0:
                self._become_slave(ifid, n, msg)
            else:
                self._start_sync(ifid, n)
            return
        if msg.boot_time < n.boot_time:
            return
        # stale-period rejection: the peer's first Sync must carry numbers
        # consistent with what we currently are
        if body.neighbor_boot_time not in (0, iface.seq.boot_time):
            return
        if n.session is None:
            if n.synced and body.master:
                if body.my_snapshot_sn <= n.seq.neighbor_snapshot_sn:
                    # replay from a finished period -- but repeat our final
                    # echo if the master never saw it
                    if (
                        n.last_echo is not None
                        and body.my_snapshot_sn == n.seq.neighbor_snapshot_sn
                        and body.sync_sn == n.last_echo.sync_sn
                    ):
                        self._emit(ifid, src_ip, n.last_echo)
                    return
                if body.sync_sn == 0:
                    self._become_slave(ifid, n, msg)
                return
            if body.master and body.sync_sn == 0:
                if body.neighbor_snapshot_sn not in (0, n.seq.my_snapshot_sn_for_neighbor):
                    return
                self._become_slave(ifid, n, msg)
            return
        s = n.session
        if s.i_am_master:
            if body.master:
                # simultaneous masters: higher interface IP keeps the role
                if int(IPv4Address(src_ip)) > int(IPv4Address(iface.cfg.ip)) and body.sync_sn == 0:
                    self._become_slave(ifid, n, msg)
                return
            # slave echo
            if msg.boot_time != s.neighbor_boot_time:
                return
            if body.neighbor_snapshot_sn != s.my_ssn:
                return
            if s.neighbor_ssn and body.my_snapshot_sn != s.neighbor_ssn:
                return
            if body.sync_sn != s.sync_sn:
                return
            if not s.neighbor_ssn:
                s.neighbor_ssn = body.my_snapshot_sn
                n.seq.neighbor_snapshot_sn = body.my_snapshot_sn
            s.received.extend(body.trees)
            if body.hello_hold_time is not None:
                n.hold_time = body.hello_hold_time
            if not s.sent_more and not body.more and s.sync_sn >= 1:
                self._complete_sync(ifid, n)
                return
            s.sync_sn += 1
            s.attempts_left = self.cfg.sync_attempts
            self._sync_send_master(ifid, n)
        else:
            if not body.master:
                return
            if body.my_snapshot_sn > s.neighbor_ssn and body.sync_sn == 0:
                self._become_slave(ifid, n, msg)  # master restarted its session
                return
            if msg.boot_time != s.neighbor_boot_time or body.my_snapshot_sn != s.neighbor_ssn:
                return
            if body.neighbor_snapshot_sn not in (0, s.my_ssn):
                return
            self._slave_process(ifid, n, msg)

    def _complete_sync(self, ifid: str, n: Neighbor) -> None:
        iface = self._iface(ifid)
        s = n.session
        n.session = None
        n.sync_state = SyncState.SYNCED
        iface.seq.mark_complete(s.my_ssn)
        n.seq.neighbor_snapshot_sn = s.neighbor_ssn
        n.seq.my_snapshot_sn_for_neighbor = s.my_ssn
        if n.hold_time:
            n.liveness_deadline = self._now() + n.hold_time * US
            self._schedule(n.hold_time * US, ("liveness", ifid, n.ip))
        for rec in s.received:
            tref = TreeRef(rec.source, rec.group)
            if n.seq.per_tree_sn.get(tref, 0) > s.neighbor_ssn:
                continue  # fresher info arrived concurrently with the sync
            n.upstream[tref] = MetricPair(rec.rpc_preference, rec.rpc)
            n.interest.pop(tref, None)
        self._tr(ev="synced", iface=ifid, neighbor=n.ip)
        cause = ("synced", ifid, n.ip)
        for tref in sorted(set(n.upstream) - set(self.trees)):
            self._reevaluate(tref, cause=cause)
        self._reevaluate_all(cause=cause)

    def _abort_sync(self, ifid: str, n: Neighbor) -> None:
        self._remove_neighbor(ifid, n, reason="sync-abort")

    # ------------------------------------------------------------------ neighbor removal

    def _remove_neighbor(self, ifid: str, n: Neighbor, reason: str) -> None:
        iface = self._iface(ifid)
        if n.session is not None:
            iface.seq.mark_complete(n.session.my_ssn)
        iface.neighbors.pop(n.ip, None)
        for e in list(self.pending.entries):
            if e.interface == ifid and n.ip in e.awaiting:
                e.awaiting.discard(n.ip)
                if not e.awaiting:
                    self._complete_pending(e)
        self._tr(ev="neighbor_removed", iface=ifid, neighbor=n.ip, reason=reason)
        self._reevaluate_all(cause=("neighbor_removed", ifid, n.ip))

    # ------------------------------------------------------------------ reliable transmission

    def _complete_pending(self, e: PendingTransmission) -> None:
        iface = self.interfaces.get(e.interface)
        if iface is not None and e.stamp.boot_time == iface.seq.boot_time:
            iface.seq.mark_complete(e.stamp.sn)
        self.pending.remove(e)

    def _send_reliable(
        self,
        ifid: str,
        tref: TreeRef,
        make_body: Callable[[int], wire.Body],
        unicast_to: Optional[str] = None,
    ) -> None:
        iface = self._iface(ifid)
        sn, _overflow = iface.seq.allocate(self._now())
        stamp = SeqStamp(iface.seq.boot_time, sn)
        body = make_body(sn)
        if unicast_to is None:
            for e in self.pending.older_upstream(ifid, tref, stamp):
                self._complete_pending(e)
            targets = {
                ip
                for ip, nb in iface.neighbors.items()
                if nb.synced or nb.in_session
            }
        else:
            for e in self.pending.older_unicast(ifid, tref, unicast_to, stamp):
                self._complete_pending(e)
            targets = {unicast_to}
        self._emit(ifid, unicast_to, body)
        if not targets:
            return
        iface.seq.register_pending(sn)
        self.pending.add(
            PendingTransmission(
                interface=ifid,
                tree=tref,
                stamp=stamp,
                message=wire.Message(boot_time=stamp.boot_time, body=body),
                awaiting=targets,
                retransmit_deadline=self._now() + self.cfg.rtx_timeout,
                unicast_target=unicast_to,
            )
        )
        self._schedule(self.cfg.rtx_timeout, ("rtx",))

    def _retransmit_due(self, now: int) -> None:
        for e in self.pending.due(now):
            iface = self.interfaces.get(e.interface)
            if iface is None or not iface.up:
                self.pending.remove(e)
                continue
            e.awaiting = {ip for ip in e.awaiting if ip in iface.neighbors}
            if not e.awaiting:
                self._complete_pending(e)
                continue
            for ip in sorted(e.awaiting):
                self._send(e.interface, ip, e.message)
            e.retransmit_deadline = now + self.cfg.rtx_timeout
        nxt = self.pending.next_deadline()
        if nxt is not None:
            self._schedule(max(nxt - now, 0), ("rtx",))

    # ------------------------------------------------------------------ routes / membership / data

    def update_routes(
        self, routes: Dict[str, Tuple[Optional[str], Optional[MetricPair]]]
    ) -> None:
        """Unicast routing notification: source ip -> (root interface, metric)."""
        old = self.routes
        self.routes = dict(routes)
        changed = {s for s in set(old) | set(routes) if old.get(s) != routes.get(s)}
        for tref in sorted(self.trees):
            if tref.source in changed:
                self._reevaluate(tref)

    def set_local_members(self, ifid: str, tref: TreeRef, members: bool) -> None:
        entry = self._get_or_create(tref)
        st = entry.per_if.get(ifid)
        if st is not None:
            st.local_members = members
        else:
            entry.per_if[ifid] = InterfaceTreeState(local_members=members)
        self._reevaluate(tref)

    def handle_data(self, ifid: str, source: str, group: str) -> List[str]:
        """RPF check + forwarding decision; returns output interfaces."""
        iface = self.interfaces.get(ifid)
        if iface is None or not iface.up:
            return []
        tref = TreeRef(source, group)
        now = self._now()
        if source in iface.cfg.source_ips:
            entry = self._get_or_create(tref)
            entry.sat_deadline = now + self.cfg.sat_timeout
            self._schedule(self.cfg.sat_timeout, ("sat", tref))
            if not entry.source_active:
                entry.source_active = True
                self._reevaluate(tref)
            entry = self.trees.get(tref)
        else:
            entry = self.trees.get(tref)
        if entry is None:
            return []
        if entry.root_interface != ifid:
            return []  # RPF check
        outs = []
        for oifid in sorted(entry.per_if):
            if oifid == ifid:
                continue
            st = entry.per_if[oifid]
            oif = self.interfaces.get(oifid)
            if oif is None or not oif.up:
                continue
            if st.forwarding:
                outs.append(oifid)
            elif (
                not st.role_root
                and st.al_hysteresis_deadline is not None
                and now < st.al_hysteresis_deadline
            ):
                outs.append(oifid)
        return outs

    def reboot_interface(self, ifid: str) -> None:
        """Restart the protocol on one interface: fresh BootTime and SN
        space, all neighbor knowledge dropped."""
        iface = self._iface(ifid)
        iface.seq = InterfaceSeqState(
            boot_time=max(self._now(), iface.seq.boot_time + 1),
            interface_sn=self.cfg.initial_sn,
            max_sn=self.cfg.max_sn,
        )
        iface.neighbors.clear()
        iface.hello_count = 0
        for e in list(self.pending.entries):
            if e.interface == ifid:
                self.pending.remove(e)
        self._reevaluate_all(cause=("interface_reboot", ifid))
        self._emit_hello(ifid)

    # ------------------------------------------------------------------ tree evaluation

    def _get_or_create(self, tref: TreeRef) -> TreeEntry:
        entry = self.trees.get(tref)
        if entry is None:
            entry = TreeEntry(tree=tref)
            for ifid in self.interfaces:
                entry.per_if[ifid] = InterfaceTreeState()
            self.trees[tref] = entry
        return entry

    def _route_for(self, tref: TreeRef) -> Tuple[Optional[str], Optional[MetricPair], bool]:
        """Root interface, own metric, originator flag for one tree."""
        best = None
        for ifid in sorted(self.interfaces):
            iface = self.interfaces[ifid]
            if iface.up and tref.source in iface.cfg.source_ips:
                cand = (iface.cfg.cost, ifid)
                if best is None or cand < best:
                    best = cand
        if best is not None:
            cost, ifid = best
            return ifid, MetricPair(self.cfg.rpc_preference, cost), True
        root, metric = self.routes.get(tref.source, (None, None))
        if root is not None and root not in self.interfaces:
            root = None
        return root, metric, False

    def _upstream_candidates(self, ifid: str, tref: TreeRef) -> List[Tuple[MetricPair, str]]:
        iface = self.interfaces[ifid]
        out = []
        for ip, nb in iface.neighbors.items():
            if not (nb.synced or nb.in_session):
                continue
            m = nb.upstream.get(tref)
            if m is not None:
                out.append((MetricPair(m.rpc_preference, m.rpc, ip), ip))
        return out

    def _downstream_interest(self, ifid: str, tref: TreeRef, st: InterfaceTreeState) -> bool:
        if st.source_attached:
            return False
        if st.local_members:
            return True
        iface = self.interfaces[ifid]
        nbrs = [nb for nb in iface.neighbors.values() if nb.synced or nb.in_session]
        if not nbrs:
            if st.local_members is None:
                return self.cfg.initial_downstream_interest
            return False
        for nb in nbrs:
            if tref in nb.interest:
                if nb.interest[tref]:
                    return True
            elif tref not in nb.upstream and self.cfg.initial_downstream_interest:
                return True
        return False

    def _snapshot_view(self, entry: TreeEntry) -> dict:
        return {
            "state": entry.state,
            "metric": entry.metric,
            "root": entry.root_interface,
            "interested": entry.router_interested,
            "per_if": {
                ifid: (st.role_root, st.assert_winner, st.forwarding)
                for ifid, st in entry.per_if.items()
            },
        }

    def _reevaluate_all(self, cause=None) -> None:
        for tref in sorted(self.trees):
            if tref in self.trees:
                self._reevaluate(tref, cause=cause)

    def _reevaluate(self, tref: TreeRef, cause=None) -> None:
        entry = self.trees.get(tref)
        if entry is None:
            # state about an unknown tree may have appeared on a neighbor
            if not self._tree_known_somewhere(tref):
                return
            entry = self._get_or_create(tref)
        for ifid in self.interfaces:
            entry.per_if.setdefault(ifid, InterfaceTreeState())
        old = self._snapshot_view(entry)
        now = self._now()

        root, metric, is_orig = self._route_for(tref)
        entry.is_originator = is_orig
        entry.metric = metric
        entry.root_interface = root

        candidates = {
            ifid: self._upstream_candidates(ifid, tref) for ifid in self.interfaces
        }
        has_upstream = any(candidates.values())
        parent = None
        if not is_orig and root is not None:
            if self.cfg.feasibility_enforced:
                pip = select_parent(candidates[root], metric)
            else:
                pip = best_upstream_on_link(candidates[root])
            parent = (root, pip) if pip is not None else None
        entry.parent = parent
        entry.state = compute_tree_state(is_orig, entry.source_active, parent, has_upstream)

        if entry.state is not TreeState.ACTIVE:
            # interest records are only meaningful while ACTIVE
            for iface in self.interfaces.values():
                for nb in iface.neighbors.values():
                    nb.interest.pop(tref, None)

        for ifid in sorted(self.interfaces):
            iface = self.interfaces[ifid]
            st = entry.per_if[ifid]
            st.role_root = ifid == root
            st.source_attached = tref.source in iface.cfg.source_ips
            aw, best = elect_assert_winner(
                entry.state, st.role_root, candidates[ifid], metric, iface.cfg.ip
            )
            was_forwarding = st.forwarding
            st.assert_winner = aw
            st.best_upstream = best
            st.downstream_interest = (
                False if st.role_root else self._downstream_interest(ifid, tref, st)
            )
            st.forwarding = (
                not st.role_root
                and st.assert_winner == AW_SELF
                and st.downstream_interest
                and not st.source_attached
            )
            if was_forwarding and not st.forwarding and old["per_if"].get(ifid, (False, None, False))[1] == AW_SELF and aw != AW_SELF:
                st.al_hysteresis_deadline = now + self.cfg.al_hysteresis
            elif st.forwarding:
                st.al_hysteresis_deadline = None
        entry.router_interested = any(
            st.forwarding for st in entry.per_if.values()
        )

        self._emit_tree_messages(entry, old, cause)
        if old["state"] is not entry.state:
            self._tr(
                ev="tree_state",
                tree=list(tref),
                old=old["state"].value,
                new=entry.state.value,
            )
        # garbage-collect dead entries
        if (
            entry.state is TreeState.INACTIVE
            and not entry.source_active
            and not any(st.local_members for st in entry.per_if.values())
        ):
            del self.trees[tref]

    def _tree_known_somewhere(self, tref: TreeRef) -> bool:
        for iface in self.interfaces.values():
            for nb in iface.neighbors.values():
                if tref in nb.upstream or tref in nb.interest:
                    return True
        return False

    def _nonroot_sendable(self, entry: TreeEntry, view=None) -> List[str]:
        """Non-root, non-source-attached, up interfaces (current view)."""
        out = []
        for ifid in sorted(self.interfaces):
            st = entry.per_if[ifid]
            if st.role_root or st.source_attached or not self.interfaces[ifid].up:
                continue
            out.append(ifid)
        return out

    def _emit_tree_messages(self, entry: TreeEntry, old: dict, cause) -> None:
        tref = entry.tree
        new_state = entry.state
        old_state = old["state"]
        old_root = old["root"]
        new_root = entry.root_interface
        metric_changed = old["metric"] != entry.metric

        def up_body(sn: int) -> wire.Body:
            return wire.IamUpstream(
                sn, tref.source, tref.group,
                entry.metric.rpc_preference, entry.metric.rpc,
            )

        def down_body(sn: int) -> wire.Body:
            return wire.IamNoLongerUpstream(sn, tref.source, tref.group)

        def src_attached(ifid: str) -> bool:
            return tref.source in self.interfaces[ifid].cfg.source_ips

        if new_state is TreeState.ACTIVE:
            if old_state is not TreeState.ACTIVE:
                # action A1: announce ourselves on every non-root interface
                for ifid in self._nonroot_sendable(entry):
                    self._send_reliable(ifid, tref, up_body)
            elif new_root != old_root:
                if old_root is not None and old_root in self.interfaces and not src_attached(old_root):
                    if self.interfaces[old_root].up:
                        self._send_reliable(old_root, tref, up_body)
                if new_root is not None and not src_attached(new_root):
                    if self.interfaces[new_root].up:
                        self._send_reliable(new_root, tref, down_body)
                if metric_changed:
                    for ifid in self._nonroot_sendable(entry):
                        if ifid != old_root:
                            self._send_reliable(ifid, tref, up_body)
            elif metric_changed:
                for ifid in self._nonroot_sendable(entry):
                    self._send_reliable(ifid, tref, up_body)
        elif old_state is TreeState.ACTIVE:
            # action A2 on the previous non-root set
            for ifid in sorted(self.interfaces):
                was_root = ifid == old_root
                if was_root or src_attached(ifid) or not self.interfaces[ifid].up:
                    continue
                self._send_reliable(ifid, tref, down_body)

        self._emit_interest_messages(entry, old, cause)

    def _emit_interest_messages(self, entry: TreeEntry, old: dict, cause) -> None:
        if entry.state not in (TreeState.ACTIVE, TreeState.UNSURE):
            return
        tref = entry.tree
        interest_changed = old["interested"] != entry.router_interested
        root_changed = old["root"] != entry.root_interface
        # A winner elected because the previous winner died already stores
        # our interest (every non-root interface records it), so no
        # restatement is needed in that case.
        silent_aw_change = cause is not None and cause[0] == "neighbor_removed"
        sends: List[Tuple[str, str, bool]] = []  # (ifid, target, interested)
        for ifid in sorted(self.interfaces):
            st = entry.per_if[ifid]
            if st.source_attached or not self.interfaces[ifid].up:
                continue
            old_if = old["per_if"].get(ifid, (False, None, False))
            aw_changed = old_if[1] != st.assert_winner and not silent_aw_change
            became = (ifid == entry.root_interface) != (ifid == old["root"])
            from_aw = (
                cause is not None
                and cause[0] == "upstream_msg"
                and cause[1] == ifid
                and st.assert_winner == cause[2]
                and old_if[1] == cause[2]
            )
            if st.role_root:
                if interest_changed or aw_changed or root_changed or from_aw:
                    if st.best_upstream is not None:
                        sends.append((ifid, st.best_upstream, entry.router_interested))
            else:
                if entry.state is TreeState.ACTIVE:
                    continue  # our upstream message already means NoInterest
                if aw_changed or became or from_aw:
                    if st.best_upstream is not None:
                        sends.append((ifid, st.best_upstream, False))
        for ifid, target, interested in sends:
            body_type = wire.Interest if interested else wire.NoInterest

            def body(sn: int, bt=body_type) -> wire.Body:
                return bt(sn, tref.source, tref.group)

            self._send_reliable(ifid, tref, body, unicast_to=target)

    # ------------------------------------------------------------------ views

    def mroutes(self) -> List[MRouteEntry]:
        out = []
        for tref in sorted(self.trees):
            entry = self.trees[tref]
            fwd = frozenset(
                ifid for ifid, st in entry.per_if.items() if st.forwarding
            )
            out.append(MRouteEntry(tref, entry.root_interface, fwd))
        return out

    def state_digest(self) -> str:
        """Canonical rendering of the protocol state.  Clock-dependent
        numbers (BootTimes, SNs, timer deadlines) are deliberately left
        out so that digests compare equal across runs that converge to the
        same protocol state by different paths."""
        lines = []
        for tref in sorted(self.trees):
            e = self.trees[tref]
            key = "tree %s %s" % tref
            metric = "-" if e.metric is None else "%d:%d" % (e.metric.rpc_preference, e.metric.rpc)
            parent = "-" if e.parent is None else "%s/%s" % e.parent
            lines.append(
                "%s state=%s orig=%d live=%d root=%s metric=%s parent=%s int=%d"
                % (
                    key,
                    e.state.value,
                    e.is_originator,
                    e.source_active,
                    e.root_interface or "-",
                    metric,
                    parent,
                    e.router_interested,
                )
            )
            for ifid in sorted(e.per_if):
                st = e.per_if[ifid]
                lines.append(
                    "%s if %s role=%s aw=%s di=%d fwd=%d mem=%s"
                    % (
                        key,
                        ifid,
                        "root" if st.role_root else "nonroot",
                        st.assert_winner or "-",
                        st.downstream_interest,
                        st.forwarding,
                        "-" if st.local_members is None else int(st.local_members),
                    )
                )
        for ifid in sorted(self.interfaces):
            iface = self.interfaces[ifid]
            for ip in sorted(iface.neighbors):
                nb = iface.neighbors[ip]
                lines.append("nbr %s %s %s" % (ifid, ip, nb.sync_state.value))
                for tref in sorted(nb.upstream):
                    m = nb.upstream[tref]
                    lines.append(
                        "nbr %s %s up %s %s %d:%d"
                        % (ifid, ip, tref.source, tref.group, m.rpc_preference, m.rpc)
                    )
                for tref in sorted(nb.interest):
                    lines.append(
                        "nbr %s %s int %s %s %d"
                        % (ifid, ip, tref.source, tref.group, nb.interest[tref])
                    )
        for m in self.mroutes():
            lines.append(
                "mroute %s %s root=%s out=%s"
                % (
                    m.tree.source,
                    m.tree.group,
                    m.root_interface or "-",
                    ",".join(sorted(m.forwarding_set)),
                )
            )
        return "\n".join(sorted(lines))
