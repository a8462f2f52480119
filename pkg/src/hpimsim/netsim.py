"""Deterministic discrete-event network simulator.

Topology and scenario files are line-oriented text with `#` comments (the
grammar is documented in docs/file_formats.md).  All simulated time is
integer microseconds.  A run is fully determined by (topology, scenario,
seed).
"""
from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Set, Tuple

from . import wire
from .router import US, InterfaceConfig, MRouteEntry, Router, RouterConfig
from .tree import MetricPair, TreeRef, TreeState


class ScenarioInvalid(Exception):
    pass


class UnknownFrame(Exception):
    pass


DEFAULT_LINK_DELAY = 1000  # 1 ms


@dataclass
class LinkModel:
    delay_lo: int = DEFAULT_LINK_DELAY
    delay_hi: int = DEFAULT_LINK_DELAY
    loss_prob: float = 0.0
    duplicate_prob: float = 0.0
    reorder: bool = False


@dataclass
class Link:
    id: str
    kind: str  # p2p | shared
    model: LinkModel = field(default_factory=LinkModel)
    up: bool = True
    attached: List[Tuple[str, str, str]] = field(default_factory=list)  # (router, ifid, ip)
    sources: List[str] = field(default_factory=list)  # source ips on this link
    hosts: List[str] = field(default_factory=list)


@dataclass
class Topology:
    routers: Dict[str, RouterConfig] = field(default_factory=dict)
    links: Dict[str, Link] = field(default_factory=dict)
    sources: Dict[str, Tuple[str, str]] = field(default_factory=dict)  # name -> (ip, link)
    hosts: Dict[str, str] = field(default_factory=dict)  # name -> link
    notify_delay: Dict[str, int] = field(default_factory=dict)
    key: Optional[bytes] = None
    data_period: int = 60 * US
    end_time: Optional[int] = None


def parse_time(text: str) -> int:
    if text.endswith("us"):
        return int(text[:-2])
    if text.endswith("ms"):
        return int(float(text[:-2]) * 1000)
    if text.endswith("s"):
        return int(float(text[:-1]) * US)
    return int(text)


_BOOL = {"0": False, "1": True, "true": True, "false": False}

# RouterConfig fields settable from `param` lines (times in seconds unless noted)
_TIME_PARAMS = {
    "hello_period",
    "sync_rtx_timeout",
    "rtx_timeout",
    "sat_timeout",
    "al_hysteresis",
}
_INT_PARAMS = {
    "hold_time",
    "sync_attempts",
    "checkpoint_hello_interval",
    "fragment_size",
    "max_sn",
    "initial_sn",
    "rpc_preference",
}


def load_topology(path: str, overrides: Optional[dict] = None) -> Topology:
    topo = Topology()
    params: dict = {}
    iface_lines = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kw = parts[0]
            try:
                if kw == "link":
                    topo.links[parts[1]] = Link(id=parts[1], kind=parts[2])
                elif kw == "router":
                    topo.routers[parts[1]] = RouterConfig(name=parts[1])
                elif kw == "iface":
                    # iface <router> <id> <ip> <link> <cost>
                    iface_lines.append((parts[1], parts[2], parts[3], parts[4], int(parts[5])))
                elif kw == "source":
                    topo.sources[parts[1]] = (parts[2], parts[3])
                elif kw == "host":
                    topo.hosts[parts[1]] = parts[2]
                elif kw == "notify_delay":
                    topo.notify_delay[parts[1]] = parse_time(parts[2])
                elif kw == "param":
                    params[parts[1]] = parts[2]
                else:
                    raise ScenarioInvalid("%s:%d: unknown keyword %r" % (path, lineno, kw))
            except (IndexError, ValueError) as exc:
                raise ScenarioInvalid("%s:%d: %s" % (path, lineno, exc))
    if overrides:
        params.update({k: str(v) for k, v in overrides.items() if v is not None})
    if "key" in params:
        topo.key = params.pop("key").encode()
    if "data_period" in params:
        topo.data_period = parse_time(params.pop("data_period"))
    if "end" in params:
        topo.end_time = parse_time(params.pop("end"))
    for rname, ifid, ip, link, cost in iface_lines:
        if rname not in topo.routers:
            raise ScenarioInvalid("interface for unknown router %s" % rname)
        if link not in topo.links:
            raise ScenarioInvalid("interface on unknown link %s" % link)
        source_ips = frozenset(ip_ for ip_, l in topo.sources.values() if l == link)
        topo.routers[rname].interfaces.append(
            InterfaceConfig(id=ifid, ip=ip, link=link, cost=cost, source_ips=source_ips)
        )
        topo.links[link].attached.append((rname, ifid, ip))
    for name, (ip, link) in topo.sources.items():
        if link not in topo.links:
            raise ScenarioInvalid("source %s on unknown link %s" % (name, link))
        topo.links[link].sources.append(ip)
    for name, link in topo.hosts.items():
        if link not in topo.links:
            raise ScenarioInvalid("host %s on unknown link %s" % (name, link))
        topo.links[link].hosts.append(name)
    for link in topo.links.values():
        if link.kind not in ("p2p", "shared"):
            raise ScenarioInvalid("link %s has unknown kind %s" % (link.id, link.kind))
        if link.kind == "p2p" and len(link.attached) > 2:
            raise ScenarioInvalid("p2p link %s attaches %d interfaces" % (link.id, len(link.attached)))
    for cfg in topo.routers.values():
        for key, val in params.items():
            _apply_param(cfg, key, val)
        cfg.key = topo.key
    return topo


def _apply_param(cfg: RouterConfig, key: str, val: str) -> None:
    if key == "initial_downstream_interest":
        cfg.initial_downstream_interest = _BOOL[val.lower()]
    elif key == "feasibility_enforced":
        cfg.feasibility_enforced = _BOOL[val.lower()]
    elif key in _TIME_PARAMS:
        cfg_val = parse_time(val)
        setattr(cfg, key, cfg_val)
    elif key in _INT_PARAMS:
        setattr(cfg, key, int(val))
    else:
        raise ScenarioInvalid("unknown param %s" % key)


@dataclass
class ScenarioEvent:
    time: int
    action: str
    args: List[str]


def load_scenario(path: str, topo: Topology) -> List[ScenarioEvent]:
    events: List[ScenarioEvent] = []
    last = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "end":
                    topo.end_time = parse_time(parts[1])
                    continue
                if parts[0] == "param":
                    if parts[1] == "data_period":
                        topo.data_period = parse_time(parts[2])
                    else:
                        for cfg in topo.routers.values():
                            _apply_param(cfg, parts[1], parts[2])
                    continue
                if parts[0] != "at":
                    raise ScenarioInvalid("expected 'at <time> <action> ...'")
                t = parse_time(parts[1])
                if t < last:
                    raise ScenarioInvalid("times must be non-decreasing")
                last = t
                events.append(ScenarioEvent(time=t, action=parts[2], args=parts[3:]))
            except ScenarioInvalid:
                raise
            except (IndexError, ValueError) as exc:
                raise ScenarioInvalid("%s:%d: %s" % (path, lineno, exc))
    _validate_scenario(events, topo)
    return events


_ACTIONS = {
    "start_source": 2, "stop_source": 2, "send_data": 2,
    "fail_router": 1, "recover_router": 1, "fail_link": 1, "recover_link": 1,
    "set_cost": 3, "host_join": 3, "host_leave": 3, "reboot_interface": 2,
    "capture": 3, "replay": 1, "set_link_model": 2,
    "digest_save": 1, "digest_check": 1,
    "assert_state": 4, "assert_synced": 4, "assert_aw": 5, "assert_fwd": 5,
}


def _validate_scenario(events: List[ScenarioEvent], topo: Topology) -> None:
    labels: Set[str] = set()
    for ev in events:
        if ev.action not in _ACTIONS:
            raise ScenarioInvalid("unknown action %s" % ev.action)
        if len(ev.args) < _ACTIONS[ev.action]:
            raise ScenarioInvalid("action %s needs %d args" % (ev.action, _ACTIONS[ev.action]))
        a = ev.args
        if ev.action in ("start_source", "stop_source", "send_data") and a[0] not in topo.sources:
            raise ScenarioInvalid("unknown source %s" % a[0])
        if ev.action in ("fail_router", "recover_router") and a[0] not in topo.routers:
            raise ScenarioInvalid("unknown router %s" % a[0])
        if ev.action in ("fail_link", "recover_link", "set_link_model") and a[0] not in topo.links:
            raise ScenarioInvalid("unknown link %s" % a[0])
        if ev.action in ("set_cost", "reboot_interface"):
            if a[0] not in topo.routers:
                raise ScenarioInvalid("unknown router %s" % a[0])
            if not any(ic.id == a[1] for ic in topo.routers[a[0]].interfaces):
                raise ScenarioInvalid("unknown interface %s.%s" % (a[0], a[1]))
        if ev.action in ("host_join", "host_leave") and a[0] not in topo.hosts:
            raise ScenarioInvalid("unknown host %s" % a[0])
        if ev.action == "capture":
            if a[1] not in topo.links:
                raise ScenarioInvalid("unknown link %s" % a[1])
            labels.add(a[0])
        if ev.action == "replay" and a[0] not in labels:
            raise ScenarioInvalid("replay of unknown capture %s" % a[0])
        if ev.action in ("assert_state", "assert_aw", "assert_fwd", "assert_synced"):
            if a[0] not in topo.routers:
                raise ScenarioInvalid("unknown router %s" % a[0])


_MSG_NAMES = {
    "hello": wire.MsgType.HELLO,
    "sync": wire.MsgType.SYNC,
    "iamupstream": wire.MsgType.IAM_UPSTREAM,
    "iamnolongerupstream": wire.MsgType.IAM_NO_LONGER_UPSTREAM,
    "interest": wire.MsgType.INTEREST,
    "nointerest": wire.MsgType.NO_INTEREST,
    "ack": wire.MsgType.ACK,
}


@dataclass
class _RouterSlot:
    config: RouterConfig
    router: Optional[Router] = None
    alive: bool = True
    incarnation: int = 0


@dataclass
class CapturedFrame:
    link: str
    src_ip: str
    dst_ip: Optional[str]
    raw: bytes


class Simulation:
    def __init__(
        self,
        topo: Topology,
        scenario: List[ScenarioEvent],
        seed: int = 0,
        trace: bool = False,
        link_model: Optional[LinkModel] = None,
        check_fn=None,
    ):
        self.topo = topo
        self.scenario = sorted(scenario, key=lambda e: e.time)
        self.rng = random.Random(seed)
        self.now = 0
        self._heap: List[tuple] = []
        self._seq = 0
        self.tracing = trace
        self.trace: List[dict] = []
        self.links = topo.links
        if link_model is not None:
            for link in self.links.values():
                link.model = replace(link_model)
        self.slots: Dict[str, _RouterSlot] = {}
        self.active_sources: Set[Tuple[str, str]] = set()
        self.last_data: Dict[Tuple[str, str], int] = {}
        self.memberships: Set[Tuple[str, str, str]] = set()  # (host, source, group)
        self.captures_armed: Dict[str, Tuple[str, wire.MsgType]] = {}
        self.captured: Dict[str, CapturedFrame] = {}
        self.digests: Dict[str, Dict[str, str]] = {}
        self.violations: List[str] = []
        self.data_delivered: List[Tuple[int, str, str, str]] = []  # (t, host, source, group)
        self._scenario_left = len(self.scenario)
        self._consequential = 0
        self._check_fn = check_fn
        self._costs: Dict[Tuple[str, str], int] = {}
        for name, cfg in topo.routers.items():
            self.slots[name] = _RouterSlot(config=cfg)
            for ic in cfg.interfaces:
                self._costs[(name, ic.id)] = ic.cost
        for ev in self.scenario:
            self._push(ev.time, "scenario", ev)
        for name in topo.routers:
            self._boot_router(name)
        self._push_routes(delay_override=0)

    # -------------------------------------------------------------- plumbing

    def _push(self, t: int, kind: str, payload) -> None:
        if kind in ("deliver", "scenario", "routes", "data"):
            self._consequential += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def _tr(self, t: int, **rec) -> None:
        if self.tracing:
            rec["t"] = t
            self.trace.append(rec)

    def _boot_router(self, name: str) -> None:
        slot = self.slots[name]
        slot.incarnation += 1
        inc = slot.incarnation
        router = Router(
            config=slot.config,
            now=lambda: self.now,
            send=lambda ifid, dst, msg, n=name: self._send_frame(n, ifid, dst, msg),
            schedule=lambda delay, tag, n=name, i=inc: self._push(
                self.now + delay, "timer", (n, i, tag)
            ),
            trace=(lambda rec: self._tr(self.now, **rec)) if self.tracing else None,
        )
        slot.router = router
        slot.alive = True
        router.start()

    # -------------------------------------------------------------- unicast oracle

    def compute_routes(
        self,
    ) -> Dict[str, Dict[str, Tuple[Optional[str], Optional[MetricPair]]]]:
        """Reverse shortest path per source ip: router -> {src: (root, metric)}."""
        out: Dict[str, Dict[str, Tuple[Optional[str], Optional[MetricPair]]]] = {
            name: {} for name in self.slots
        }
        alive = {n for n, s in self.slots.items() if s.alive}
        src_ips = sorted({ip for ip, _l in self.topo.sources.values()})
        for src_ip in src_ips:
            src_links = [l.id for l in self.links.values() if src_ip in l.sources]
            dist: Dict[str, int] = {}
            root: Dict[str, Tuple[int, str]] = {}  # router -> (ifid order) chosen
            pq: List[tuple] = []
            for name in sorted(alive):
                best = None
                for ic in self.slots[name].config.interfaces:
                    if ic.link in src_links and self.links[ic.link].up:
                        cost = self._costs[(name, ic.id)]
                        # originators: root is the source-attached interface
                        if best is None or (cost, ic.id) < best:
                            best = (cost, ic.id)
                if best is not None:
                    dist[name] = best[0]
                    root[name] = best[1]
                    heapq.heappush(pq, (best[0], name))
            seen: Set[str] = set()
            while pq:
                d, name = heapq.heappop(pq)
                if name in seen or d > dist.get(name, 1 << 62):
                    continue
                seen.add(name)
                # relax neighbors: their cost via their own interface to a
                # shared link with `name`
                for ic in self.slots[name].config.interfaces:
                    link = self.links[ic.link]
                    if not link.up:
                        continue
                    for rname, rifid, _ip in link.attached:
                        if rname == name or rname not in alive:
                            continue
                        # never move an originator's root off the source link
                        if any(
                            ic2.link in src_links
                            for ic2 in self.slots[rname].config.interfaces
                            if self.links[ic2.link].up
                        ):
                            continue
                        nd = d + self._costs[(rname, rifid)]
                        cur = dist.get(rname)
                        if cur is None or nd < cur:
                            dist[rname] = nd
                            root[rname] = rifid
                            heapq.heappush(pq, (nd, rname))
                        elif nd == cur and rifid < root[rname]:
                            root[rname] = rifid
            for name in alive:
                pref = self.slots[name].config.rpc_preference
                if name in dist:
                    out[name][src_ip] = (root[name], MetricPair(pref, dist[name]))
                else:
                    out[name][src_ip] = (None, None)
        return out

    def _push_routes(self, delay_override: Optional[int] = None) -> None:
        tables = self.compute_routes()
        for name in sorted(self.slots):
            slot = self.slots[name]
            if not slot.alive:
                continue
            delay = (
                delay_override
                if delay_override is not None
                else self.topo.notify_delay.get(name, 0)
            )
            self._push(
                self.now + delay, "routes", (name, slot.incarnation, tables[name])
            )

    # -------------------------------------------------------------- frames

    def _send_frame(self, rname: str, ifid: str, dst: Optional[str], msg: wire.Message) -> None:
        slot = self.slots[rname]
        if not slot.alive:
            return
        ic = next(ic for ic in slot.config.interfaces if ic.id == ifid)
        link = self.links[ic.link]
        if self.tracing:
            self._tr(
                self.now, ev="send", router=rname, iface=ifid, link=link.id,
                type=msg.msg_type.name, dst=dst or "mcast",
                body=_body_summary(msg),
            )
        raw = None
        mac_dst = dst if dst is not None else wire.ALL_ROUTERS
        want_encode = self.topo.key is not None
        for label, (clink, ctype) in list(self.captures_armed.items()):
            if clink == link.id and ctype == msg.msg_type:
                raw = wire.encode_message(msg, ic.ip, mac_dst, self.topo.key)
                self.captured[label] = CapturedFrame(link.id, ic.ip, dst, raw)
                del self.captures_armed[label]
        if want_encode and raw is None:
            raw = wire.encode_message(msg, ic.ip, mac_dst, self.topo.key)
        if not link.up:
            return
        self._deliver_on_link(link, ic.ip, dst, msg, raw, exclude=(rname, ifid))

    def _deliver_on_link(
        self,
        link: Link,
        src_ip: str,
        dst: Optional[str],
        msg: wire.Message,
        raw: Optional[bytes],
        exclude: Optional[Tuple[str, str]] = None,
    ) -> None:
        for tname, tifid, tip in link.attached:
            if exclude is not None and (tname, tifid) == exclude:
                continue
            if dst is not None and tip != dst:
                continue
            self._schedule_delivery(link, (tname, tifid, src_ip, dst, msg, raw))

    def _schedule_delivery(self, link: Link, payload) -> None:
        m = link.model
        if m.loss_prob and self.rng.random() < m.loss_prob:
            self._tr(self.now, ev="drop", link=link.id, reason="loss")
            return
        copies = 2 if (m.duplicate_prob and self.rng.random() < m.duplicate_prob) else 1
        for _ in range(copies):
            if m.reorder and m.delay_hi > m.delay_lo:
                delay = self.rng.randint(m.delay_lo, m.delay_hi)
            else:
                delay = m.delay_lo
            self._push(self.now + delay, "deliver", (link.id, payload))

    def _do_deliver(self, link_id: str, payload) -> None:
        link = self.links[link_id]
        if not link.up:
            self._tr(self.now, ev="drop", link=link_id, reason="link-down")
            return
        tname, tifid, src_ip, dst, msg, raw = payload
        slot = self.slots[tname]
        if not slot.alive or slot.router is None:
            return
        if raw is not None and self.topo.key is not None:
            mac_dst = dst if dst is not None else wire.ALL_ROUTERS
            try:
                msg = wire.decode_message(raw, src_ip, mac_dst, self.topo.key)
            except wire.DecodeError as exc:
                self._tr(self.now, ev="drop", link=link_id, reason=type(exc).__name__)
                return
        if self.tracing:
            self._tr(
                self.now, ev="recv", router=tname, iface=tifid, link=link_id,
                src=src_ip, type=msg.msg_type.name, body=_body_summary(msg),
            )
        slot.router.handle_control(tifid, src_ip, msg)

    def _emit_data(self, src_ip: str, group: str, link_id: str, ttl: int = 32) -> None:
        link = self.links[link_id]
        if not link.up:
            return
        for tname, tifid, _tip in link.attached:
            m = link.model
            if m.loss_prob and self.rng.random() < m.loss_prob:
                continue
            delay = (
                self.rng.randint(m.delay_lo, m.delay_hi)
                if m.reorder and m.delay_hi > m.delay_lo
                else m.delay_lo
            )
            self._push(self.now + delay, "data", (tname, tifid, src_ip, group, ttl))
        for host in link.hosts:
            if (host, src_ip, group) in self.memberships:
                self.data_delivered.append((self.now, host, src_ip, group))
                self._tr(self.now, ev="data_host", host=host, source=src_ip, group=group)

    def _do_data(self, tname: str, tifid: str, src_ip: str, group: str, ttl: int) -> None:
        slot = self.slots[tname]
        if not slot.alive or slot.router is None or ttl <= 0:
            return
        outs = slot.router.handle_data(tifid, src_ip, group)
        for out_ifid in outs:
            ic = next(ic for ic in slot.config.interfaces if ic.id == out_ifid)
            self._tr(self.now, ev="data_fwd", router=tname, iface=out_ifid, source=src_ip, group=group)
            self._emit_data(src_ip, group, ic.link, ttl - 1)

    # -------------------------------------------------------------- scenario actions

    def _apply_scenario(self, ev: ScenarioEvent) -> None:
        a = ev.args
        act = ev.action
        self._tr(self.now, ev="scenario", action=act, args=a)
        if act == "start_source":
            ip, link = self.topo.sources[a[0]]
            self.active_sources.add((ip, a[1]))
            self._push(self.now, "data_emit", (ip, a[1], link))
        elif act == "stop_source":
            ip, _link = self.topo.sources[a[0]]
            self.active_sources.discard((ip, a[1]))
        elif act == "send_data":
            ip, link = self.topo.sources[a[0]]
            self.last_data[(ip, a[1])] = self.now
            self._emit_data(ip, a[1], link)
        elif act == "fail_router":
            self.slots[a[0]].alive = False
            self.slots[a[0]].router = None
            self._push_routes()
        elif act == "recover_router":
            self._boot_router(a[0])
            self._push_routes()
        elif act == "fail_link":
            self.links[a[0]].up = False
            self._push_routes()
        elif act == "recover_link":
            self.links[a[0]].up = True
            self._push_routes()
        elif act == "set_cost":
            self._costs[(a[0], a[1])] = int(a[2])
            slot = self.slots[a[0]]
            cfg = slot.config
            cfg.interfaces = [
                replace(ic, cost=int(a[2])) if ic.id == a[1] else ic
                for ic in cfg.interfaces
            ]
            if slot.alive and slot.router is not None:
                iface = slot.router.interfaces.get(a[1])
                if iface is not None:
                    iface.cfg = next(ic for ic in cfg.interfaces if ic.id == a[1])
            self._push_routes()
        elif act in ("host_join", "host_leave"):
            joining = act == "host_join"
            host, src, group = a[0], a[1], a[2]
            if joining:
                self.memberships.add((host, src, group))
            else:
                self.memberships.discard((host, src, group))
            link = self.links[self.topo.hosts[host]]
            tref = TreeRef(src, group)
            for rname, ifid, _ip in link.attached:
                slot = self.slots[rname]
                if slot.alive and slot.router is not None:
                    members = any(
                        (h, src, group) in self.memberships for h in link.hosts
                    )
                    slot.router.set_local_members(ifid, tref, members)
        elif act == "reboot_interface":
            slot = self.slots[a[0]]
            if slot.alive and slot.router is not None:
                slot.router.reboot_interface(a[1])
        elif act == "capture":
            mt = _MSG_NAMES.get(a[2].lower())
            if mt is None:
                raise ScenarioInvalid("unknown message type %s" % a[2])
            self.captures_armed[a[0]] = (a[1], mt)
        elif act == "replay":
            frame = self.captured.get(a[0])
            if frame is None:
                raise UnknownFrame(a[0])
            link = self.links[frame.link]
            if frame.raw is not None and self.topo.key is None:
                mac_dst = frame.dst_ip if frame.dst_ip is not None else wire.ALL_ROUTERS
                msg = wire.decode_message(frame.raw, frame.src_ip, mac_dst)
            else:
                mac_dst = frame.dst_ip if frame.dst_ip is not None else wire.ALL_ROUTERS
                msg = wire.decode_message(frame.raw, frame.src_ip, mac_dst, self.topo.key)
            self._tr(self.now, ev="replay", link=frame.link, type=msg.msg_type.name)
            self._deliver_on_link(link, frame.src_ip, frame.dst_ip, msg, frame.raw)
        elif act == "set_link_model":
            model = self.links[a[0]].model
            for kv in a[1:]:
                k, v = kv.split("=")
                if k == "delay":
                    model.delay_lo = model.delay_hi = parse_time(v)
                elif k == "jitter":
                    model.delay_hi = model.delay_lo + parse_time(v)
                elif k == "loss":
                    model.loss_prob = float(v)
                elif k == "dup":
                    model.duplicate_prob = float(v)
                elif k == "reorder":
                    model.reorder = _BOOL[v.lower()]
                else:
                    raise ScenarioInvalid("unknown link model field %s" % k)
        elif act == "digest_save":
            self.digests[a[0]] = self.digest_all()
        elif act == "digest_check":
            want = self.digests.get(a[0])
            if want is None:
                self._fail("digest_check %s: nothing saved" % a[0])
            else:
                got = self.digest_all()
                for rname in sorted(set(want) | set(got)):
                    if want.get(rname) != got.get(rname):
                        self._fail(
                            "digest_check %s: router %s state changed at t=%d"
                            % (a[0], rname, self.now)
                        )
        elif act == "assert_state":
            rname, src, group, want = a[0], a[1], a[2], a[3]
            got = self.tree_state(rname, src, group)
            if got != want:
                self._fail(
                    "assert_state %s (%s,%s): want %s got %s at t=%d"
                    % (rname, src, group, want, got, self.now)
                )
        elif act == "assert_synced":
            rname, ifid, ip, want = a[0], a[1], a[2], _BOOL[a[3].lower()]
            slot = self.slots[rname]
            got = False
            if slot.alive and slot.router is not None:
                iface = slot.router.interfaces.get(ifid)
                nb = iface.neighbors.get(ip) if iface else None
                got = nb is not None and nb.synced
            if got != want:
                self._fail(
                    "assert_synced %s %s %s: want %s got %s at t=%d"
                    % (rname, ifid, ip, want, got, self.now)
                )
        elif act == "assert_aw":
            rname, ifid, src, group, want = a[0], a[1], a[2], a[3], a[4]
            got = "-"
            slot = self.slots[rname]
            if slot.alive and slot.router is not None:
                entry = slot.router.trees.get(TreeRef(src, group))
                if entry is not None and ifid in entry.per_if:
                    got = entry.per_if[ifid].assert_winner or "-"
            if got != want:
                self._fail(
                    "assert_aw %s %s (%s,%s): want %s got %s at t=%d"
                    % (rname, ifid, src, group, want, got, self.now)
                )
        elif act == "assert_fwd":
            rname, ifid, src, group, want = a[0], a[1], a[2], a[3], _BOOL[a[4].lower()]
            got = False
            slot = self.slots[rname]
            if slot.alive and slot.router is not None:
                entry = slot.router.trees.get(TreeRef(src, group))
                if entry is not None and ifid in entry.per_if:
                    got = entry.per_if[ifid].forwarding
            if got != want:
                self._fail(
                    "assert_fwd %s %s (%s,%s): want %s got %s at t=%d"
                    % (rname, ifid, src, group, want, got, self.now)
                )

    def _fail(self, text: str) -> None:
        self.violations.append(text)
        self._tr(self.now, ev="violation", text=text)

    # -------------------------------------------------------------- run loop

    def _timer_is_idle(self, t: int, name: str, inc: int, tag: tuple) -> bool:
        slot = self.slots.get(name)
        if slot is None or not slot.alive or slot.incarnation != inc or slot.router is None:
            return True
        router = slot.router
        kind = tag[0]
        if kind == "hello":
            return True
        if kind == "liveness":
            _, ifid, ip = tag
            iface = router.interfaces.get(ifid)
            if iface is None or ip not in iface.neighbors:
                return True
            link = self.links[iface.cfg.link]
            peer = next((rn for rn, _i, pip in link.attached if pip == ip), None)
            peer_alive = peer is not None and self.slots[peer].alive
            return bool(link.up and peer_alive)
        if kind == "sync_rtx":
            _, ifid, ip = tag
            iface = router.interfaces.get(ifid)
            nb = iface.neighbors.get(ip) if iface else None
            return nb is None or nb.session is None
        if kind == "rtx":
            return not router.pending.entries
        if kind == "sat":
            entry = router.trees.get(tag[1])
            if entry is None or not entry.source_active:
                return True
            return tuple(tag[1]) in self.active_sources
        return False

    def _quiescent(self) -> bool:
        if self._scenario_left or self._consequential:
            return False
        for t, _seq, kind, payload in self._heap:
            if kind == "timer":
                name, inc, tag = payload
                if not self._timer_is_idle(t, name, inc, tag):
                    return False
            elif kind == "data_emit":
                continue
            else:
                return False
        return True

    def run(self) -> "Simulation":
        end = self.topo.end_time
        while self._heap:
            t, _seq, kind, payload = self._heap[0]
            if end is not None and t > end:
                break
            heapq.heappop(self._heap)
            self.now = t
            if kind in ("deliver", "scenario", "routes", "data"):
                self._consequential -= 1
            if kind == "deliver":
                self._do_deliver(*payload)
            elif kind == "timer":
                name, inc, tag = payload
                slot = self.slots[name]
                if slot.alive and slot.incarnation == inc and slot.router is not None:
                    slot.router.handle_timer(tag)
            elif kind == "routes":
                name, inc, table = payload
                slot = self.slots[name]
                if slot.alive and slot.incarnation == inc and slot.router is not None:
                    slot.router.update_routes(table)
            elif kind == "scenario":
                self._scenario_left -= 1
                self._apply_scenario(payload)
            elif kind == "data":
                self._do_data(*payload)
            elif kind == "data_emit":
                ip, group, link = payload
                if (ip, group) in self.active_sources:
                    self.last_data[(ip, group)] = self.now
                    self._emit_data(ip, group, link)
                    nxt = self.now + self.topo.data_period
                    if end is None or nxt <= end:
                        self._push(nxt, "data_emit", payload)
            if not self._scenario_left and not self._consequential and self._quiescent():
                break
        if self._check_fn is not None:
            self.violations.extend(self._check_fn(self))
        return self

    # -------------------------------------------------------------- views

    def router(self, name: str) -> Router:
        r = self.slots[name].router
        assert r is not None, "%s is down" % name
        return r

    def tree_state(self, name: str, src: str, group: str) -> str:
        slot = self.slots[name]
        if not slot.alive or slot.router is None:
            return "DOWN"
        entry = slot.router.trees.get(TreeRef(src, group))
        return entry.state.value if entry is not None else TreeState.INACTIVE.value

    def digest_all(self) -> Dict[str, str]:
        return {
            name: slot.router.state_digest()
            for name, slot in sorted(self.slots.items())
            if slot.alive and slot.router is not None
        }

    def write_trace(self, path: str) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _body_summary(msg: wire.Message) -> str:
    b = msg.body
    if isinstance(b, wire.Hello):
        return "hold=%d cp=%s" % (b.hold_time, b.checkpoint_sn)
    if isinstance(b, wire.Sync):
        return "ssn=%d nssn=%d M=%d m=%d k=%d trees=%d" % (
            b.my_snapshot_sn, b.neighbor_snapshot_sn, b.master, b.more,
            b.sync_sn, len(b.trees),
        )
    if isinstance(b, wire.IamUpstream):
        return "sn=%d %s %s rpc=%d" % (b.sn, b.source, b.group, b.rpc)
    if isinstance(b, (wire.IamNoLongerUpstream, wire.Interest, wire.NoInterest)):
        return "sn=%d %s %s" % (b.sn, b.source, b.group)
    if isinstance(b, wire.Ack):
        return "ack=%d %s %s" % (b.neighbor_sn, b.source, b.group)
    return ""


def run(
    topology_path: str,
    scenario_path: str,
    seed: int = 0,
    trace: bool = False,
    overrides: Optional[dict] = None,
    link_model: Optional[LinkModel] = None,
    check_fn=None,
) -> Simulation:
    topo = load_topology(topology_path, overrides)
    scenario = load_scenario(scenario_path, topo)
    sim = Simulation(
        topo, scenario, seed=seed, trace=trace, link_model=link_model, check_fn=check_fn
    )
    return sim.run()
