"""Safety properties checked over a quiescent simulation.

Each checker returns a list of human-readable violation strings; an empty
list means the property holds.  `check_all` is the default bundle used by
`hpimsim check` and by the interleaving explorer.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Set, Tuple

from .netsim import Simulation
from .router import Router
from .tree import AW_SELF, TreeRef, TreeState


def _alive_routers(sim: Simulation) -> Dict[str, Router]:
    return {
        name: slot.router
        for name, slot in sim.slots.items()
        if slot.alive and slot.router is not None
    }


def _all_trees(routers: Dict[str, Router]) -> Set[TreeRef]:
    out: Set[TreeRef] = set()
    for r in routers.values():
        out.update(r.trees)
    return out


def _ip_owner(sim: Simulation, link_id: str, ip: str) -> Optional[str]:
    for rname, _ifid, rip in sim.links[link_id].attached:
        if rip == ip:
            return rname
    return None


def check_quiescent_correctness(sim: Simulation) -> List[str]:
    """Routers with a unicast route to a transmitting source are ACTIVE on
    the correct root interface; stopped sources past the source-activity
    window leave no ACTIVE state behind."""
    bad: List[str] = []
    routers = _alive_routers(sim)
    oracle = sim.compute_routes()
    live = set(sim.active_sources)
    sat = max((r.cfg.sat_timeout for r in routers.values()), default=0)
    expired: Set[Tuple[str, str]] = set()
    for sg, t in sim.last_data.items():
        if sg not in live and sim.now >= t + sat:
            expired.add(sg)
    groups: Dict[str, Set[str]] = {}
    for src, grp in live:
        groups.setdefault(src, set()).add(grp)
    for name, r in routers.items():
        for src, grps in groups.items():
            root, metric = oracle[name].get(src, (None, None))
            for grp in grps:
                tref = TreeRef(src, grp)
                entry = r.trees.get(tref)
                state = entry.state if entry is not None else TreeState.INACTIVE
                if root is None:
                    if state is TreeState.ACTIVE:
                        bad.append(
                            "%s: ACTIVE for %s/%s with no route to the source"
                            % (name, src, grp)
                        )
                    continue
                if state is not TreeState.ACTIVE:
                    bad.append(
                        "%s: expected ACTIVE for %s/%s, got %s"
                        % (name, src, grp, state.value)
                    )
                    continue
                if entry.root_interface != root:
                    bad.append(
                        "%s: root for %s/%s is %s, shortest path says %s"
                        % (name, src, grp, entry.root_interface, root)
                    )
                if entry.metric is None or entry.metric.rpc != metric.rpc:
                    bad.append(
                        "%s: rpc for %s/%s is %s, shortest path says %d"
                        % (name, src, grp, entry.metric, metric.rpc)
                    )
        for src, grp in expired:
            entry = r.trees.get(TreeRef(src, grp))
            if entry is not None and entry.state is not TreeState.INACTIVE:
                bad.append(
                    "%s: source %s/%s stopped long ago but tree is %s"
                    % (name, src, grp, entry.state.value)
                )
    return bad


def check_aw_uniqueness(sim: Simulation) -> List[str]:
    """On every link attached to at least one ACTIVE router, exactly one
    non-root interface claims the assert, and everyone else points at it."""
    bad: List[str] = []
    routers = _alive_routers(sim)
    for tref in sorted(_all_trees(routers)):
        for link_id, link in sorted(sim.links.items()):
            if not link.up:
                continue
            attached = [
                (rname, ifid, ip)
                for rname, ifid, ip in link.attached
                if rname in routers
            ]
            states = []
            any_active = False
            for rname, ifid, ip in attached:
                entry = routers[rname].trees.get(tref)
                if entry is None or ifid not in entry.per_if:
                    continue
                states.append((rname, ifid, ip, entry))
                if entry.state is TreeState.ACTIVE:
                    any_active = True
            if not any_active or len(states) < 2:
                continue
            claims = [
                (rname, ifid, ip)
                for rname, ifid, ip, entry in states
                if not entry.per_if[ifid].role_root
                and entry.per_if[ifid].assert_winner == AW_SELF
            ]
            if len(claims) != 1:
                bad.append(
                    "link %s tree %s/%s: %d assert claimants (%s)"
                    % (link_id, tref.source, tref.group, len(claims),
                       ",".join("%s.%s" % c[:2] for c in claims))
                )
                continue
            aw_ip = claims[0][2]
            for rname, ifid, ip, entry in states:
                st = entry.per_if[ifid]
                if (rname, ifid) == claims[0][:2]:
                    continue
                named = st.best_upstream if st.role_root else st.assert_winner
                if entry.state is TreeState.INACTIVE:
                    continue
                if named != aw_ip:
                    bad.append(
                        "link %s tree %s/%s: %s.%s names winner %s, actual %s"
                        % (link_id, tref.source, tref.group, rname, ifid, named, aw_ip)
                    )
    return bad


def check_loop_freedom(sim: Simulation) -> List[str]:
    """Parent pointers never form a cycle, and each hop strictly improves
    the metric when loop prevention is enforced."""
    bad: List[str] = []
    routers = _alive_routers(sim)
    for tref in sorted(_all_trees(routers)):
        parent_of: Dict[str, Optional[str]] = {}
        for name, r in routers.items():
            entry = r.trees.get(tref)
            if entry is None or entry.state is not TreeState.ACTIVE or entry.parent is None:
                parent_of[name] = None
                continue
            ifid, pip = entry.parent
            link_id = r.interfaces[ifid].cfg.link
            powner = _ip_owner(sim, link_id, pip)
            parent_of[name] = powner
            if r.cfg.feasibility_enforced and powner in routers:
                pmetric = routers[powner].trees.get(tref)
                adv = r.interfaces[ifid].neighbors[pip].upstream.get(tref)
                if (
                    adv is not None
                    and entry.metric is not None
                    and not adv.feasible_under(entry.metric)
                ):
                    bad.append(
                        "%s: parent %s for %s/%s does not improve the metric"
                        % (name, powner, tref.source, tref.group)
                    )
        for start in sorted(parent_of):
            seen = []
            cur: Optional[str] = start
            while cur is not None and cur not in seen:
                seen.append(cur)
                cur = parent_of.get(cur)
            if cur is not None:
                cyc = seen[seen.index(cur):] + [cur]
                bad.append(
                    "tree %s/%s: parent cycle %s" % (tref.source, tref.group, "->".join(cyc))
                )
                break
    return bad


def check_sync_symmetry(sim: Simulation) -> List[str]:
    """If A considers B fully synchronized, B considers A the same."""
    bad: List[str] = []
    routers = _alive_routers(sim)
    for name, r in routers.items():
        for ifid, iface in r.interfaces.items():
            link_id = iface.cfg.link
            for ip, nb in iface.neighbors.items():
                if not nb.synced:
                    continue
                peer = _ip_owner(sim, link_id, ip)
                if peer is None or peer not in routers:
                    continue  # the peer is down; liveness will clean this up
                back = None
                for piface in routers[peer].interfaces.values():
                    if piface.cfg.link == link_id:
                        back = piface.neighbors.get(iface.cfg.ip)
                if back is None or not back.synced:
                    bad.append(
                        "%s.%s sees %s SYNCED but %s does not agree"
                        % (name, ifid, ip, peer)
                    )
    return bad


def check_aw_interest_knowledge(sim: Simulation) -> List[str]:
    """The assert winner's recorded per-neighbor interest matches each
    downstream neighbor's actual interest in the tree."""
    bad: List[str] = []
    routers = _alive_routers(sim)
    ip_to_router = {
        ip: rname
        for link in sim.links.values()
        for rname, _ifid, ip in link.attached
    }
    for name, r in routers.items():
        for tref, entry in r.trees.items():
            if entry.state is not TreeState.ACTIVE:
                continue
            for ifid, st in entry.per_if.items():
                if not st.is_aw or st.role_root:
                    continue
                iface = r.interfaces[ifid]
                for ip, nb in iface.neighbors.items():
                    if not nb.synced:
                        continue
                    peer = ip_to_router.get(ip)
                    if peer not in routers:
                        continue
                    pentry = routers[peer].trees.get(tref)
                    if (
                        pentry is None
                        or pentry.state is not TreeState.ACTIVE
                        or pentry.root_interface is None
                    ):
                        continue
                    proot = routers[peer].interfaces[pentry.root_interface]
                    if proot.cfg.link != iface.cfg.link:
                        continue  # neighbor pulls the tree from elsewhere
                    if tref in nb.upstream:
                        continue
                    recorded = nb.interest.get(tref, r.cfg.initial_downstream_interest)
                    if recorded != pentry.router_interested:
                        bad.append(
                            "%s.%s (%s/%s): records neighbor %s interest=%s, actual %s"
                            % (name, ifid, tref.source, tref.group, ip,
                               recorded, pentry.router_interested)
                        )
    return bad


def check_mroute_coherence(sim: Simulation) -> List[str]:
    """The kernel-facing table equals what the per-interface flags imply:
    forward iff assert winner, downstream interest, not source-attached,
    not the root."""
    bad: List[str] = []
    for name, r in _alive_routers(sim).items():
        mr = {m.tree: m for m in r.mroutes()}
        for tref, entry in r.trees.items():
            want = frozenset(
                ifid
                for ifid, st in entry.per_if.items()
                if st.assert_winner == AW_SELF
                and st.downstream_interest
                and not st.source_attached
                and not st.role_root
            )
            got = mr[tref].forwarding_set
            if got != want:
                bad.append(
                    "%s (%s/%s): mroute out=%s, flags imply %s"
                    % (name, tref.source, tref.group, sorted(got), sorted(want))
                )
            if mr[tref].root_interface != entry.root_interface:
                bad.append(
                    "%s (%s/%s): mroute root %s, tree root %s"
                    % (name, tref.source, tref.group,
                       mr[tref].root_interface, entry.root_interface)
                )
    return bad


def check_state_definitions(sim: Simulation) -> List[str]:
    """Recompute each tree state from raw neighbor knowledge and compare."""
    bad: List[str] = []
    for name, r in _alive_routers(sim).items():
        for tref, entry in r.trees.items():
            has_upstream = any(
                tref in nb.upstream
                for iface in r.interfaces.values()
                for nb in iface.neighbors.values()
                if nb.synced or nb.in_session
            )
            if entry.is_originator and entry.source_active:
                want = TreeState.ACTIVE
            elif not entry.is_originator and entry.parent is not None:
                want = TreeState.ACTIVE
            elif has_upstream:
                want = TreeState.UNSURE
            else:
                want = TreeState.INACTIVE
            if entry.state is not want:
                bad.append(
                    "%s (%s/%s): state %s but definition says %s"
                    % (name, tref.source, tref.group, entry.state.value, want.value)
                )
    return bad


CHECKS = [
    check_quiescent_correctness,
    check_aw_uniqueness,
    check_loop_freedom,
    check_sync_symmetry,
    check_aw_interest_knowledge,
    check_mroute_coherence,
    check_state_definitions,
]


def check_all(sim: Simulation) -> List[str]:
    out: List[str] = []
    for fn in CHECKS:
        out.extend(fn(sim))
    return out


def check_safety(sim: Simulation) -> List[str]:
    """The subset meaningful in any quiescent state, including runs where
    loop prevention is deliberately disabled."""
    out: List[str] = []
    out.extend(check_sync_symmetry(sim))
    out.extend(check_mroute_coherence(sim))
    out.extend(check_state_definitions(sim))
    return out
