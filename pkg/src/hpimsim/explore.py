"""Randomized robustness harnesses.

Two entry points:

* :func:`explore` re-runs one scenario under many random message
  schedules (per-hop delay jitter with reordering), checking the
  scenario's own assertions plus the invariant suite after every run.
* :func:`sweep` generates random connected topologies and random event
  scripts, then verifies the invariant suite at quiescence.

Both are deterministic given their base seed.
"""
from __future__ import annotations

import os
import random
import tempfile
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

from . import invariants, netsim


@dataclass
class Failure:
    seed: int
    detail: str
    topology: Optional[str] = None
    scenario: Optional[str] = None


@dataclass
class ExploreResult:
    runs: int = 0
    failures: List[Failure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def explore(
    topology_path: str,
    scenario_path: str,
    runs: int = 10000,
    base_seed: int = 0,
    delay_lo: int = 500,
    delay_hi: int = 20000,
    overrides: Optional[dict] = None,
    check_fn: Callable = invariants.check_all,
    max_failures: int = 5,
    progress: Optional[Callable[[int], None]] = None,
) -> ExploreResult:
    """Run `runs` schedules of one scenario; every link delivery gets an
    independent random delay in [delay_lo, delay_hi] microseconds, so
    messages can overtake each other on a link."""
    model = netsim.LinkModel(delay_lo=delay_lo, delay_hi=delay_hi, reorder=True)
    result = ExploreResult()
    for i in range(runs):
        seed = base_seed + i
        sim = netsim.run(
            topology_path,
            scenario_path,
            seed=seed,
            overrides=overrides,
            link_model=model,
            check_fn=check_fn,
        )
        result.runs += 1
        if sim.violations:
            result.failures.append(Failure(seed=seed, detail="; ".join(sim.violations)))
            if len(result.failures) >= max_failures:
                break
        if progress is not None and (i + 1) % 1000 == 0:
            progress(i + 1)
    return result


# ---------------------------------------------------------------- sweeps


def random_topology(rng: random.Random, max_routers: int = 8) -> str:
    """A connected random network: a spanning tree over 2..max_routers
    routers plus a few extra links (some shared), random costs, and one
    source behind router R0."""
    n = rng.randint(2, max_routers)
    lines = ["link s0 p2p"]
    ifcount = [0] * n
    links: List[Tuple[str, List[int]]] = []  # (link id, member router indices)

    def new_link(kind: str, members: List[int]) -> None:
        lid = "l%d" % len(links)
        lines.append("link %s %s" % (lid, kind))
        links.append((lid, members))

    for i in range(1, n):
        new_link("p2p", [rng.randrange(i), i])
    for _ in range(rng.randint(0, n // 2)):
        if rng.random() < 0.3 and n >= 3:
            members = rng.sample(range(n), rng.randint(3, min(n, 4)))
            new_link("shared", members)
        else:
            a, b = rng.sample(range(n), 2)
            new_link("p2p", [a, b])
    for i in range(n):
        lines.append("router R%d" % i)
    iface_lines = ["iface R0 e0 10.20.0.1 s0 %d" % rng.choice((10, 20))]
    ifcount[0] = 1
    for li, (lid, members) in enumerate(links):
        for r in members:
            k = ifcount[r]
            ifcount[r] += 1
            iface_lines.append(
                "iface R%d e%d 10.20.%d.%d %s %d"
                % (r, k, li + 1, r + 1, lid, rng.choice((10, 10, 20, 30)))
            )
    lines.extend(iface_lines)
    lines.append("source S 10.20.0.100 s0")
    return "\n".join(lines) + "\n"


def random_script(rng: random.Random, topo_text: str) -> str:
    """Random fail/recover/cost events against a generated topology.

    Events are spaced widely enough for reconvergence, and the run always
    ends in a long quiet period so quiescent checks are meaningful.  R0
    (the source-attached router) is never failed so the source stays
    reachable from somewhere."""
    routers: List[str] = []
    ifaces: List[Tuple[str, str]] = []
    for line in topo_text.splitlines():
        parts = line.split()
        if parts and parts[0] == "router":
            routers.append(parts[1])
        elif parts and parts[0] == "iface" and parts[1] != "R0":
            ifaces.append((parts[1], parts[2]))
    lines = ["param hello_period 5s", "param hold_time 21", "param data_period 2s"]
    lines.append("at 1s start_source S 224.6.6.6")
    t = 20
    downed: List[str] = []
    for _ in range(rng.randint(1, 4)):
        roll = rng.random()
        if roll < 0.35 and len(downed) < len(routers) - 1:
            victim = rng.choice([r for r in routers[1:] if r not in downed])
            downed.append(victim)
            lines.append("at %ds fail_router %s" % (t, victim))
        elif roll < 0.6 and downed:
            back = downed.pop(rng.randrange(len(downed)))
            lines.append("at %ds recover_router %s" % (t, back))
        elif ifaces:
            rtr, ifid = rng.choice(ifaces)
            if rtr not in downed:
                lines.append("at %ds set_cost %s %s %d" % (t, rtr, ifid, rng.choice((5, 15, 40, 80))))
        t += rng.randint(30, 45)
    lines.append("end %ds" % (t + 40))
    return "\n".join(lines) + "\n"


def sweep(
    count: int = 200,
    base_seed: int = 0,
    max_routers: int = 8,
    check_fn: Callable = invariants.check_all,
    max_failures: int = 5,
    progress: Optional[Callable[[int], None]] = None,
    keep_dir: Optional[str] = None,
) -> ExploreResult:
    """Generate `count` random (topology, script) pairs and check the
    invariant suite at quiescence for each.  With keep_dir set, failing
    inputs are written there for replaying."""
    result = ExploreResult()
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(count):
            seed = base_seed + i
            rng = random.Random(seed)
            topo_text = random_topology(rng, max_routers)
            scn_text = random_script(rng, topo_text)
            tpath = os.path.join(tmp, "t%d.topo" % i)
            spath = os.path.join(tmp, "t%d.scn" % i)
            with open(tpath, "w") as fh:
                fh.write(topo_text)
            with open(spath, "w") as fh:
                fh.write(scn_text)
            sim = netsim.run(tpath, spath, seed=seed, check_fn=check_fn)
            result.runs += 1
            if sim.violations:
                fail = Failure(
                    seed=seed, detail="; ".join(sim.violations),
                    topology=topo_text, scenario=scn_text,
                )
                result.failures.append(fail)
                if keep_dir is not None:
                    os.makedirs(keep_dir, exist_ok=True)
                    for ext, text in (("topo", topo_text), ("scn", scn_text)):
                        with open(os.path.join(keep_dir, "fail%d.%s" % (seed, ext)), "w") as fh:
                            fh.write(text)
                if len(result.failures) >= max_failures:
                    break
            if progress is not None and (i + 1) % 20 == 0:
                progress(i + 1)
    return result
