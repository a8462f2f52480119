"""Command-line front end.

Exit codes are the machine contract: 0 = success / properties hold,
1 = a property or assertion was violated (details on stderr),
2 = usage or I/O error.  All prose goes to stderr; only machine-readable
output (digests, rendered timelines) goes to stdout.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from typing import Dict, List, Optional

from . import explore as explore_mod
from . import invariants, netsim

US = 1_000_000

# paper-tests suite: scenario file prefix -> topology file
_SUITE = [
    ("test0%d_" % n, "test_2routers.topo") for n in (1, 2, 3)
] + [
    ("test%02d_" % n, "test_main.topo") for n in range(4, 16)
] + [
    ("test%d_" % n, "test_loop.topo") for n in (16, 17)
]


def _err(msg: str) -> None:
    sys.stderr.write(msg.rstrip() + "\n")


def _overrides(args: argparse.Namespace) -> Optional[dict]:
    ov: Dict[str, object] = {}
    for flag, key in (
        ("fragment_size", "fragment_size"),
        ("max_sn", "max_sn"),
        ("hello_period", "hello_period"),
        ("hold_time", "hold_time"),
        ("sat", "sat_timeout"),
        ("retransmit_timeout", "rtx_timeout"),
        ("al_hysteresis", "al_hysteresis"),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            ov[key] = val
    return ov or None


def _link_model(args: argparse.Namespace) -> Optional[netsim.LinkModel]:
    if not (args.loss or args.reorder):
        return None
    return netsim.LinkModel(
        delay_lo=500,
        delay_hi=20000 if args.reorder else 500,
        loss_prob=args.loss,
        reorder=args.reorder,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    sim = netsim.run(
        args.topology, args.scenario, seed=args.seed,
        trace=args.trace is not None, overrides=_overrides(args),
        link_model=_link_model(args),
        check_fn=invariants.check_all if args.check else None,
    )
    if args.trace:
        sim.write_trace(args.trace)
        with open(args.trace, "a") as fh:
            for name, digest in sim.digest_all().items():
                fh.write(json.dumps({"ev": "digest", "router": name, "digest": digest}) + "\n")
    if sim.violations:
        for v in sim.violations:
            _err("violation: " + v)
        _err("run failed: %s %s seed=%d" % (args.topology, args.scenario, args.seed))
        return 1
    _err("ok: quiescent at t=%.3fs" % (sim.now / US))
    return 0


def _cmd_check(args: argparse.Namespace) -> int:
    if args.suite:
        if args.suite != "paper-tests":
            _err("unknown suite %r" % args.suite)
            return 2
        base = args.scenario_dir
        failures = 0
        for prefix, topo in _SUITE:
            matches = glob.glob(os.path.join(base, prefix + "*.scn"))
            if not matches:
                _err("missing scenario %s*" % prefix)
                return 2
            sim = netsim.run(
                os.path.join(base, topo), matches[0], seed=args.seed,
                overrides=_overrides(args), link_model=_link_model(args),
                check_fn=invariants.check_all,
            )
            name = os.path.basename(matches[0])
            if sim.violations:
                failures += 1
                _err("FAIL %s: %s" % (name, "; ".join(sim.violations[:3])))
            else:
                _err("pass %s" % name)
        return 1 if failures else 0
    if not (args.topology and args.scenario):
        _err("check needs --topology and --scenario (or --suite)")
        return 2
    return _cmd_run(args)


def _cmd_explore(args: argparse.Namespace) -> int:
    def progress(done: int) -> None:
        _err("... %d/%d schedules" % (done, args.bound))

    res = explore_mod.explore(
        args.topology, args.scenario, runs=args.bound, base_seed=args.seed,
        overrides=_overrides(args),
        progress=progress if args.verbose else None,
    )
    if res.failures:
        for f in res.failures:
            _err("counterexample seed=%d: %s" % (f.seed, f.detail))
        _err(
            "reproduce with: hpimsim run --topology %s --scenario %s --seed %d"
            % (args.topology, args.scenario, res.failures[0].seed)
        )
        return 1
    _err("ok: %d schedules, no violations" % res.runs)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    def progress(done: int) -> None:
        _err("... %d/%d topologies" % (done, args.count))

    res = explore_mod.sweep(
        count=args.count, base_seed=args.seed, max_routers=args.max_routers,
        progress=progress if args.verbose else None, keep_dir=args.keep,
    )
    if res.failures:
        for f in res.failures:
            _err("counterexample seed=%d: %s" % (f.seed, f.detail))
        if args.keep:
            _err("failing inputs written under %s" % args.keep)
        return 1
    _err("ok: %d random topologies, no violations" % res.runs)
    return 0


def _read_digests(path: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("ev") == "digest":
                out[rec["router"]] = rec["digest"]
    return out


def _cmd_digest(args: argparse.Namespace) -> int:
    a = _read_digests(args.trace)
    if not a:
        _err("no digest records in %s (was the trace written by `run --trace`?)" % args.trace)
        return 2
    if args.diff is None:
        for name in sorted(a):
            sys.stdout.write("== %s ==\n%s\n" % (name, a[name]))
        return 0
    b = _read_digests(args.diff)
    same = True
    for name in sorted(set(a) | set(b)):
        if a.get(name) != b.get(name):
            same = False
            _err("digest differs for %s" % name)
            for tag, d in (("<", a.get(name, "")), (">", b.get(name, ""))):
                for ln in d.splitlines():
                    sys.stdout.write("%s %s %s\n" % (tag, name, ln))
    if same:
        _err("digests identical")
    return 0 if same else 1


def _cmd_render(args: argparse.Namespace) -> int:
    try:
        fh = open(args.trace)
    except OSError as exc:
        _err(str(exc))
        return 2
    with fh:
        for line in fh:
            rec = json.loads(line)
            ev = rec.get("ev")
            if ev == "digest":
                continue
            t = rec.get("t", 0) / US
            if ev in ("send", "recv"):
                sys.stdout.write(
                    "%10.4f %-4s %s.%s %s %s %s\n"
                    % (t, ev, rec.get("router", "?"), rec.get("iface", "?"),
                       rec.get("type", ""), rec.get("dst", rec.get("src", "")),
                       rec.get("body", ""))
                )
            else:
                rest = " ".join(
                    "%s=%s" % (k, v) for k, v in sorted(rec.items()) if k not in ("t", "ev")
                )
                sys.stdout.write("%10.4f %-4s %s\n" % (t, ev, rest))
    return 0


def _add_common(p: argparse.ArgumentParser, need_paths: bool = True) -> None:
    if need_paths:
        p.add_argument("--topology", required=False)
        p.add_argument("--scenario", required=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fragment-size", dest="fragment_size", type=int)
    p.add_argument("--max-sn", dest="max_sn", type=int)
    p.add_argument("--hello-period", dest="hello_period")
    p.add_argument("--hold-time", dest="hold_time", type=int)
    p.add_argument("--sat", dest="sat")
    p.add_argument("--retransmit-timeout", dest="retransmit_timeout")
    p.add_argument("--al-hysteresis", dest="al_hysteresis")
    p.add_argument("--loss", type=float, default=0.0)
    p.add_argument("--reorder", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hpimsim", description="multicast routing protocol simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    _add_common(p)
    p.add_argument("--trace", help="write a JSONL event trace (with final digests)")
    p.add_argument("--no-check", dest="check", action="store_false",
                   help="skip the invariant suite at quiescence")

    p = sub.add_parser("check", help="run a scenario (or suite) with all invariants")
    _add_common(p)
    p.add_argument("--suite", help="named suite: paper-tests")
    p.add_argument("--scenario-dir", default="scenarios/paper")
    p.add_argument("--trace", default=None)
    p.set_defaults(check=True)

    p = sub.add_parser("explore", help="re-run a scenario under many message schedules")
    _add_common(p)
    p.add_argument("--bound", type=int, default=10000, help="number of schedules")

    p = sub.add_parser("sweep", help="random topologies x random event scripts")
    _add_common(p, need_paths=False)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--max-routers", type=int, default=8)
    p.add_argument("--keep", help="directory for failing generated inputs")

    p = sub.add_parser("digest", help="print or diff digests from a trace")
    p.add_argument("trace")
    p.add_argument("--diff", help="second trace to compare against")

    p = sub.add_parser("render", help="pretty-print a JSONL trace")
    p.add_argument("trace")

    args = parser.parse_args(argv)
    try:
        handler = {
            "run": _cmd_run,
            "check": _cmd_check,
            "explore": _cmd_explore,
            "sweep": _cmd_sweep,
            "digest": _cmd_digest,
            "render": _cmd_render,
        }[args.command]
        if args.command in ("run", "explore") and not (args.topology and args.scenario):
            _err("%s needs --topology and --scenario" % args.command)
            return 2
        return handler(args)
    except BrokenPipeError:
        # stdout consumer (e.g. `head`) went away; not an error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (netsim.ScenarioInvalid, netsim.UnknownFrame) as exc:
        _err("error: %s" % exc)
        return 2
    except OSError as exc:
        _err("error: %s" % exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
