"""Per-(S,G) broadcast-tree state: tree states, parent selection with the
feasibility condition, and assert-winner election."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from ipaddress import IPv4Address
from typing import Dict, List, NamedTuple, Optional, Tuple


@lru_cache(maxsize=None)
def _ip_value(ip: str) -> int:
    return int(IPv4Address(ip))


class TreeRef(NamedTuple):
    source: str
    group: str


class TreeState(Enum):
    ACTIVE = "ACTIVE"
    UNSURE = "UNSURE"
    INACTIVE = "INACTIVE"


@dataclass(frozen=True)
class MetricPair:
    """Route metric used for parent selection and assert election.

    Lower (preference, rpc) wins; ties are broken in favor of the higher
    IP address.
    """

    rpc_preference: int
    rpc: int
    tiebreak_ip: str = "0.0.0.0"

    def sort_key(self) -> Tuple[int, int, int]:
        return (self.rpc_preference, self.rpc, -_ip_value(self.tiebreak_ip))

    def beats(self, other: "MetricPair") -> bool:
        return self.sort_key() < other.sort_key()

    def feasible_under(self, my: "MetricPair") -> bool:
        """Loop prevention: a parent must offer a strictly better
        (preference, rpc) than the router's own."""
        return (self.rpc_preference, self.rpc) < (my.rpc_preference, my.rpc)


# Assert winner identity on a link as seen from one interface.
AW_SELF = "self"


@dataclass
class InterfaceTreeState:
    role_root: bool = False
    source_attached: bool = False
    # None = membership not yet reported on this interface; the configured
    # initial downstream interest applies until it is.
    local_members: Optional[bool] = None
    assert_winner: Optional[str] = None  # AW_SELF, a neighbor ip, or None
    best_upstream: Optional[str] = None  # neighbor ip of best upstream on link
    downstream_interest: bool = False
    forwarding: bool = False
    al_hysteresis_deadline: Optional[int] = None

    @property
    def is_aw(self) -> bool:
        return self.assert_winner == AW_SELF


@dataclass
class TreeEntry:
    tree: TreeRef
    is_originator: bool = False
    source_active: bool = False  # originators: data seen within the SAT window
    sat_deadline: Optional[int] = None
    state: TreeState = TreeState.INACTIVE
    metric: Optional[MetricPair] = None  # own (preference, rpc); None = no route
    root_interface: Optional[str] = None
    parent: Optional[Tuple[str, str]] = None  # (interface id, neighbor ip)
    router_interested: bool = False
    per_if: Dict[str, InterfaceTreeState] = field(default_factory=dict)


def compute_tree_state(
    is_originator: bool,
    source_active: bool,
    parent: Optional[Tuple[str, str]],
    has_upstream_anywhere: bool,
) -> TreeState:
    if is_originator and source_active:
        return TreeState.ACTIVE
    if not is_originator and parent is not None:
        return TreeState.ACTIVE
    if has_upstream_anywhere:
        return TreeState.UNSURE
    return TreeState.INACTIVE


def select_parent(
    candidates: List[Tuple[MetricPair, str]], my_metric: Optional[MetricPair]
) -> Optional[str]:
    """Pick the best upstream neighbor on the root interface, subject to
    the feasibility condition.  candidates: (advertised metric, ip)."""
    if not candidates or my_metric is None:
        return None
    best_metric, best_ip = min(candidates, key=lambda c: c[0].sort_key())
    if best_metric.feasible_under(my_metric):
        return best_ip
    return None


def best_upstream_on_link(candidates: List[Tuple[MetricPair, str]]) -> Optional[str]:
    if not candidates:
        return None
    return min(candidates, key=lambda c: c[0].sort_key())[1]


def elect_assert_winner(
    state: TreeState,
    role_root: bool,
    candidates: List[Tuple[MetricPair, str]],
    my_metric: Optional[MetricPair],
    my_ip: str,
) -> Tuple[Optional[str], Optional[str]]:
    """Return (assert winner identity, best upstream neighbor) for one
    interface.  Root interfaces never claim the assert themselves."""
    best = best_upstream_on_link(candidates)
    if role_root:
        return (best, best)
    if state is TreeState.ACTIVE and my_metric is not None:
        entries = [(m.sort_key(), ip) for m, ip in candidates]
        mine = MetricPair(my_metric.rpc_preference, my_metric.rpc, my_ip)
        entries.append((mine.sort_key(), AW_SELF))
        winner = min(entries)[1]
        return (winner, best)
    if state is TreeState.UNSURE:
        return (AW_SELF if not candidates else best, best)
    # INACTIVE: every non-root interface considers itself the winner.
    return (AW_SELF, best)
