"""ACK-protected transmission bookkeeping.

Every reliable message (upstream and interest messages) is retransmitted
until each awaited neighbor acknowledges it or is declared dead.  Newer
messages cancel older pending ones per the suppression rules enforced by
the router when it sends.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .seq import SeqStamp
from .tree import TreeRef
from .wire import Message


@dataclass
class PendingTransmission:
    interface: str
    tree: TreeRef
    stamp: SeqStamp
    message: Message
    awaiting: Set[str]
    retransmit_deadline: int
    unicast_target: Optional[str] = None

    @property
    def is_upstream(self) -> bool:
        return self.unicast_target is None


@dataclass
class PendingStore:
    entries: List[PendingTransmission] = field(default_factory=list)

    def add(self, entry: PendingTransmission) -> None:
        self.entries.append(entry)

    def find(self, interface: str, tree: TreeRef, sn: int) -> Optional[PendingTransmission]:
        for e in self.entries:
            if e.interface == interface and e.tree == tree and e.stamp.sn == sn:
                return e
        return None

    def remove(self, entry: PendingTransmission) -> None:
        self.entries.remove(entry)

    def due(self, now: int) -> List[PendingTransmission]:
        return [e for e in self.entries if e.retransmit_deadline <= now]

    def next_deadline(self) -> Optional[int]:
        if not self.entries:
            return None
        return min(e.retransmit_deadline for e in self.entries)

    def older_upstream(self, interface: str, tree: TreeRef, stamp: SeqStamp) -> List[PendingTransmission]:
        return [
            e
            for e in self.entries
            if e.interface == interface
            and e.tree == tree
            and e.is_upstream
            and (e.stamp.boot_time, e.stamp.sn) < (stamp.boot_time, stamp.sn)
        ]

    def older_unicast(
        self, interface: str, tree: TreeRef, target: str, stamp: SeqStamp
    ) -> List[PendingTransmission]:
        return [
            e
            for e in self.entries
            if e.interface == interface
            and e.tree == tree
            and e.unicast_target == target
            and (e.stamp.boot_time, e.stamp.sn) < (stamp.boot_time, stamp.sn)
        ]

    def toward_neighbor_below(
        self, interface: str, neighbor: str, stamp: SeqStamp
    ) -> List[PendingTransmission]:
        """Entries awaited by `neighbor` that are older than `stamp`
        (used when a new snapshot toward that neighbor makes them moot)."""
        return [
            e
            for e in self.entries
            if e.interface == interface
            and neighbor in e.awaiting
            and (e.stamp.boot_time, e.stamp.sn) < (stamp.boot_time, stamp.sn)
        ]
