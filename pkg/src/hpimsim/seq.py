"""Sequence-number logic.

Each interface owns a single sequence-number space shared by all message
types and trees.  Freshness of a message is given by the (BootTime, SN)
pair compared lexicographically; a higher BootTime always wins.  Per
neighbor we keep the highest SN accepted for each tree, compacted using
the neighbor's advertised CheckpointSN, and floored by the SnapshotSN
exchanged during synchronization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Hashable, Set, Tuple


@dataclass(frozen=True, order=True)
class SeqStamp:
    boot_time: int
    sn: int


def fresher(a: SeqStamp, b: SeqStamp) -> bool:
    """True iff a carries strictly fresher information than b."""
    return (a.boot_time, a.sn) > (b.boot_time, b.sn)


class Classification(Enum):
    ACCEPT = "accept"
    STALE = "stale"
    REQUIRES_SYNC = "requires_sync"


@dataclass
class InterfaceSeqState:
    """Allocation side: the interface's own BootTime and SN counter.

    Also tracks which allocated SNs are still awaiting acknowledgment so
    that checkpoint_sn_out (largest SN with every lower SN acknowledged)
    can be derived.
    """

    boot_time: int
    interface_sn: int = 0
    max_sn: int = 2**32 - 1
    _pending: Set[int] = field(default_factory=set)

    def allocate(self, now: int) -> Tuple[int, bool]:
        """Return the next SN; on overflow restart the space under a new
        BootTime (taken from the simulated clock) and signal it."""
        if self.interface_sn + 1 > self.max_sn:
            self.boot_time = max(now, self.boot_time + 1)
            self.interface_sn = 1
            self._pending = set()
            return 1, True
        self.interface_sn += 1
        return self.interface_sn, False

    def register_pending(self, sn: int) -> None:
        self._pending.add(sn)

    def mark_complete(self, sn: int) -> None:
        self._pending.discard(sn)

    @property
    def checkpoint_sn_out(self) -> int:
        if not self._pending:
            return self.interface_sn
        return min(self._pending) - 1


@dataclass
class NeighborSeqState:
    """Acceptance side: what we know about one neighbor's SN space."""

    neighbor_boot_time: int
    neighbor_snapshot_sn: int = 0
    my_snapshot_sn_for_neighbor: int = 0
    checkpoint_sn_in: int = 0
    per_tree_sn: Dict[Hashable, int] = field(default_factory=dict)

    def floor(self, tree: Hashable) -> int:
        """Lowest SN (inclusive) already covered by stored information."""
        base = max(self.checkpoint_sn_in, self.neighbor_snapshot_sn)
        return max(base, self.per_tree_sn.get(tree, 0))

    def classify(self, tree: Hashable, stamp: SeqStamp) -> Classification:
        if stamp.boot_time > self.neighbor_boot_time:
            return Classification.REQUIRES_SYNC
        if stamp.boot_time < self.neighbor_boot_time:
            return Classification.STALE
        if stamp.sn <= self.floor(tree):
            return Classification.STALE
        self.per_tree_sn[tree] = stamp.sn
        return Classification.ACCEPT

    def should_ack(self, tree: Hashable, stamp: SeqStamp) -> bool:
        """ACK freshest-or-equal messages only; never ACK at or below the
        neighbor-advertised checkpoint (denial-of-service rule)."""
        if stamp.boot_time != self.neighbor_boot_time:
            return False
        if stamp.sn <= self.checkpoint_sn_in:
            return False
        return stamp.sn >= self.floor(tree)

    def apply_checkpoint(self, checkpoint: int) -> None:
        if checkpoint < self.checkpoint_sn_in:
            return
        self.checkpoint_sn_in = checkpoint
        self.per_tree_sn = {t: sn for t, sn in self.per_tree_sn.items() if sn > checkpoint}
