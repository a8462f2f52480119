"""Per-(interface, neighbor) records: sync state machine bookkeeping,
liveness, sequence state, and per-tree upstream/interest knowledge."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from .seq import NeighborSeqState
from .tree import MetricPair, TreeRef
from .wire import Sync, SyncTreeRecord


class SyncState(Enum):
    UNKNOWN = "UNKNOWN"
    MASTER = "MASTER"  # we are Master of the ongoing session
    SLAVE = "SLAVE"  # we are Slave of the ongoing session
    SYNCED = "SYNCED"


@dataclass
class SyncSession:
    i_am_master: bool
    my_ssn: int
    neighbor_boot_time: int
    neighbor_ssn: int = 0  # 0 until learned from the peer
    snapshot: List[SyncTreeRecord] = field(default_factory=list)  # frozen
    fragment_size: int = 100
    sync_sn: int = 0  # master: current exchange index; slave: next expected
    sent_more: bool = True
    received: List[SyncTreeRecord] = field(default_factory=list)
    retransmit_deadline: int = 0
    attempts_left: int = 5
    last_sent: Optional[Sync] = None

    def fragment(self, index: int) -> List[SyncTreeRecord]:
        lo = index * self.fragment_size
        return self.snapshot[lo : lo + self.fragment_size]

    def n_fragments(self) -> int:
        n = len(self.snapshot)
        return (n + self.fragment_size - 1) // self.fragment_size

    def more_at(self, index: int) -> bool:
        """More flag when transmitting exchange `index`: cleared only once
        every snapshot fragment has been carried by an exchange that the
        peer acknowledged (i.e. index is past the last fragment)."""
        return index < self.n_fragments()


@dataclass
class Neighbor:
    ip: str
    interface: str
    boot_time: int
    sync_state: SyncState = SyncState.UNKNOWN
    seq: NeighborSeqState = None  # type: ignore[assignment]
    hold_time: int = 0
    liveness_deadline: Optional[int] = None
    session: Optional[SyncSession] = None
    # Cached final echo (slave side) so a lost last reply can be repaired
    # when the master retransmits its closing Sync.
    last_echo: Optional[Sync] = None
    upstream: Dict[TreeRef, MetricPair] = field(default_factory=dict)
    interest: Dict[TreeRef, bool] = field(default_factory=dict)

    def __post_init__(self):
        if self.seq is None:
            self.seq = NeighborSeqState(neighbor_boot_time=self.boot_time)

    @property
    def synced(self) -> bool:
        return self.sync_state is SyncState.SYNCED

    @property
    def in_session(self) -> bool:
        return self.sync_state in (SyncState.MASTER, SyncState.SLAVE)
