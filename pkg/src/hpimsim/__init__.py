"""Hard-state dense-mode multicast routing: protocol state machines, a
deterministic discrete-event simulator, and property checkers."""

__version__ = "1.0.0"

from .tree import MetricPair, TreeRef, TreeState  # noqa: F401
