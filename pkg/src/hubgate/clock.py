"""Logical clock and the ordered event log.

All time in hubgate is logical seconds: an integer counter advanced
explicitly by the simulation loop. Nothing in core logic reads wall time,
which is what makes scenario runs byte-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class LogicalClock:
    """Monotonic integer clock, advanced explicitly."""

    def __init__(self, start: int = 0) -> None:
        self._now = start

    @property
    def now(self) -> int:
        return self._now

    def advance(self, seconds: int = 1) -> int:
        if seconds < 0:
            raise ValueError("clock cannot move backwards")
        self._now += seconds
        return self._now


@dataclass
class EventLog:
    """Strictly time-ordered append-only log of world events.

    Entries are (time, payload) where payload is a plain JSON-serializable
    dict. `to_bytes` is the canonical serialization used by determinism
    checks: two runs match iff their logs serialize to identical bytes.
    """

    clock: LogicalClock
    entries: list[tuple[int, dict]] = field(default_factory=list)

    def append(self, event: str, **fields) -> None:
        now = self.clock.now
        if self.entries and now < self.entries[-1][0]:
            raise ValueError("event log must be time-ordered")
        payload = {"event": event}
        payload.update(fields)
        self.entries.append((now, payload))

    def to_list(self) -> list[dict]:
        return [{"t": t, **payload} for t, payload in self.entries]

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_list(), sort_keys=True, separators=(",", ":")).encode()
