"""Injectable monotonic clocks.

Latency and RTT are differences of two timestamps, so both probes must read
the same clock. Making the clock injectable lets metric tests substitute a
deterministic one.
"""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    def now_ns(self) -> int:
        """Current monotonic time in nanoseconds."""
        ...


class SystemClock:
    """Process monotonic clock (``time.monotonic_ns``)."""

    def now_ns(self) -> int:
        return time.monotonic_ns()


class ManualClock:
    """Test clock advanced explicitly, or automatically per read.

    With ``autostep`` set, each ``now_ns()`` call returns the current value
    and then advances by that many nanoseconds, giving a deterministic,
    strictly increasing timestamp sequence.
    """

    def __init__(self, start_ns: int = 0, autostep_ns: int = 0):
        self._now = start_ns
        self._autostep = autostep_ns

    def now_ns(self) -> int:
        value = self._now
        self._now += self._autostep
        return value

    def advance(self, delta_ns: int) -> None:
        if delta_ns < 0:
            raise ValueError("monotonic clocks cannot move backwards")
        self._now += delta_ns

    def set(self, value_ns: int) -> None:
        if value_ns < self._now:
            raise ValueError("monotonic clocks cannot move backwards")
        self._now = value_ns
