"""Sequential discrete-event kernel, one instance per segment.

Time is an unsigned integer count of picoseconds. Events are totally
ordered by (time, seq); seq is the insertion counter, so events scheduled
for the same instant fire in scheduling order. There is no delta-cycle
mechanism: zero-delay self-scheduling loops are forbidden by construction
of the platform components.
"""

from __future__ import annotations

import heapq
from typing import Any, Callable, Optional

SimTime = int

PS = 1
NS = 1000
US = 1000_000
MS = 1000_000_000

#: CPU clock period at 1.7 GHz, rounded to integer picoseconds.
CPU_CLOCK_PS = 588


class KernelError(Exception):
    pass


class CausalityError(KernelError):
    """An event tried to schedule into the past."""


class Event:
    __slots__ = ("time", "seq", "handler", "payload", "cancelled", "fired")

    def __init__(self, time: SimTime, seq: int, handler: Callable, payload: Any):
        self.time = time
        self.seq = seq
        self.handler = handler
        self.payload = payload
        self.cancelled = False
        self.fired = False

    def __lt__(self, other: "Event") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


class EventKernel:
    """Priority-queue event executor with inclusive run_until semantics."""

    def __init__(self) -> None:
        self.now: SimTime = 0
        self.event_count: int = 0
        self._queue: list[Event] = []
        self._seq: int = 0

    def schedule(self, delay: SimTime, handler: Callable, payload: Any = None) -> Event:
        if delay < 0:
            raise CausalityError(f"negative delay {delay}")
        return self.schedule_at(self.now + delay, handler, payload)

    def schedule_at(self, time: SimTime, handler: Callable, payload: Any = None) -> Event:
        if time < self.now:
            raise CausalityError(f"schedule at {time} ps before now {self.now} ps")
        ev = Event(time, self._seq, handler, payload)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def cancel(self, ev: Event) -> bool:
        """True iff the event was still pending; it will never fire."""
        if ev.cancelled or ev.fired:
            return False
        # Lazy removal: the heap entry stays and is skipped on pop.
        ev.cancelled = True
        return True

    def peek_time(self) -> Optional[SimTime]:
        q = self._queue
        while q and q[0].cancelled:
            heapq.heappop(q)
        return q[0].time if q else None

    @property
    def quiescent(self) -> bool:
        return self.peek_time() is None

    def run_until(self, limit: SimTime) -> tuple[SimTime, int, bool]:
        """Execute all events with time <= limit (inclusive boundary).

        Returns (local_time, executed, quiescent). local_time lands on the
        limit so the caller's commit time is a hard lower bound for
        anything this kernel may still produce.
        """
        if limit < self.now:
            raise KernelError(f"run_until limit {limit} < now {self.now}")
        executed = 0
        q = self._queue
        while q:
            ev = q[0]
            if ev.cancelled:
                heapq.heappop(q)
                continue
            if ev.time > limit:
                break
            heapq.heappop(q)
            self.now = ev.time
            ev.fired = True
            ev.handler(ev.time, ev.payload)
            executed += 1
        self.now = limit
        self.event_count += executed
        return self.now, executed, self.quiescent
