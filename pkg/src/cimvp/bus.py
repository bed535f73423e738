"""Interconnect: transactions, address decoding, per-segment bus and trace sink.

The address map is global and fixed by convention: DRAM occupies
[0, 128 MiB) and CIM unit k sits at 0x8000_0000 + k * 0x1_0000. A bus
serves targets that live in its own segment directly; accesses to targets
in other segments are handed to the segment runtime, which carries them as
request/response messages over channels.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field

from .errors import AddressError
from .kernel import NS, SimTime

READ = "READ"
WRITE = "WRITE"

#: Default bus latency per hop.
BUS_LATENCY_PS = 2 * NS

CIM_BASE = 0x8000_0000
CIM_STRIDE = 0x1_0000

# Register offsets within a CIM unit's window.
REG_CONFIG = 0x00
REG_STATUS = 0x08
REG_DATA_IN = 0x10
REG_DATA_OUT = 0x18
REG_CMD = 0x20


@dataclass
class Transaction:
    """A read/write memory access; the unit of tracing."""

    id: int
    initiator: str
    command: str
    address: int
    data: bytes
    byte_len: int
    issue_time: SimTime
    completion_time: SimTime = 0
    latency_annotation: SimTime = 0


@dataclass(frozen=True)
class Range:
    base: int
    size: int
    target: str
    segment: int

    @property
    def end(self) -> int:
        return self.base + self.size


class AddressMap:
    def __init__(self, ranges: list[Range]):
        ordered = sorted(ranges, key=lambda r: r.base)
        for a, b in zip(ordered, ordered[1:]):
            if a.end > b.base:
                raise AddressError(f"overlapping ranges at 0x{b.base:x}")
        for r in ordered:
            if r.size <= 0:
                raise AddressError(f"empty range for {r.target}")
        self.ranges = ordered
        self._bases = [r.base for r in ordered]

    def decode(self, address: int) -> Range:
        i = bisect_right(self._bases, address) - 1
        if i >= 0:
            r = self.ranges[i]
            if address < r.end:
                return r
        raise AddressError(f"unmapped address 0x{address:016x}")


CSV_HEADER = ["timestamp_ps", "initiator", "target", "address_hex", "command",
              "byte_len", "latency_ps"]


class TraceSink:
    """Per-segment transaction trace; one record per completed transaction."""

    def __init__(self, segment_id: int):
        self.segment_id = segment_id
        self.records: list[tuple] = []

    def record(self, timestamp: SimTime, initiator: str, target: str,
               address: int, command: str, byte_len: int, latency: SimTime) -> None:
        self.records.append((timestamp, initiator, target, address, command,
                             byte_len, latency))

    def histogram(self, key: str) -> dict[str, int]:
        idx = {"initiator": 1, "target": 2, "command": 4}[key]
        return dict(sorted(Counter(r[idx] for r in self.records).items()))

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for ts, ini, tgt, addr, cmd, blen, lat in self.records:
                w.writerow([ts, ini, tgt, f"0x{addr:016x}", cmd, blen, lat])


def merge_csv(sinks: list[TraceSink], path) -> None:
    """Global export: per-segment files concatenated in segment order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for sink in sorted(sinks, key=lambda s: s.segment_id):
            for ts, ini, tgt, addr, cmd, blen, lat in sink.records:
                w.writerow([ts, ini, tgt, f"0x{addr:016x}", cmd, blen, lat])


#: Sentinel returned by Bus.route for accesses that left the segment.
BLOCKED = object()


class Bus:
    """Address-decoding forwarder for one segment.

    Local targets are invoked synchronously; the result is the completion
    time after bus latency plus the target's own latency. Cross-segment
    accesses return BLOCKED and travel as messages; the response completes
    at the initiator through the segment runtime.
    """

    def __init__(self, segment_id: int, address_map: AddressMap,
                 latency: SimTime = BUS_LATENCY_PS):
        self.segment_id = segment_id
        self.map = address_map
        self.latency = latency
        self.targets: dict[str, object] = {}
        self.sink = TraceSink(segment_id)
        self.remote_send = None  # wired by the segment runtime
        self._next_id = segment_id << 48

    def attach(self, name: str, component) -> None:
        self.targets[name] = component

    def make_txn(self, initiator: str, command: str, address: int,
                 data: bytes, byte_len: int, time: SimTime) -> Transaction:
        self._next_id += 1
        return Transaction(self._next_id, initiator, command, address,
                           data, byte_len, time)

    def route(self, txn: Transaction, time: SimTime):
        """Returns (completion_time, data) or (BLOCKED, None)."""
        rng = self.map.decode(txn.address)
        if rng.segment != self.segment_id:
            self.remote_send(txn, time + self.latency, rng.segment)
            return BLOCKED, None
        return self._serve_local(txn, time, rng)

    def serve_remote(self, txn: Transaction, time: SimTime):
        """Service a request that arrived over a channel (or forward it on)."""
        rng = self.map.decode(txn.address)
        if rng.segment != self.segment_id:
            # Intermediate hop: forward toward the target segment.
            self.remote_send(txn, time + self.latency, rng.segment)
            return BLOCKED, None
        return self._serve_local(txn, time, rng)

    def _serve_local(self, txn: Transaction, time: SimTime, rng: Range):
        target = self.targets[rng.target]
        latency, data = target.access(txn, time + self.latency)
        completion = time + self.latency + latency
        txn.completion_time = completion
        txn.latency_annotation = completion - txn.issue_time
        self.sink.record(completion, txn.initiator, rng.target, txn.address,
                         txn.command, txn.byte_len, txn.latency_annotation)
        return completion, data
