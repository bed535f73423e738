"""Main memory with row-buffer and write-to-read turnaround timing, plus
fixed-latency SRAM backing the caches.

A single rank/bank with one open row reproduces the two penalty classes
(page switch, write-to-read switch) with minimal state. Data results never
depend on the timing state.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AddressError
from .bus import READ, WRITE, Transaction
from .kernel import CPU_CLOCK_PS, NS, SimTime

MIB = 1024 * 1024


@dataclass
class DramConfig:
    capacity: int = 128 * MIB
    row_size: int = 2048
    t_read: SimTime = 30 * NS
    t_write: SimTime = 30 * NS
    t_row_switch: SimTime = 15 * NS
    t_wtr: SimTime = 7 * NS

    def validate(self) -> None:
        if self.capacity % self.row_size:
            raise ValueError("capacity must be a multiple of row_size")
        for name in ("t_read", "t_write", "t_row_switch", "t_wtr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class Dram:
    def __init__(self, config: DramConfig | None = None):
        self.config = config or DramConfig()
        self.config.validate()
        self.storage = bytearray(self.config.capacity)
        self.open_row: int | None = None
        self.last_command: str | None = None

    def preload(self, address: int, data: bytes) -> None:
        """Install initial image bytes without transactions or timing."""
        self._check(address, len(data))
        self.storage[address:address + len(data)] = data

    def peek(self, address: int, length: int) -> bytes:
        self._check(address, length)
        return bytes(self.storage[address:address + length])

    def _check(self, address: int, byte_len: int) -> None:
        if byte_len <= 0 or address < 0 or address + byte_len > self.config.capacity:
            raise AddressError(
                f"DRAM access 0x{address:x}+{byte_len} outside capacity")

    def access(self, txn: Transaction, time: SimTime) -> tuple[SimTime, bytes]:
        self._check(txn.address, txn.byte_len)
        cfg = self.config
        row = txn.address // cfg.row_size
        latency = cfg.t_read if txn.command == READ else cfg.t_write
        if row != self.open_row:
            latency += cfg.t_row_switch
        if txn.command == READ and self.last_command == WRITE:
            latency += cfg.t_wtr
        self.open_row = row
        self.last_command = txn.command
        if txn.command == WRITE:
            self.storage[txn.address:txn.address + txn.byte_len] = txn.data
            return latency, b""
        return latency, bytes(self.storage[txn.address:txn.address + txn.byte_len])


class Sram:
    """Fixed-latency scratch memory (cache backing store semantics)."""

    def __init__(self, size: int, latency: SimTime = CPU_CLOCK_PS):
        self.size = size
        self.latency = latency
        self.storage = bytearray(size)

    def access(self, txn: Transaction, time: SimTime) -> tuple[SimTime, bytes]:
        if txn.byte_len <= 0 or txn.address < 0 or txn.address + txn.byte_len > self.size:
            raise AddressError(f"SRAM access 0x{txn.address:x}+{txn.byte_len} out of range")
        if txn.command == WRITE:
            self.storage[txn.address:txn.address + txn.byte_len] = txn.data
            return self.latency, b""
        return self.latency, bytes(self.storage[txn.address:txn.address + txn.byte_len])
