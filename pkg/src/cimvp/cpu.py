"""Instruction-level processor model with L1 caches, plus the MiniISA
assembler and an untimed reference interpreter.

MiniISA is a 9-opcode, 64-bit, in-order stand-in for the platform's
processor: enough to express nested-loop VMM kernels and memory-mapped
accelerator drivers at instruction-level timing. One instruction per
clock (588 ps); memory stalls are rounded up to whole cycles so that
cycles * clock_period stays an exact identity.

Assembly grammar (comments with '#' or ';', labels end with ':'):

    LD   rd, imm(rs1)        rd = mem64[rs1 + imm]
    ST   rs2, imm(rs1)       mem64[rs1 + imm] = rs2
    ADD  rd, rs1, rs2        MUL rd, rs1, rs2        ADDI rd, rs1, imm
    BLT  rs1, rs2, label     BNE rs1, rs2, label     (signed compare)
    JAL  rd, label           rd = pc + 4, jump
    HALT

Registers r0..r31; r0 reads as zero, writes to it are discarded.
Branch immediates are byte offsets relative to the branch itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .bus import BLOCKED, READ, WRITE, Bus
from .errors import AddressError, AssembleError, DecodeError, RunawayError
from .kernel import CPU_CLOCK_PS, EventKernel, SimTime

MASK64 = (1 << 64) - 1
SIGN64 = 1 << 63

LD, ST, ADD, ADDI, MUL, BLT, BNE, JAL, HALT = range(9)
OPCODE_NAMES = ["LD", "ST", "ADD", "ADDI", "MUL", "BLT", "BNE", "JAL", "HALT"]

LINE_SIZE = 64
ICACHE_SIZE = 16 * 1024
DCACHE_SIZE = 32 * 1024


def _s64(x: int) -> int:
    return x - (1 << 64) if x & SIGN64 else x


# ---------------------------------------------------------------------------
# Assembler

_REG = re.compile(r"^r([0-9]|[12][0-9]|3[01])$", re.IGNORECASE)
_MEM = re.compile(r"^(-?(?:0x[0-9a-fA-F]+|\d+))\((r\d+)\)$", re.IGNORECASE)


def _parse_reg(tok: str, lineno: int) -> int:
    m = _REG.match(tok.strip())
    if not m:
        raise AssembleError(f"line {lineno}: bad register '{tok.strip()}'")
    return int(m.group(1))


def _parse_imm(tok: str, lineno: int) -> int:
    try:
        v = int(tok.strip(), 0)
    except ValueError:
        raise AssembleError(f"line {lineno}: bad immediate '{tok.strip()}'")
    if not -(1 << 31) <= v < (1 << 31):
        raise AssembleError(f"line {lineno}: immediate {v} out of 32-bit range")
    return v


def assemble(text: str) -> list[tuple]:
    """Assemble MiniISA source into a list of decoded instruction tuples
    (op, rd, rs1, rs2, imm); index i corresponds to pc = base + 4*i."""
    labels: dict[str, int] = {}
    items: list[tuple] = []  # (lineno, mnemonic, operand string)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        while line:
            if ":" in line and re.match(r"^[A-Za-z_.][\w.]*:", line):
                name, line = line.split(":", 1)
                if name in labels:
                    raise AssembleError(f"line {lineno}: duplicate label '{name}'")
                labels[name] = len(items)
                line = line.strip()
                continue
            items.append((lineno, line))
            line = ""
    program: list[tuple] = []
    for index, (lineno, stmt) in enumerate(items):
        parts = stmt.split(None, 1)
        mnem = parts[0].upper()
        ops = [o.strip() for o in parts[1].split(",")] if len(parts) > 1 else []
        if mnem == "HALT":
            program.append((HALT, 0, 0, 0, 0))
        elif mnem in ("LD", "ST"):
            if len(ops) != 2:
                raise AssembleError(f"line {lineno}: {mnem} needs 2 operands")
            reg = _parse_reg(ops[0], lineno)
            m = _MEM.match(ops[1])
            if not m:
                raise AssembleError(f"line {lineno}: bad memory operand '{ops[1]}'")
            imm = _parse_imm(m.group(1), lineno)
            base = _parse_reg(m.group(2), lineno)
            if mnem == "LD":
                program.append((LD, reg, base, 0, imm))
            else:
                program.append((ST, 0, base, reg, imm))
        elif mnem in ("ADD", "MUL"):
            if len(ops) != 3:
                raise AssembleError(f"line {lineno}: {mnem} needs 3 operands")
            program.append(((ADD if mnem == "ADD" else MUL),
                            _parse_reg(ops[0], lineno), _parse_reg(ops[1], lineno),
                            _parse_reg(ops[2], lineno), 0))
        elif mnem == "ADDI":
            if len(ops) != 3:
                raise AssembleError(f"line {lineno}: ADDI needs 3 operands")
            program.append((ADDI, _parse_reg(ops[0], lineno),
                            _parse_reg(ops[1], lineno), 0,
                            _parse_imm(ops[2], lineno)))
        elif mnem in ("BLT", "BNE"):
            if len(ops) != 3:
                raise AssembleError(f"line {lineno}: {mnem} needs 3 operands")
            if ops[2] not in labels:
                raise AssembleError(f"line {lineno}: undefined label '{ops[2]}'")
            off = (labels[ops[2]] - index) * 4
            program.append(((BLT if mnem == "BLT" else BNE), 0,
                            _parse_reg(ops[0], lineno), _parse_reg(ops[1], lineno),
                            off))
        elif mnem == "JAL":
            if len(ops) != 2:
                raise AssembleError(f"line {lineno}: JAL needs 2 operands")
            if ops[1] not in labels:
                raise AssembleError(f"line {lineno}: undefined label '{ops[1]}'")
            program.append((JAL, _parse_reg(ops[0], lineno), 0, 0,
                            (labels[ops[1]] - index) * 4))
        else:
            raise AssembleError(f"line {lineno}: unknown mnemonic '{mnem}'")
    return program


# ---------------------------------------------------------------------------
# Untimed reference interpreter (functional oracle; no caches, no buses)

@dataclass
class ReferenceResult:
    regs: list[int]
    memory: bytearray
    instruction_count: int
    load_count: int
    store_count: int


def run_reference(program: list[tuple], memory: bytearray, pc: int = 0,
                  budget: int = 100_000_000) -> ReferenceResult:
    """Execute a MiniISA program against flat memory; the architectural
    oracle for the timed model. pc is an index into `memory` in bytes;
    program indices are pc // 4."""
    regs = [0] * 32
    mem = memory
    count = loads = stores = 0
    base = pc
    while True:
        if count > budget:
            raise RunawayError(f"reference exceeded {budget} instructions")
        idx = (pc - base) >> 2
        if not 0 <= idx < len(program):
            raise DecodeError(f"reference pc 0x{pc:x} outside program")
        op, rd, rs1, rs2, imm = program[idx]
        count += 1
        if op == LD:
            addr = (regs[rs1] + imm) & MASK64
            regs[rd] = int.from_bytes(mem[addr:addr + 8], "little") if rd else 0
            loads += 1
        elif op == ST:
            addr = (regs[rs1] + imm) & MASK64
            mem[addr:addr + 8] = regs[rs2].to_bytes(8, "little")
            stores += 1
        elif op == ADD:
            if rd:
                regs[rd] = (regs[rs1] + regs[rs2]) & MASK64
        elif op == ADDI:
            if rd:
                regs[rd] = (regs[rs1] + imm) & MASK64
        elif op == MUL:
            if rd:
                regs[rd] = (regs[rs1] * regs[rs2]) & MASK64
        elif op == BLT:
            if _s64(regs[rs1]) < _s64(regs[rs2]):
                pc += imm
                continue
        elif op == BNE:
            if regs[rs1] != regs[rs2]:
                pc += imm
                continue
        elif op == JAL:
            if rd:
                regs[rd] = (pc + 4) & MASK64
            pc += imm
            continue
        else:  # HALT
            return ReferenceResult(regs, mem, count, loads, stores)
        pc += 4


# ---------------------------------------------------------------------------
# Caches

class Cache:
    """Direct-mapped, write-through, no-write-allocate; passive tag+data
    store. Misses are serviced by the owning CPU through the bus."""

    def __init__(self, size: int, line: int = LINE_SIZE):
        if size % line or size & (size - 1):
            raise ValueError("cache size must be a power of two multiple of line")
        self.line = line
        self.nsets = size // line
        self.tags: list[int] = [-1] * self.nsets
        self.data: list[bytearray | None] = [None] * self.nsets

    def lookup(self, addr: int) -> tuple[bool, int, int]:
        """(hit, set index, line base address)."""
        line_base = addr & ~(self.line - 1)
        index = (addr // self.line) % self.nsets
        return self.tags[index] == line_base, index, line_base

    def fill(self, index: int, line_base: int, data: bytes) -> None:
        self.tags[index] = line_base
        self.data[index] = bytearray(data)

    def read(self, index: int, addr: int, nbytes: int) -> bytes:
        off = addr & (self.line - 1)
        return bytes(self.data[index][off:off + nbytes])

    def update(self, addr: int, data: bytes) -> None:
        """Write-through update of a resident line; no allocate on miss."""
        hit, index, _ = self.lookup(addr)
        if hit:
            off = addr & (self.line - 1)
            self.data[index][off:off + len(data)] = data

    def flush(self) -> None:
        self.tags = [-1] * self.nsets
        self.data = [None] * self.nsets


class _Pending:
    """State of an access that left the segment; resolved by the response."""
    __slots__ = ("kind", "issue_time", "cont")

    def __init__(self, kind: str, issue_time: SimTime, cont):
        self.kind = kind
        self.issue_time = issue_time
        self.cont = cont


class Cpu:
    """Timed in-order core. Executes as kernel events; instructions run
    inline up to the next pending kernel event or the quantum limit, so
    event ordering within the segment stays exact."""

    def __init__(self, name: str, kernel: EventKernel, bus: Bus,
                 program: list[tuple], program_base: int, *,
                 caches_enabled: bool = True, budget: int = 200_000_000,
                 clock_period: SimTime = CPU_CLOCK_PS):
        self.name = name
        self.kernel = kernel
        self.bus = bus
        self.program = program
        self.program_base = program_base
        self.clock_period = clock_period
        self.budget = budget
        self.caches_enabled = caches_enabled
        self.icache = Cache(ICACHE_SIZE)
        self.dcache = Cache(DCACHE_SIZE)
        self.regs = [0] * 32
        self.pc = program_base
        self.time: SimTime = 0
        self.cycles = 0
        self.instruction_count = 0
        self.halted = False
        self.pending: _Pending | None = None
        self._cont = None  # the single queued continuation event, if any
        self.run_limit: SimTime = 0
        # Cacheable window: the DRAM range (base 0 by the fixed map).
        dram = [r for r in bus.map.ranges if r.target == "dram"]
        self.cacheable_end = dram[0].end if dram else 0
        self.started = False

    # -- wiring -----------------------------------------------------------

    def start(self) -> None:
        if not self.started:
            self.started = True
            self._schedule_cont(self.time)

    def _schedule_cont(self, time: SimTime) -> None:
        """Keep at most one continuation event queued; two continuations at
        the same instant would leapfrog each other forever."""
        if self._cont is not None:
            self.kernel.cancel(self._cont)
        self._cont = self.kernel.schedule_at(time, self._run_event)

    def set_limit(self, limit: SimTime) -> None:
        self.run_limit = limit
        # Resume a core that exhausted its previous quantum. (It must not
        # self-reschedule at the limit: run_until's inclusive boundary would
        # pop that event again in the same call, spinning forever.)
        if (self.started and not self.halted and self.pending is None
                and self._cont is None and self.time < limit):
            self._schedule_cont(max(self.time, self.kernel.now))

    @property
    def busy(self) -> bool:
        return self.started and not self.halted

    # -- memory helpers ---------------------------------------------------

    def _charge(self, issue: SimTime, completion: SimTime) -> int:
        """Stall time from a memory access, rounded up to whole cycles."""
        stall = completion - issue
        if stall <= 0:
            return 0
        period = self.clock_period
        return -(-stall // period) * period

    def _fetch_line(self, cache: Cache, index: int, line_base: int,
                    issue: SimTime, initiator: str, cont):
        """Fill a cache line via the bus; returns stall ps or raises by
        parking the continuation for a remote response."""
        txn = self.bus.make_txn(initiator, READ, line_base, b"", LINE_SIZE, issue)
        completion, data = self.bus.route(txn, issue)
        if completion is BLOCKED:
            self.pending = _Pending("fill", issue, (cache, index, line_base, cont))
            return None
        cache.fill(index, line_base, data)
        return self._charge(issue, completion)

    # -- execution --------------------------------------------------------

    def _run_event(self, time: SimTime, _payload=None) -> None:
        self._cont = None
        if self.halted or self.pending is not None:
            return
        self._run_loop(max(self.time, time))

    def _run_loop(self, t: SimTime) -> None:
        kernel = self.kernel
        regs = self.regs
        program = self.program
        base = self.program_base
        period = self.clock_period
        limit = self.run_limit
        icache = self.icache
        dcache = self.dcache
        cacheable_end = self.cacheable_end
        caches_on = self.caches_enabled
        bus = self.bus
        iname = self.name + ".i"
        dname = self.name + ".d"

        while True:
            nxt = kernel.peek_time()
            stop = limit if nxt is None else (limit if limit < nxt else nxt)
            if t >= stop or self.halted:
                break
            idx = (self.pc - base) >> 2
            if not 0 <= idx < len(program):
                raise DecodeError(f"{self.name}: pc 0x{self.pc:x} outside program")
            if self.instruction_count >= self.budget:
                raise RunawayError(f"{self.name}: instruction budget exhausted")

            consumed = period
            # Instruction fetch through the icache (timing only).
            if caches_on:
                hit, iidx, iline = icache.lookup(self.pc)
                if not hit:
                    stall = self._fetch_line(icache, iidx, iline, t, iname,
                                             ("ifetch",))
                    if stall is None:
                        self.time = t
                        return
                    consumed += stall
            else:
                txn = bus.make_txn(iname, READ, self.pc, b"", 4, t)
                completion, _ = bus.route(txn, t)
                if completion is BLOCKED:
                    self.pending = _Pending("ifetch_raw", t, None)
                    self.time = t
                    return
                consumed += self._charge(t, completion)

            op, rd, rs1, rs2, imm = program[idx]
            self.instruction_count += 1
            taken = False

            if op == LD:
                addr = (regs[rs1] + imm) & MASK64
                if caches_on and addr < cacheable_end:
                    hit, didx, dline = dcache.lookup(addr)
                    if addr & 7 or (addr & (LINE_SIZE - 1)) > LINE_SIZE - 8:
                        raise AddressError(
                            f"{self.name}: misaligned LD at 0x{addr:x}")
                    if not hit:
                        stall = self._fetch_line(
                            dcache, didx, dline, t, dname, ("ld", rd, addr, consumed))
                        if stall is None:
                            self.time = t
                            return
                        consumed += stall
                        didx = didx  # line now resident
                    value = int.from_bytes(dcache.read(didx, addr, 8), "little")
                else:
                    txn = bus.make_txn(dname, READ, addr, b"", 8, t)
                    completion, data = bus.route(txn, t)
                    if completion is BLOCKED:
                        self.pending = _Pending("ld_raw", t, (rd, consumed))
                        self.time = t
                        return
                    consumed += self._charge(t, completion)
                    value = int.from_bytes(data, "little")
                if rd:
                    regs[rd] = value
            elif op == ST:
                addr = (regs[rs1] + imm) & MASK64
                data = regs[rs2].to_bytes(8, "little")
                if caches_on and addr < cacheable_end:
                    dcache.update(addr, data)
                txn = bus.make_txn(dname, WRITE, addr, data, 8, t)
                completion, _ = bus.route(txn, t)
                if completion is BLOCKED:
                    self.pending = _Pending("st", t, (consumed,))
                    self.time = t
                    return
                consumed += self._charge(t, completion)
            elif op == ADD:
                if rd:
                    regs[rd] = (regs[rs1] + regs[rs2]) & MASK64
            elif op == ADDI:
                if rd:
                    regs[rd] = (regs[rs1] + imm) & MASK64
            elif op == MUL:
                if rd:
                    regs[rd] = (regs[rs1] * regs[rs2]) & MASK64
            elif op == BLT:
                if _s64(regs[rs1]) < _s64(regs[rs2]):
                    self.pc += imm
                    taken = True
            elif op == BNE:
                if regs[rs1] != regs[rs2]:
                    self.pc += imm
                    taken = True
            elif op == JAL:
                if rd:
                    regs[rd] = (self.pc + 4) & MASK64
                self.pc += imm
                taken = True
            else:  # HALT
                self.halted = True
                self.cycles += 1
                t += period
                break

            if not taken:
                self.pc += 4
            self.cycles += consumed // period
            t += consumed

        self.time = t
        if not self.halted and self.pending is None and t < limit:
            # Stopped for an intervening event: continue after it fires.
            self._schedule_cont(t)
        # Quantum exhausted (t >= limit): wait for the next set_limit.

    # -- remote completion ------------------------------------------------

    def complete_remote(self, completion: SimTime, data: bytes) -> None:
        """Called by the segment runtime when a response arrives."""
        pending = self.pending
        self.pending = None
        issue = pending.issue_time
        period = self.clock_period
        if pending.kind == "fill":
            cache, index, line_base, cont = pending.cont
            cache.fill(index, line_base, data)
            if cont[0] == "ifetch":
                # Re-issue the whole instruction now that the line is resident;
                # the fetch stall is charged by restarting at the completion.
                stall = self._charge(issue, completion)
                self.time = issue
                self._restart(issue, stall)
                return
            _tag, rd, addr, consumed_before = cont
            stall = self._charge(issue, completion)
            value = int.from_bytes(cache.read(index, addr, 8), "little")
            if rd:
                self.regs[rd] = value
            self._finish_instr(issue, consumed_before + stall)
        elif pending.kind == "ld_raw":
            rd, consumed_before = pending.cont
            if rd:
                self.regs[rd] = int.from_bytes(data, "little")
            self._finish_instr(issue, consumed_before + self._charge(issue, completion))
        elif pending.kind == "st":
            (consumed_before,) = pending.cont
            self._finish_instr(issue, consumed_before + self._charge(issue, completion))
        else:  # ifetch_raw
            self._restart(issue, self._charge(issue, completion))

    def _finish_instr(self, issue: SimTime, consumed: SimTime) -> None:
        self.pc += 4
        self.cycles += consumed // self.clock_period
        self.time = issue + consumed
        self._schedule_cont(max(self.time, self.kernel.now))

    def _restart(self, issue: SimTime, stall: SimTime) -> None:
        # The instruction at pc has not executed; account the fetch stall and
        # let the run loop redo it (now a guaranteed icache hit).
        self.cycles += stall // self.clock_period
        self.time = issue + stall
        self._schedule_cont(max(self.time, self.kernel.now))
