"""Memristor-crossbar compute-in-memory accelerator unit.

The unit is a memory-mapped target with five registers (CONFIG, STATUS,
DATA_IN, DATA_OUT, CMD). Its controller walks IDLE -> IN -> OP -> OUT ->
IDLE; weights are streamed during an initialize phase in IDLE, input
vectors during IN, and results are popped from DATA_OUT during OUT.
All values are unsigned integers; saturation at the output resolution is
defined behavior. The crossbar calculator is deliberately plain integer
code so tests can check it against an independent matmul oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .bus import (READ, REG_CMD, REG_CONFIG, REG_DATA_IN, REG_DATA_OUT,
                  REG_STATUS, Transaction)
from .errors import ProtocolError
from .kernel import NS, EventKernel, SimTime

IDLE, IN, OP, OUT = 0, 1, 2, 3
STATE_NAMES = {IDLE: "IDLE", IN: "IN", OP: "OP", OUT: "OUT"}

CMD_INITIALIZE = 1

# CONFIG register: selector in bits 56..63, value in bits 0..31.
CFG_MATRIX_H = 1
CFG_MATRIX_W = 2
CFG_VEC_COUNT = 3
CFG_INPUT_RES = 4
CFG_OUTPUT_RES = 5
CFG_WEIGHT_RES = 6

_CFG_FIELDS = {
    CFG_MATRIX_H: "matrix_h",
    CFG_MATRIX_W: "matrix_w",
    CFG_VEC_COUNT: "vec_count",
    CFG_INPUT_RES: "input_res",
    CFG_OUTPUT_RES: "output_res",
    CFG_WEIGHT_RES: "weight_res",
}


def config_word(field: int, value: int) -> int:
    return (field << 56) | (value & 0xFFFF_FFFF)


@dataclass
class CimConfig:
    rows: int = 256
    cols: int = 256
    input_res: int = 8
    output_res: int = 16
    weight_res: int = 8
    in_port_width: int = 64
    out_port_width: int = 64
    op_cycles: int = 64
    cim_clock_period: SimTime = 10 * NS
    matrix_h: int = 0
    matrix_w: int = 0
    vec_count: int = 0

    def validate(self) -> None:
        for name in ("input_res", "output_res", "weight_res"):
            if getattr(self, name) < 1:
                raise ProtocolError(f"{name} must be >= 1")
        for name in ("in_port_width", "out_port_width"):
            if getattr(self, name) % 8:
                raise ProtocolError(f"{name} must be a multiple of 8")
        if not (1 <= self.matrix_h <= self.rows and 1 <= self.matrix_w <= self.cols):
            raise ProtocolError(
                f"MatrixTooLarge: {self.matrix_h}x{self.matrix_w} does not fit "
                f"the {self.rows}x{self.cols} crossbar")
        if self.vec_count < 1:
            raise ProtocolError("vec_count must be >= 1")


def in_cycles(cfg: CimConfig, vec_len: int) -> int:
    """IN-state port cycles; one streamed DATA_IN word per cycle."""
    if vec_len < 1:
        raise ProtocolError("vec_len must be >= 1")
    return -(-vec_len * cfg.input_res // cfg.in_port_width)


def out_cycles(cfg: CimConfig, out_len: int) -> int:
    if out_len < 1:
        raise ProtocolError("out_len must be >= 1")
    return -(-out_len * cfg.output_res // cfg.out_port_width)


def weight_cycles(cfg: CimConfig) -> int:
    n = cfg.matrix_h * cfg.matrix_w
    return -(-n * cfg.weight_res // cfg.in_port_width)


def pack_values(values, res: int, port_width: int) -> list[int]:
    """Pack fixed-width unsigned values little-end-first into port words."""
    per_word = port_width // res
    if per_word < 1:
        raise ProtocolError("resolution exceeds port width")
    words = []
    for base in range(0, len(values), per_word):
        word = 0
        for i, v in enumerate(values[base:base + per_word]):
            word |= (v & ((1 << res) - 1)) << (i * res)
        words.append(word)
    return words


def unpack_values(words, res: int, port_width: int, count: int) -> list[int]:
    per_word = port_width // res
    mask = (1 << res) - 1
    out = []
    for word in words:
        for i in range(per_word):
            out.append((word >> (i * res)) & mask)
            if len(out) == count:
                return out
    return out


def crossbar_vmm(weights: list[list[int]], vector: list[int],
                 output_res: int) -> list[int]:
    """Functional crossbar: out[j] = clamp(sum_k in[k] * W[k][j]).

    Plain integer arithmetic on purpose; the independent oracle in the
    tests is numpy.
    """
    h = len(weights)
    w = len(weights[0]) if h else 0
    limit = (1 << output_res) - 1
    out = [0] * w
    for k in range(h):
        vk = vector[k]
        if not vk:
            continue
        row = weights[k]
        for j in range(w):
            out[j] += vk * row[j]
    return [v if v <= limit else limit for v in out]


class CimUnit:
    """One crossbar accelerator with its controller FSM and register file."""

    def __init__(self, name: str, kernel: EventKernel,
                 config: CimConfig | None = None):
        self.name = name
        self.kernel = kernel
        self.base_config = config or CimConfig()
        self.config = replace(self.base_config)
        self.fsm = IDLE
        self.state_log: list[tuple[int, SimTime]] = [(IDLE, 0)]
        self.initialized = False
        self.loading_weights = False
        self.weight_words: list[int] = []
        self.weights: list[list[int]] = []
        self.in_words: list[int] = []
        self.out_words: list[int] = []
        self.out_total = 0
        self.vectors_done = 0
        self.in_entry: SimTime = 0
        self.out_entry: SimTime = 0
        self.busy_count = 0  # DRAM-independent work marker for reports

    # -- register file ----------------------------------------------------

    def access(self, txn: Transaction, time: SimTime) -> tuple[SimTime, bytes]:
        offset = txn.address & (0x1_0000 - 1)
        latency = self.config.cim_clock_period
        if txn.command == READ:
            value = self.read(offset, time)
        else:
            self.write(offset, int.from_bytes(txn.data[:8], "little"), time)
            value = 0
        return latency, value.to_bytes(8, "little")

    def write(self, offset: int, value: int, time: SimTime) -> None:
        if offset == REG_CONFIG:
            self._write_config(value)
        elif offset == REG_CMD:
            self._write_cmd(value)
        elif offset == REG_DATA_IN:
            self._write_data(value, time)
        else:
            raise ProtocolError(f"{self.name}: write to invalid offset 0x{offset:x}")

    def read(self, offset: int, time: SimTime) -> int:
        if offset == REG_STATUS:
            return self.fsm
        if offset == REG_DATA_OUT:
            return self._pop_output(time)
        raise ProtocolError(f"{self.name}: read from invalid offset 0x{offset:x}")

    # -- protocol ---------------------------------------------------------

    def _write_config(self, value: int) -> None:
        if self.fsm != IDLE or self.initialized:
            raise ProtocolError(f"{self.name}: CONFIG write outside pre-init IDLE")
        field = value >> 56
        if field not in _CFG_FIELDS:
            raise ProtocolError(f"{self.name}: unknown CONFIG field {field}")
        setattr(self.config, _CFG_FIELDS[field], value & 0xFFFF_FFFF)

    def _write_cmd(self, value: int) -> None:
        if value != CMD_INITIALIZE:
            raise ProtocolError(f"{self.name}: unknown CMD {value}")
        if self.fsm != IDLE or self.initialized:
            raise ProtocolError(f"{self.name}: INITIALIZE outside pre-init IDLE")
        self.config.validate()
        self.initialized = True
        self.loading_weights = True
        self.weight_words = []

    def _write_data(self, value: int, time: SimTime) -> None:
        cfg = self.config
        if self.loading_weights:
            self.weight_words.append(value)
            if len(self.weight_words) == weight_cycles(cfg):
                flat = unpack_values(self.weight_words, cfg.weight_res,
                                     cfg.in_port_width, cfg.matrix_h * cfg.matrix_w)
                self.weights = [flat[k * cfg.matrix_w:(k + 1) * cfg.matrix_w]
                                for k in range(cfg.matrix_h)]
                self.loading_weights = False
                self._enter(IN, time)
                self.in_entry = time
                self.in_words = []
            return
        if self.fsm == IDLE:
            if not self.initialized:
                raise ProtocolError(f"{self.name}: DATA_IN in IDLE without INITIALIZE")
            if self.vectors_done >= cfg.vec_count:
                raise ProtocolError(f"{self.name}: all {cfg.vec_count} vectors done")
            self._enter(IN, time)
            self.in_entry = time
            self.in_words = []
        if self.fsm != IN:
            raise ProtocolError(
                f"{self.name}: DATA_IN in state {STATE_NAMES[self.fsm]}")
        self.in_words.append(value)
        if len(self.in_words) > in_cycles(cfg, cfg.matrix_h):
            raise ProtocolError(f"{self.name}: excess input word")
        if len(self.in_words) == in_cycles(cfg, cfg.matrix_h):
            ready = max(time, self.in_entry + in_cycles(cfg, cfg.matrix_h)
                        * cfg.cim_clock_period)
            self.kernel.schedule_at(ready, self._start_op)

    def _start_op(self, time: SimTime, _payload) -> None:
        cfg = self.config
        self._enter(OP, time)
        self.kernel.schedule_at(time + cfg.op_cycles * cfg.cim_clock_period,
                                self._finish_op)

    def _finish_op(self, time: SimTime, _payload) -> None:
        cfg = self.config
        vector = unpack_values(self.in_words, cfg.input_res, cfg.in_port_width,
                               cfg.matrix_h)
        result = crossbar_vmm(self.weights, vector, cfg.output_res)
        self.busy_count += cfg.matrix_h * cfg.matrix_w
        self.out_words = pack_values(result, cfg.output_res, cfg.out_port_width)
        self.out_total = len(self.out_words)
        self._enter(OUT, time)
        self.out_entry = time

    def _pop_output(self, time: SimTime) -> int:
        if self.fsm != OUT:
            raise ProtocolError(
                f"{self.name}: DATA_OUT read in state {STATE_NAMES[self.fsm]}")
        word = self.out_words.pop(0)
        if not self.out_words:
            self.vectors_done += 1
            done = max(time, self.out_entry + out_cycles(self.config,
                       self.config.matrix_w) * self.config.cim_clock_period)
            if done == time:
                self._enter(IDLE, time)
            else:
                self.kernel.schedule_at(done, self._to_idle)
        return word

    def _to_idle(self, time: SimTime, _payload) -> None:
        if self.fsm == OUT and not self.out_words:
            self._enter(IDLE, time)

    def _enter(self, state: int, time: SimTime) -> None:
        self.fsm = state
        self.state_log.append((state, time))

    # -- accounting -------------------------------------------------------

    def fsm_timing(self) -> dict[str, SimTime]:
        """Per-state durations of one traversal from the cycle laws."""
        cfg = self.config
        t = cfg.cim_clock_period
        return {
            "IN": in_cycles(cfg, cfg.matrix_h) * t,
            "OP": cfg.op_cycles * t,
            "OUT": out_cycles(cfg, cfg.matrix_w) * t,
        }

    def idle_and_drained(self) -> bool:
        return self.fsm == IDLE and not self.loading_weights
