"""Platform configuration: JSON schema, validation, the two preset
topologies, and the builder that turns a config into a ready Controller.

Schema (all times in integer picoseconds):

    {
      "quantum_insns": 10000,          # or "quantum_ps" directly
      "end_time_ps": 50000000000,
      "mode": "seq",                   # "seq" | "pll"
      "segments": [
        {"id": 0, "components": [
            {"type": "cpu",  "name": "cpu0"},
            {"type": "dram", "name": "dram"},
            {"type": "cim",  "name": "cim0", "index": 0}]}
      ],
      "channels": [{"src": 0, "dst": 1, "latency_ps": 500000}]
    }
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field

from .bus import (BUS_LATENCY_PS, CIM_BASE, CIM_STRIDE, AddressMap, Bus,
                  Range)
from .cim import CimConfig, CimUnit
from .controller import Channel, Controller, SegmentRuntime
from .cpu import HALT, Cpu
from .dram import Dram, DramConfig
from .errors import ParseError, ValidationError
from .kernel import CPU_CLOCK_PS, NS, EventKernel, SimTime

#: Default inter-segment channel latency (the lookahead) for the presets.
PRESET_CHANNEL_LATENCY_PS = 500 * NS

#: Default quantum, expressed as instructions (the paper's headline value).
DEFAULT_QUANTUM_INSNS = 10_000

#: Default simulation horizon; runs normally end earlier by quiescence.
DEFAULT_END_TIME_PS = 50_000_000_000  # 50 ms


def quantum_from_insns(n: int) -> SimTime:
    """Quantum of N instructions at the CPU clock: N x 588 ps."""
    if n < 1:
        raise ValidationError("quantum must be >= 1 instruction")
    return n * CPU_CLOCK_PS


@dataclass
class ComponentDesc:
    type: str            # "cpu" | "dram" | "cim"
    name: str
    index: int = 0       # CIM units: position in the global address map


@dataclass
class SegmentDesc:
    id: int
    components: list[ComponentDesc] = field(default_factory=list)


@dataclass
class ChannelDesc:
    src: int
    dst: int
    latency_ps: SimTime


@dataclass
class VpConfig:
    segments: list[SegmentDesc]
    channels: list[ChannelDesc]
    quantum_ps: SimTime
    end_time_ps: SimTime = DEFAULT_END_TIME_PS
    mode: str = "seq"
    cpu_clock_ps: SimTime = CPU_CLOCK_PS
    cim_clock_ps: SimTime = 10 * NS

    def validate(self) -> None:
        seg_ids = [s.id for s in self.segments]
        if len(set(seg_ids)) != len(seg_ids):
            raise ValidationError("segment ids must be unique")
        if not self.segments:
            raise ValidationError("at least one segment is required")
        names = [c.name for s in self.segments for c in s.components]
        if len(set(names)) != len(names):
            raise ValidationError("component names must be unique")
        drams = [c for s in self.segments for c in s.components
                 if c.type == "dram"]
        if len(drams) != 1:
            raise ValidationError(
                f"exactly one DRAM required (shared main memory), got {len(drams)}")
        cim_indices = [c.index for s in self.segments for c in s.components
                       if c.type == "cim"]
        if len(set(cim_indices)) != len(cim_indices):
            raise ValidationError("CIM unit indices must be unique")
        for c in (c for s in self.segments for c in s.components):
            if c.type not in ("cpu", "dram", "cim"):
                raise ValidationError(f"unknown component type '{c.type}'")
        ids = set(seg_ids)
        for ch in self.channels:
            if ch.src not in ids or ch.dst not in ids:
                raise ValidationError(
                    f"channel {ch.src}->{ch.dst} references unknown segment")
            if ch.src == ch.dst:
                raise ValidationError("channel endpoints must differ")
            if ch.latency_ps < 0:
                raise ValidationError("channel latency must be >= 0")
        pairs = {(ch.src, ch.dst) for ch in self.channels}
        if len(pairs) != len(self.channels):
            raise ValidationError("duplicate channel for a segment pair")
        # Request/response closure: wherever a request can travel, a
        # response must be able to travel back.
        for a in ids:
            reach_a = _reachable(a, pairs, ids)
            for b in reach_a:
                if a not in _reachable(b, pairs, ids):
                    raise ValidationError(
                        f"segment {a} can reach {b} but {b} has no response "
                        f"path back to {a}")
        if self.quantum_ps < 1:
            raise ValidationError("quantum_ps must be positive")
        if self.end_time_ps < 1:
            raise ValidationError("end_time_ps must be positive")
        if self.mode not in ("seq", "pll"):
            raise ValidationError(f"mode must be 'seq' or 'pll', got '{self.mode}'")
        _warn_zero_latency_cycles(pairs, self.channels)


def _reachable(start: int, pairs: set, ids: set) -> set:
    seen = {start}
    work = deque([start])
    while work:
        a = work.popleft()
        for (s, d) in pairs:
            if s == a and d not in seen:
                seen.add(d)
                work.append(d)
    return seen


def _warn_zero_latency_cycles(pairs, channels) -> None:
    """A cycle of zero-latency channels cannot make progress; accept the
    config but flag the deadlock risk."""
    zero = {(c.src, c.dst) for c in channels if c.latency_ps == 0}
    nodes = {s for s, _ in zero} | {d for _, d in zero}
    for start in nodes:
        seen = {start}
        work = deque(d for s, d in zero if s == start)
        while work:
            a = work.popleft()
            if a == start:
                warnings.warn(
                    f"zero-latency channel cycle through segment {start}: "
                    "segments on it can never advance (deadlock risk)",
                    stacklevel=3)
                return
            if a in seen:
                continue
            seen.add(a)
            work.extend(d for s, d in zero if s == a)


# ---------------------------------------------------------------------------
# Serialization

def config_to_dict(cfg: VpConfig) -> dict:
    return asdict(cfg)


def config_from_dict(raw: dict) -> VpConfig:
    try:
        segments = [SegmentDesc(int(s["id"]),
                                [ComponentDesc(c["type"], c["name"],
                                               int(c.get("index", 0)))
                                 for c in s.get("components", [])])
                    for s in raw["segments"]]
        channels = [ChannelDesc(int(c["src"]), int(c["dst"]),
                                int(c["latency_ps"]))
                    for c in raw.get("channels", [])]
        if "quantum_ps" in raw:
            quantum = int(raw["quantum_ps"])
        else:
            quantum = quantum_from_insns(int(raw.get("quantum_insns",
                                                     DEFAULT_QUANTUM_INSNS)))
        cfg = VpConfig(
            segments=segments,
            channels=channels,
            quantum_ps=quantum,
            end_time_ps=int(raw.get("end_time_ps", DEFAULT_END_TIME_PS)),
            mode=raw.get("mode", "seq"),
            cpu_clock_ps=int(raw.get("cpu_clock_ps", CPU_CLOCK_PS)),
            cim_clock_ps=int(raw.get("cim_clock_ps", 10 * NS)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed config: {exc!r}")
    cfg.validate()
    return cfg


def load_config(path) -> VpConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno} col {exc.colno}: "
                             f"{exc.msg}")
    return config_from_dict(raw)


def serialize(cfg: VpConfig, path=None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Presets

def preset_uniform(quantum_insns: int = DEFAULT_QUANTUM_INSNS) -> VpConfig:
    """Two symmetric segments; each CPU drives two local CIM units."""
    cfg = VpConfig(
        segments=[
            SegmentDesc(0, [ComponentDesc("cpu", "cpu0"),
                            ComponentDesc("dram", "dram"),
                            ComponentDesc("cim", "cim0", 0),
                            ComponentDesc("cim", "cim1", 1)]),
            SegmentDesc(1, [ComponentDesc("cpu", "cpu1"),
                            ComponentDesc("cim", "cim2", 2),
                            ComponentDesc("cim", "cim3", 3)]),
        ],
        channels=[ChannelDesc(0, 1, PRESET_CHANNEL_LATENCY_PS),
                  ChannelDesc(1, 0, PRESET_CHANNEL_LATENCY_PS)],
        quantum_ps=quantum_from_insns(quantum_insns),
    )
    cfg.validate()
    return cfg


def preset_load_oriented(quantum_insns: int = DEFAULT_QUANTUM_INSNS) -> VpConfig:
    """One CPU dedicated to driving all CIM units; star wiring around the
    memory segment."""
    cfg = VpConfig(
        segments=[
            SegmentDesc(0, [ComponentDesc("cpu", "cpu0"),
                            ComponentDesc("dram", "dram")]),
            SegmentDesc(1, [ComponentDesc("cpu", "cpu1")]),
            SegmentDesc(2, [ComponentDesc("cim", "cim0", 0),
                            ComponentDesc("cim", "cim1", 1)]),
            SegmentDesc(3, [ComponentDesc("cim", "cim2", 2),
                            ComponentDesc("cim", "cim3", 3)]),
        ],
        channels=[ChannelDesc(0, 1, PRESET_CHANNEL_LATENCY_PS),
                  ChannelDesc(1, 0, PRESET_CHANNEL_LATENCY_PS),
                  ChannelDesc(0, 2, PRESET_CHANNEL_LATENCY_PS),
                  ChannelDesc(2, 0, PRESET_CHANNEL_LATENCY_PS),
                  ChannelDesc(0, 3, PRESET_CHANNEL_LATENCY_PS),
                  ChannelDesc(3, 0, PRESET_CHANNEL_LATENCY_PS)],
        quantum_ps=quantum_from_insns(quantum_insns),
    )
    cfg.validate()
    return cfg


PRESETS = {
    "uniform": preset_uniform,
    "load-oriented": preset_load_oriented,
}


# ---------------------------------------------------------------------------
# Builder

@dataclass
class Workload:
    """Programs and initial memory for a built platform."""
    programs: dict[str, tuple[list, int]]       # cpu name -> (program, base)
    dram_image: list[tuple[int, bytes]] = field(default_factory=list)


def _next_hops(seg_ids: list[int], channels: list[ChannelDesc]) -> dict:
    """Static routing: next_hops[seg][dst] = neighbor on a shortest path.
    Deterministic (BFS, neighbors in ascending id order)."""
    adj: dict[int, list[int]] = {s: [] for s in seg_ids}
    for ch in channels:
        adj[ch.src].append(ch.dst)
    for s in adj:
        adj[s] = sorted(set(adj[s]))
    table: dict[int, dict[int, int]] = {s: {} for s in seg_ids}
    for src in seg_ids:
        prev: dict[int, int] = {src: src}
        work = deque([src])
        while work:
            a = work.popleft()
            for b in adj[a]:
                if b not in prev:
                    prev[b] = a
                    work.append(b)
        for dst in prev:
            if dst == src:
                continue
            hop = dst
            while prev[hop] != src:
                hop = prev[hop]
            table[src][dst] = hop
    return table


def build(cfg: VpConfig, workload: Workload | None = None) -> Controller:
    """Instantiate every component, assemble the global address map, wire
    channels, and return a Controller ready for run()."""
    cfg.validate()
    ranges = []
    for seg in cfg.segments:
        for comp in seg.components:
            if comp.type == "dram":
                dram_cfg = DramConfig()
                ranges.append(Range(0, dram_cfg.capacity, comp.name, seg.id))
            elif comp.type == "cim":
                ranges.append(Range(CIM_BASE + comp.index * CIM_STRIDE,
                                    CIM_STRIDE, comp.name, seg.id))
    amap = AddressMap(ranges)
    seg_ids = [s.id for s in cfg.segments]
    hops = _next_hops(seg_ids, cfg.channels)

    runtimes = []
    for seg in sorted(cfg.segments, key=lambda s: s.id):
        kernel = EventKernel()
        bus = Bus(seg.id, amap)
        components: dict[str, object] = {}
        for comp in seg.components:
            if comp.type == "dram":
                dram = Dram()
                if workload:
                    for addr, data in workload.dram_image:
                        dram.preload(addr, data)
                bus.attach(comp.name, dram)
                components[comp.name] = dram
            elif comp.type == "cim":
                unit = CimUnit(comp.name, kernel,
                               CimConfig(cim_clock_period=cfg.cim_clock_ps))
                bus.attach(comp.name, unit)
                components[comp.name] = unit
            else:
                program, base = ((workload.programs.get(comp.name)
                                  or ([(HALT, 0, 0, 0, 0)], 0))
                                 if workload else ([(HALT, 0, 0, 0, 0)], 0))
                cpu = Cpu(comp.name, kernel, bus, program, base,
                          clock_period=cfg.cpu_clock_ps)
                cpu.start()
                components[comp.name] = cpu
        runtimes.append(SegmentRuntime(seg.id, kernel, bus, components,
                                       hops[seg.id]))

    channels = [Channel(ch.src, ch.dst, ch.latency_ps) for ch in cfg.channels]
    return Controller(runtimes, channels, cfg.quantum_ps, cfg.end_time_ps,
                      mode=cfg.mode)
