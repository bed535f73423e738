"""Benchmark harness: VMM workload generation, self-verifying runs,
sequential/parallel comparison, and the quantum sweep.

The workload is O = A(h x w) . B(w x p) with unsigned 8-bit data from a
seeded SplitMix64 generator (constants below), either computed by the
CPUs with the classic triple loop (cpu mode) or offloaded to the CIM
units through their memory-mapped registers (cim mode). Every run is
verified against a host-side integer matmul; a mismatch is a hard error.

CIM runs configure output_res = 32 so that no dot product can saturate
(w <= 256 and 8-bit operands bound sums below 2^24); cpu and cim modes
therefore produce bit-identical O matrices.
"""

from __future__ import annotations

import csv
import json
import time as _time
from dataclasses import asdict, dataclass, field

from .bus import CIM_BASE, CIM_STRIDE
from .cim import pack_values, unpack_values
from .config import (VpConfig, Workload, build, config_from_dict,
                     config_to_dict, quantum_from_insns)
from .cpu import assemble
from .errors import IncomparableRuns, ResultMismatch, ValidationError
from .kernel import SimTime

# SplitMix64 constants (Steele, Lea & Flood 2014); published here so other
# implementations can regenerate identical inputs.
SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
SPLITMIX_MIX1 = 0xBF58476D1CE4E5B9
SPLITMIX_MIX2 = 0x94D049BB133111EB
_M64 = (1 << 64) - 1

DEFAULT_SEED = 0x5EED_CAFE

# Fixed DRAM layout for generated workloads (program text sits below 1 MiB).
# A's rows are padded to the D-cache size (32 KiB) and the base is offset so
# every row maps to the same fixed cache-set window just above B's sets;
# otherwise A and B thrash the direct-mapped cache for about half the rows,
# which costs a cross-segment round trip per conflict miss on the remote CPU.
A_ROW_STRIDE = 32 * 1024
A_BASE = 0x0100_0000 + 479 * 64  # rows occupy sets 479..511 (w <= 256)
B_BASE = 0x0200_0000   # cpu mode: B column-major, one element per word (sets 0..)
O_BASE = 0x0300_0000   # cpu mode: O row-major, one element per word
W_BASE = 0x0040_0000   # cim mode: packed per-unit weight streams
V_BASE = 0x0050_0000   # cim mode: packed input vectors (shared)
OC_BASE = 0x0060_0000  # cim mode: packed 32-bit outputs, driver order

PROG_STRIDE = 0x8000   # program base for CPU i is i * PROG_STRIDE

INPUT_RES = 8
OUTPUT_RES = 32        # wide enough that table-layer dot products never clip
WEIGHT_RES = 8

PAPER_SPEEDUPS = {"uniform": 2.3, "load-oriented": 3.3}


class SplitMix64:
    """Deterministic 64-bit PRNG; the workload data source."""

    def __init__(self, seed: int):
        self.state = seed & _M64

    def next(self) -> int:
        self.state = (self.state + SPLITMIX_GAMMA) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * SPLITMIX_MIX1) & _M64
        z = ((z ^ (z >> 27)) * SPLITMIX_MIX2) & _M64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n


# ---------------------------------------------------------------------------
# Layer table

@dataclass(frozen=True)
class LayerSpec:
    network: str
    layer: str
    h: int
    w: int
    p: int

    @property
    def slug(self) -> str:
        return f"{self.network.lower()}-{self.layer.lower()}"


def layer_table() -> list[LayerSpec]:
    return [
        LayerSpec("Googlenet", "Conv1", 224, 224, 7),
        LayerSpec("Googlenet", "Conv2", 56, 56, 3),
        LayerSpec("ImageNet", "Conv1", 224, 224, 11),
        LayerSpec("ImageNet", "Conv2", 207, 207, 5),
        LayerSpec("MobileNets", "Conv1", 224, 224, 3),
        LayerSpec("MobileNets", "Conv2", 112, 112, 3),
    ]


def layer_by_id(ident: str) -> LayerSpec:
    """Look up a table layer by slug, or parse a custom 'h,w,p' triple."""
    for spec in layer_table():
        if spec.slug == ident:
            return spec
    parts = ident.split(",")
    if len(parts) == 3:
        try:
            h, w, p = (int(x) for x in parts)
            return LayerSpec("custom", f"{h}x{w}x{p}", h, w, p)
        except ValueError:
            pass
    known = ", ".join(s.slug for s in layer_table())
    raise ValidationError(f"unknown layer '{ident}'; known: {known} or 'h,w,p'")


def matmul_oracle(a: list[list[int]], b: list[list[int]]) -> list[list[int]]:
    """Plain integer O = A.B; the expected-result reference."""
    h, w = len(a), len(a[0])
    p = len(b[0])
    out = [[0] * p for _ in range(h)]
    for i in range(h):
        row = a[i]
        for k in range(w):
            v = row[k]
            if not v:
                continue
            brow = b[k]
            orow = out[i]
            for j in range(p):
                orow[j] += v * brow[j]
    return out


# ---------------------------------------------------------------------------
# Topology introspection

def _topology(cfg: VpConfig):
    """(ordered cpu names, cim units as (index, segment), unit assignment)."""
    cpus: list[str] = []
    cpu_of_seg: dict[int, str] = {}
    dram_seg = None
    units: list[tuple[int, int]] = []
    for seg in sorted(cfg.segments, key=lambda s: s.id):
        for comp in seg.components:
            if comp.type == "cpu":
                cpus.append(comp.name)
                cpu_of_seg.setdefault(seg.id, comp.name)
            elif comp.type == "dram":
                dram_seg = seg.id
            elif comp.type == "cim":
                units.append((comp.index, seg.id))
    units.sort()
    driver_default = cpu_of_seg.get(dram_seg, cpus[0] if cpus else None)
    assignment: dict[str, list[int]] = {name: [] for name in cpus}
    for index, seg in units:
        owner = cpu_of_seg.get(seg, driver_default)
        assignment[owner].append(index)
    return cpus, units, assignment


def _chunks(total: int, parts: int) -> list[tuple[int, int]]:
    """Split [0, total) into `parts` contiguous ranges (may be empty)."""
    size = -(-total // parts) if parts else 0
    out = []
    for i in range(parts):
        lo = min(i * size, total)
        hi = min(lo + size, total)
        out.append((lo, hi))
    return out


# ---------------------------------------------------------------------------
# Program generation

def _emit_cpu_program(lo: int, hi: int, w: int, p: int) -> str:
    """Triple-loop VMM over rows [lo, hi): O[i][j] = sum_k A[i][k]*B[k][j]."""
    if lo >= hi:
        return "HALT\n"
    return f"""
    ADDI r1, r0, {A_BASE + lo * A_ROW_STRIDE}   # A row cursor
    ADDI r3, r0, {O_BASE + lo * p * 8}      # O cursor
    ADDI r4, r0, {hi - lo}                  # rows remaining
outer:
    ADDI r2, r0, {B_BASE}                   # B column cursor
    ADDI r5, r0, {p}
mid:
    ADDI r7, r0, 0                          # accumulator
    ADDI r6, r0, {w}
    ADD  r11, r1, r0
inner:
    LD   r8, 0(r11)
    LD   r9, 0(r2)
    MUL  r8, r8, r9
    ADD  r7, r7, r8
    ADDI r11, r11, 8
    ADDI r2, r2, 8
    ADDI r6, r6, -1
    BNE  r6, r0, inner
    ST   r7, 0(r3)
    ADDI r3, r3, 8
    ADDI r5, r5, -1
    BNE  r5, r0, mid
    ADDI r1, r1, {A_ROW_STRIDE}
    ADDI r4, r4, -1
    BNE  r4, r0, outer
    HALT
"""


def _emit_cim_driver(jobs: list[dict], p: int, vec_words: int,
                     o_ptr: int) -> str:
    """Driver for one CPU: configure each assigned unit, stream its weight
    block, then per vector stream inputs, poll STATUS to OUT, drain
    DATA_OUT into DRAM, and wait for IDLE before the next vector."""
    if not jobs:
        return "HALT\n"
    lines = [
        f"    ADDI r20, r0, {1 << 24}",
        "    MUL  r20, r20, r20",              # 2^48
        "    ADDI r24, r0, 256",
        "    MUL  r20, r20, r24",              # 2^56 (CONFIG field shift)
        "    ADDI r25, r0, 3",                 # STATUS == OUT
        f"    ADDI r27, r0, {o_ptr}",
    ]
    for job in jobs:
        u = job["index"]
        cfg_fields = job["config"]             # list of (field, value)
        lines += [
            f"    ADDI r21, r0, {CIM_BASE >> 1}",
            "    ADD  r21, r21, r21",
            f"    ADDI r21, r21, {u * CIM_STRIDE}",
        ]
        for fld, val in cfg_fields:
            lines += [
                f"    ADDI r24, r0, {fld}",
                "    MUL  r24, r24, r20",
                f"    ADDI r29, r0, {val}",
                "    ADD  r24, r24, r29",
                "    ST   r24, 0(r21)",
            ]
        lines += [
            "    ADDI r24, r0, 1",
            "    ST   r24, 32(r21)",           # CMD = INITIALIZE
            f"    ADDI r22, r0, {job['w_base']}",
            f"    ADDI r23, r0, {job['w_words']}",
            f"wload{u}:",
            "    LD   r29, 0(r22)",
            "    ST   r29, 16(r21)",           # DATA_IN
            "    ADDI r22, r22, 8",
            "    ADDI r23, r23, -1",
            f"    BNE  r23, r0, wload{u}",
            f"    ADDI r26, r0, {V_BASE}",
            f"    ADDI r28, r0, {p}",
            f"vloop{u}:",
            f"    ADDI r23, r0, {vec_words}",
            f"sload{u}:",
            "    LD   r29, 0(r26)",
            "    ST   r29, 16(r21)",
            "    ADDI r26, r26, 8",
            "    ADDI r23, r23, -1",
            f"    BNE  r23, r0, sload{u}",
            f"poll{u}:",
            "    LD   r29, 8(r21)",            # STATUS
            f"    BNE  r29, r25, poll{u}",
            f"    ADDI r23, r0, {job['o_words']}",
            f"rload{u}:",
            "    LD   r29, 24(r21)",           # DATA_OUT
            "    ST   r29, 0(r27)",
            "    ADDI r27, r27, 8",
            "    ADDI r23, r23, -1",
            f"    BNE  r23, r0, rload{u}",
            f"idle{u}:",
            "    LD   r29, 8(r21)",
            f"    BNE  r29, r0, idle{u}",
            "    ADDI r28, r28, -1",
            f"    BNE  r28, r0, vloop{u}",
        ]
    lines.append("    HALT")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Workload bundle

@dataclass
class WorkloadBundle:
    layer: LayerSpec
    mode: str
    programs: dict[str, tuple[list, int]]
    dram_image: list[tuple[int, bytes]]
    expected: list[list[int]]
    o_addr: int
    o_len: int
    _decode_plan: list = field(default_factory=list, repr=False)

    def decode_output(self, raw: bytes) -> list[list[int]]:
        layer = self.layer
        if self.mode == "cpu":
            out = [[0] * layer.p for _ in range(layer.h)]
            for i in range(layer.h):
                for j in range(layer.p):
                    off = (i * layer.p + j) * 8
                    out[i][j] = int.from_bytes(raw[off:off + 8], "little")
            return out
        out = [[0] * layer.p for _ in range(layer.h)]
        for lo, hi, o_words, offset in self._decode_plan:
            chunk = hi - lo
            for j in range(layer.p):
                start = (offset - self.o_addr) + j * o_words * 8
                words = [int.from_bytes(raw[start + k * 8:start + k * 8 + 8],
                                        "little") for k in range(o_words)]
                vals = unpack_values(words, OUTPUT_RES, 64, chunk)
                for r in range(chunk):
                    out[lo + r][j] = vals[r]
        return out


def _words_bytes(words: list[int]) -> bytes:
    return b"".join(w.to_bytes(8, "little") for w in words)


def gen_vmm_workload(layer: LayerSpec, mode: str, seed: int = DEFAULT_SEED,
                     config: VpConfig | None = None,
                     a: list[list[int]] | None = None,
                     b: list[list[int]] | None = None) -> WorkloadBundle:
    """Generate programs + DRAM image + expected result for one layer.

    cpu mode: each CPU computes a contiguous block of O's rows with the
    triple nested loop. cim mode: each CPU drives its assigned CIM units;
    unit weights are the transposed A row-block so that streaming B's
    columns yields O's columns.
    """
    if mode not in ("cpu", "cim"):
        raise ValidationError(f"workload mode must be cpu|cim, got '{mode}'")
    if config is None:
        from .config import preset_uniform
        config = preset_uniform()
    h, w, p = layer.h, layer.w, layer.p
    if h < 1 or w < 1 or p < 1:
        raise ValidationError("layer dimensions must be >= 1")
    rng = SplitMix64(seed)
    if a is None:
        a = [[rng.below(1 << INPUT_RES) for _ in range(w)] for _ in range(h)]
    if b is None:
        b = [[rng.below(1 << INPUT_RES) for _ in range(p)] for _ in range(w)]
    expected = matmul_oracle(a, b)
    cpus, units, assignment = _topology(config)
    if not cpus:
        raise ValidationError("config has no CPUs to run the workload")
    programs: dict[str, tuple[list, int]] = {}
    image: list[tuple[int, bytes]] = []

    if mode == "cpu":
        for i in range(h):
            image.append((A_BASE + i * A_ROW_STRIDE, _words_bytes(a[i])))
        image.append((B_BASE, _words_bytes(
            [b[k][j] for j in range(p) for k in range(w)])))  # column-major
        for i, (name, (lo, hi)) in enumerate(zip(cpus, _chunks(h, len(cpus)))):
            programs[name] = (assemble(_emit_cpu_program(lo, hi, w, p)),
                              i * PROG_STRIDE)
        return WorkloadBundle(layer, mode, programs, image, expected,
                              O_BASE, h * p * 8)

    # cim mode
    if w > 256:
        raise ValidationError(
            "w > 256 requires cross-tile accumulation, which this workload "
            "generator does not implement")
    active_units = [u for u, _seg in units]
    if not active_units:
        raise ValidationError("cim workload requires at least one CIM unit")
    row_blocks = dict(zip(active_units, _chunks(h, len(active_units))))
    if any(hi - lo > 256 for lo, hi in row_blocks.values()):
        raise ValidationError("row block exceeds 256 crossbar columns")
    vec_words = -(-w * INPUT_RES // 64)
    # Shared packed input vectors: B's columns, one after another.
    vwords = []
    for j in range(p):
        vwords.extend(pack_values([b[k][j] for k in range(w)], INPUT_RES, 64))
    image.append((V_BASE, _words_bytes(vwords)))

    w_cursor = W_BASE
    unit_jobs: dict[int, dict] = {}
    for u in active_units:
        lo, hi = row_blocks[u]
        if lo >= hi:
            continue
        chunk = hi - lo
        # Crossbar holds W = A-block transposed: W[k][j] = A[lo+j][k].
        flat = [a[lo + j][k] for k in range(w) for j in range(chunk)]
        wwords = pack_values(flat, WEIGHT_RES, 64)
        image.append((w_cursor, _words_bytes(wwords)))
        unit_jobs[u] = {
            "index": u,
            "lo": lo, "hi": hi,
            "w_base": w_cursor,
            "w_words": len(wwords),
            "o_words": -(-chunk * OUTPUT_RES // 64),
            "config": [(1, w), (2, chunk), (3, p), (4, INPUT_RES),
                       (5, OUTPUT_RES), (6, WEIGHT_RES)],
        }
        w_cursor += len(wwords) * 8

    decode_plan = []
    o_cursor = OC_BASE
    for i, name in enumerate(cpus):
        jobs = [unit_jobs[u] for u in assignment[name] if u in unit_jobs]
        programs[name] = (assemble(_emit_cim_driver(jobs, p, vec_words,
                                                    o_cursor)),
                          i * PROG_STRIDE)
        for job in jobs:
            decode_plan.append((job["lo"], job["hi"], job["o_words"], o_cursor))
            o_cursor += job["o_words"] * p * 8
    return WorkloadBundle(layer, mode, programs, image, expected,
                          OC_BASE, o_cursor - OC_BASE,
                          _decode_plan=decode_plan)


# ---------------------------------------------------------------------------
# Reports

@dataclass
class RunReport:
    mode: str                    # seq | pll
    workload_mode: str           # cpu | cim
    layer: dict
    quantum_ps: SimTime
    wall_clock_ms: float
    simulated_time: SimTime
    instruction_count: int
    txn_total: int
    txn_histogram: dict[str, int]
    dram_txn_total: int
    per_segment: dict[int, dict]
    rounds: int
    finished_by: str

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @staticmethod
    def from_json(path) -> "RunReport":
        with open(path) as fh:
            raw = json.load(fh)
        raw["per_segment"] = {int(k): v for k, v in raw["per_segment"].items()}
        return RunReport(**raw)

    def simulated_fields(self) -> tuple:
        return (self.workload_mode, self.layer["h"], self.layer["w"],
                self.layer["p"], self.quantum_ps, self.simulated_time,
                self.instruction_count, self.txn_total,
                tuple(sorted(self.txn_histogram.items())),
                tuple(sorted((k, v["sync_waits"])
                             for k, v in self.per_segment.items())))


@dataclass
class CompareReport:
    seq: RunReport
    pll: RunReport
    speedup: float
    paper_reference: dict

    def to_dict(self) -> dict:
        return {"seq": asdict(self.seq), "pll": asdict(self.pll),
                "speedup": self.speedup,
                "paper_reference": self.paper_reference}


def run_bench(config: VpConfig, layer: LayerSpec, workload_mode: str,
              sim_mode: str, quantum_insns: int | None = None,
              seed: int = DEFAULT_SEED, trace_path=None) -> RunReport:
    """Build, run, verify against the oracle, and report one benchmark."""
    raw = config_to_dict(config)
    raw["mode"] = sim_mode
    cfg = config_from_dict(raw)
    if quantum_insns is not None:
        cfg.quantum_ps = quantum_from_insns(quantum_insns)
    bundle = gen_vmm_workload(layer, workload_mode, seed, cfg)
    controller = build(cfg, Workload(bundle.programs, bundle.dram_image))
    t0 = _time.perf_counter()
    sim = controller.run(extracts=[("O", bundle.o_addr, bundle.o_len)])
    wall_ms = (_time.perf_counter() - t0) * 1e3

    raw_o = None
    for data in controller.finish_data.values():
        if "O" in data["memory"]:
            raw_o = data["memory"]["O"]
    if sim.finished_by != "quiescence":
        raise ResultMismatch(
            f"run hit end_time at {sim.simulated_time} ps before completing")
    got = bundle.decode_output(raw_o)
    if got != bundle.expected:
        bad = next((i, j) for i in range(layer.h) for j in range(layer.p)
                   if got[i][j] != bundle.expected[i][j])
        raise ResultMismatch(
            f"O{bad} = {got[bad[0]][bad[1]]}, "
            f"expected {bundle.expected[bad[0]][bad[1]]}")

    records = [r for d in controller.finish_data.values() for r in d["trace"]]
    histogram: dict[str, int] = {}
    for r in records:
        histogram[r[2]] = histogram.get(r[2], 0) + 1
    if trace_path is not None:
        from .bus import CSV_HEADER
        with open(trace_path, "w", newline="") as fh:
            wtr = csv.writer(fh)
            wtr.writerow(CSV_HEADER)
            for sid in sorted(controller.finish_data):
                for ts, ini, tgt, addr, cmd, blen, lat in \
                        controller.finish_data[sid]["trace"]:
                    wtr.writerow([ts, ini, tgt, f"0x{addr:016x}", cmd, blen, lat])

    per_segment = {}
    for seg in sim.segments:
        stats = controller.finish_data[seg.id]["stats"]
        busy = sum(s["cycles"] * cfg.cpu_clock_ps for s in stats.values())
        per_segment[seg.id] = {"busy_ps": busy, "sync_waits": seg.sync_waits,
                               "executed": seg.executed}
    dram_total = sum(v for k, v in histogram.items() if not k.startswith("cim"))
    return RunReport(
        mode=sim_mode,
        workload_mode=workload_mode,
        layer={"network": layer.network, "layer": layer.layer,
               "h": layer.h, "w": layer.w, "p": layer.p},
        quantum_ps=cfg.quantum_ps,
        wall_clock_ms=wall_ms,
        simulated_time=sim.simulated_time,
        instruction_count=sum(
            s["instruction_count"]
            for d in controller.finish_data.values()
            for s in d["stats"].values()),
        txn_total=len(records),
        txn_histogram=histogram,
        dram_txn_total=dram_total,
        per_segment=per_segment,
        rounds=sim.rounds,
        finished_by=sim.finished_by,
    )


def compare(seq: RunReport, pll: RunReport) -> CompareReport:
    if seq.mode != "seq" or pll.mode != "pll":
        raise IncomparableRuns("compare needs one seq and one pll report")
    if seq.simulated_fields() != pll.simulated_fields():
        raise IncomparableRuns(
            "simulated-domain fields differ between the runs; they were not "
            "produced from an identical config/layer/workload")
    if pll.wall_clock_ms <= 0:
        raise IncomparableRuns("non-positive parallel wall clock")
    return CompareReport(seq, pll, seq.wall_clock_ms / pll.wall_clock_ms,
                         dict(PAPER_SPEEDUPS))


def quantum_sweep(config: VpConfig, layer: LayerSpec, workload_mode: str,
                  quanta: list[int], seed: int = DEFAULT_SEED
                  ) -> list[CompareReport]:
    """One seq/pll comparison per quantum (in instructions)."""
    if len(quanta) < 2:
        raise ValidationError("sweep needs at least two quantum values")
    rows = []
    for q in quanta:
        seq = run_bench(config, layer, workload_mode, "seq", q, seed)
        pll = run_bench(config, layer, workload_mode, "pll", q, seed)
        rows.append(compare(seq, pll))
    return rows


SWEEP_CSV_HEADER = ["quantum_insns", "workload_mode", "simulated_time_ps",
                    "rounds", "seq_wall_ms", "pll_wall_ms", "speedup",
                    "seq_sync_waits", "pll_sync_waits"]


def sweep_csv(rows: list[CompareReport], path) -> None:
    with open(path, "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(SWEEP_CSV_HEADER)
        for row in rows:
            seq, pll = row.seq, row.pll
            wtr.writerow([
                seq.quantum_ps // 588,
                seq.workload_mode,
                seq.simulated_time,
                seq.rounds,
                f"{seq.wall_clock_ms:.3f}",
                f"{pll.wall_clock_ms:.3f}",
                f"{row.speedup:.3f}",
                sum(s["sync_waits"] for s in seq.per_segment.values()),
                sum(s["sync_waits"] for s in pll.per_segment.values()),
            ])


def total_sync_waits(report: RunReport) -> int:
    return sum(s["sync_waits"] for s in report.per_segment.values())
