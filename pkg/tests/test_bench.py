"""Benchmark harness: PRNG, layer table, workload generation, reports."""

import csv
import json

import numpy as np
import pytest

from cimvp.bench import (DEFAULT_SEED, PAPER_SPEEDUPS, SPLITMIX_GAMMA,
                         SPLITMIX_MIX1, SPLITMIX_MIX2, SWEEP_CSV_HEADER,
                         LayerSpec, RunReport, SplitMix64, compare,
                         gen_vmm_workload, layer_by_id, layer_table,
                         matmul_oracle, quantum_sweep, run_bench, sweep_csv,
                         total_sync_waits)
from cimvp.config import Workload, build, preset_uniform
from cimvp.cpu import run_reference
from cimvp.errors import IncomparableRuns, ResultMismatch, ValidationError


# -- PRNG -------------------------------------------------------------------

def test_splitmix_constants():
    assert SPLITMIX_GAMMA == 0x9E3779B97F4A7C15
    assert SPLITMIX_MIX1 == 0xBF58476D1CE4E5B9
    assert SPLITMIX_MIX2 == 0x94D049BB133111EB


def splitmix_oracle(seed):
    """Independent SplitMix64 transcription (Steele et al. 2014 reference
    algorithm, written directly from the published constants)."""
    m = (1 << 64) - 1
    state = seed & m
    while True:
        state = (state + 0x9E3779B97F4A7C15) & m
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m
        yield z ^ (z >> 31)


def test_splitmix_matches_reference_stream():
    gen = SplitMix64(1234)
    oracle = splitmix_oracle(1234)
    for _ in range(100):
        assert gen.next() == next(oracle)


def test_splitmix_seed_zero_first_value():
    # First output for seed 0 of the reference algorithm.
    assert SplitMix64(0).next() == 0xE220A8397B1DCDAF


def test_splitmix_determinism_and_range():
    g = SplitMix64(DEFAULT_SEED)
    a = [g.below(256) for _ in range(10)]
    assert len(set(a)) > 1  # state advances across draws
    g1, g2 = SplitMix64(7), SplitMix64(7)
    assert [g1.below(256) for _ in range(50)] == [g2.below(256) for _ in range(50)]
    assert all(0 <= v < 256 for v in a)


# -- layer table ------------------------------------------------------------

def test_layer_table_rows():
    rows = {(s.network, s.layer): (s.h, s.w, s.p) for s in layer_table()}
    assert len(rows) == 6
    assert rows[("Googlenet", "Conv1")] == (224, 224, 7)
    assert rows[("ImageNet", "Conv2")] == (207, 207, 5)
    assert rows[("MobileNets", "Conv2")] == (112, 112, 3)


def test_layer_lookup_by_slug_and_triple():
    assert layer_by_id("googlenet-conv2") == LayerSpec("Googlenet", "Conv2",
                                                       56, 56, 3)
    custom = layer_by_id("4,6,2")
    assert (custom.h, custom.w, custom.p) == (4, 6, 2)
    with pytest.raises(ValidationError, match="unknown layer"):
        layer_by_id("lenet-conv9")


# -- oracle -----------------------------------------------------------------

def test_matmul_oracle_vs_numpy():
    rng = np.random.default_rng(17)
    for _ in range(20):
        h, w, p = (int(x) for x in rng.integers(1, 32, size=3))
        a = rng.integers(0, 256, size=(h, w), dtype=np.int64)
        b = rng.integers(0, 256, size=(w, p), dtype=np.int64)
        assert matmul_oracle(a.tolist(), b.tolist()) == (a @ b).tolist()


# -- workload generation ----------------------------------------------------

SMALL = LayerSpec("custom", "2x3x2", 2, 3, 2)
A232 = [[1, 0, 2], [0, 1, 1]]
B232 = [[1, 2], [3, 4], [5, 6]]
O232 = [[11, 14], [8, 10]]


def run_bundle(bundle, cfg=None):
    cfg = cfg or preset_uniform(quantum_insns=1000)
    ctrl = build(cfg, Workload(bundle.programs, bundle.dram_image))
    ctrl.run(extracts=[("O", bundle.o_addr, bundle.o_len)])
    raw = next(d["memory"]["O"] for d in ctrl.finish_data.values()
               if "O" in d["memory"])
    return bundle.decode_output(raw)


@pytest.mark.parametrize("mode", ["cpu", "cim"])
def test_small_layer_end_to_end(mode):
    bundle = gen_vmm_workload(SMALL, mode, a=A232, b=B232)
    assert bundle.expected == O232
    assert run_bundle(bundle) == O232


@pytest.mark.parametrize("mode", ["cpu", "cim"])
def test_zero_a_yields_zero_o(mode):
    a = [[0] * 3 for _ in range(2)]
    bundle = gen_vmm_workload(SMALL, mode, a=a, b=B232)
    assert run_bundle(bundle) == [[0, 0], [0, 0]]


def test_cpu_programs_pass_reference_interpreter():
    """The generated CPU program, run untimed over a flat image, yields O."""
    bundle = gen_vmm_workload(SMALL, "cpu", a=A232, b=B232)
    mem = bytearray(0x400_0000)
    for addr, data in bundle.dram_image:
        mem[addr:addr + len(data)] = data
    for program, base in bundle.programs.values():
        run_reference(program, mem, base)
    assert bundle.decode_output(
        bytes(mem[bundle.o_addr:bundle.o_addr + bundle.o_len])) == O232


def test_workload_is_seed_deterministic():
    b1 = gen_vmm_workload(SMALL, "cpu", seed=5)
    b2 = gen_vmm_workload(SMALL, "cpu", seed=5)
    b3 = gen_vmm_workload(SMALL, "cpu", seed=6)
    assert b1.dram_image == b2.dram_image and b1.expected == b2.expected
    assert b3.expected != b1.expected


def test_wide_matrix_rejected_in_cim_mode():
    wide = LayerSpec("custom", "wide", 2, 300, 2)
    with pytest.raises(ValidationError, match="w > 256"):
        gen_vmm_workload(wide, "cim")
    gen_vmm_workload(wide, "cpu")  # cpu path has no crossbar bound


def test_bad_workload_mode_rejected():
    with pytest.raises(ValidationError, match="cpu|cim"):
        gen_vmm_workload(SMALL, "gpu")


# -- run/compare/sweep ------------------------------------------------------

def bench(sim_mode="seq", **kw):
    kw.setdefault("quantum_insns", 1000)
    return run_bench(preset_uniform(), SMALL, "cpu", sim_mode, **kw)


def test_run_bench_report_fields():
    rep = bench(quantum_insns=10_000)
    assert rep.quantum_ps == 5_880_000
    assert rep.finished_by == "quiescence"
    assert rep.simulated_time > 0 and rep.wall_clock_ms > 0
    assert rep.txn_total == sum(rep.txn_histogram.values())
    assert rep.dram_txn_total == sum(v for k, v in rep.txn_histogram.items()
                                     if not k.startswith("cim"))
    assert rep.instruction_count > 0
    assert set(rep.per_segment) == {0, 1}


def test_run_bench_deterministic_simulated_fields():
    r1, r2 = bench(), bench()
    assert r1.simulated_fields() == r2.simulated_fields()
    assert r1.per_segment == r2.per_segment


def test_report_json_round_trip(tmp_path):
    rep = bench()
    path = tmp_path / "r.json"
    rep.to_json(path)
    loaded = RunReport.from_json(path)
    assert loaded.simulated_fields() == rep.simulated_fields()
    json.loads(rep.to_json())  # valid JSON


def test_trace_csv_emitted(tmp_path):
    path = tmp_path / "trace.csv"
    rep = run_bench(preset_uniform(), SMALL, "cim", "seq",
                    quantum_insns=1000, trace_path=path)
    rows = list(csv.reader(open(path)))
    assert len(rows) == rep.txn_total + 1
    assert rows[0][0] == "timestamp_ps"


def test_compare_speedup_and_guards():
    seq, pll = bench("seq"), bench("pll")
    rep = compare(seq, pll)
    assert rep.speedup == pytest.approx(seq.wall_clock_ms / pll.wall_clock_ms)
    assert rep.paper_reference == PAPER_SPEEDUPS == {"uniform": 2.3,
                                                     "load-oriented": 3.3}
    with pytest.raises(IncomparableRuns):
        compare(seq, seq)
    other = run_bench(preset_uniform(), SMALL, "cpu", "pll",
                      quantum_insns=2000)
    with pytest.raises(IncomparableRuns):
        compare(seq, other)  # different quantum: not the same simulation


def test_sweep_rows_and_csv(tmp_path):
    rows = quantum_sweep(preset_uniform(), SMALL, "cpu", [500, 5000])
    assert len(rows) == 2
    assert rows[0].seq.quantum_ps == 500 * 588
    # identical simulated outcome at every quantum, only sync cost varies
    assert rows[0].seq.instruction_count == rows[1].seq.instruction_count
    assert total_sync_waits(rows[0].seq) >= total_sync_waits(rows[1].seq)
    path = tmp_path / "sweep.csv"
    sweep_csv(rows, path)
    got = list(csv.reader(open(path)))
    assert got[0] == SWEEP_CSV_HEADER
    assert [r[0] for r in got[1:]] == ["500", "5000"]
    with pytest.raises(ValidationError, match="at least two"):
        quantum_sweep(preset_uniform(), SMALL, "cpu", [1000])


def test_result_mismatch_when_truncated_by_end_time():
    cfg = preset_uniform(quantum_insns=1000)
    cfg.end_time_ps = 10_000  # far too short to finish
    with pytest.raises(ResultMismatch, match="end_time"):
        run_bench(cfg, SMALL, "cpu", "seq")
