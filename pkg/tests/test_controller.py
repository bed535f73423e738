"""Controller: limits, quantum rounds, message delivery, mode equivalence."""

import pytest

from cimvp.bus import BUS_LATENCY_PS, AddressMap, Bus, Range
from cimvp.config import (Workload, preset_uniform, quantum_from_insns, build)
from cimvp.controller import (Channel, Controller, Message, SegmentRuntime,
                              SEQUENTIAL, PARALLEL)
from cimvp.cpu import assemble, run_reference
from cimvp.errors import ConfigError, DeadlockError
from cimvp.kernel import EventKernel, NS, US

MIB = 1024 * 1024


def make_runtime(seg_id, next_hop=None):
    kernel = EventKernel()
    bus = Bus(seg_id, AddressMap([Range(0, 128 * MIB, "dram", 0)]))
    return SegmentRuntime(seg_id, kernel, bus, {}, next_hop or {})


class TrafficGen:
    """Synthetic raw-message source; sends are (time, dst_seg, dst_comp, body)."""

    def __init__(self, runtime, sends):
        self.runtime = runtime
        for t, dst, comp, body in sends:
            runtime.kernel.schedule_at(t, self._fire, (dst, comp, body))

    def _fire(self, time, payload):
        dst, comp, body = payload
        self.runtime.send_raw(dst, comp, time, body)


class Sink:
    def __init__(self):
        self.received = []

    def on_message(self, time, body):
        self.received.append((time, body))


# -- limits -----------------------------------------------------------------

def test_compute_limit_single_channel():
    r0, r1 = make_runtime(0, {1: 1}), make_runtime(1, {0: 0})
    ctrl = Controller([r0, r1], [Channel(0, 1, 1100 * NS)],
                      quantum=10 * US, end_time=1000 * US)
    assert ctrl.compute_limit(1) == 1100 * NS      # commit(0)=0 + latency
    assert ctrl.compute_limit(0) == 1000 * US      # no incoming: end_time
    ctrl.commit[0] = 7 * US
    assert ctrl.compute_limit(1) == 7 * US + 1100 * NS


def test_compute_limit_takes_min_over_channels():
    rts = [make_runtime(i) for i in range(3)]
    ctrl = Controller(rts, [Channel(0, 2, 5 * US), Channel(1, 2, 8 * US)],
                      quantum=10 * US, end_time=1000 * US)
    assert ctrl.compute_limit(2) == 5 * US


def test_quantum_insns_conversion():
    assert quantum_from_insns(10_000) == 5_880_000  # 5.88 us at 588 ps/insn


def test_controller_rejects_unknown_segment_and_duplicate_channel():
    r0, r1 = make_runtime(0), make_runtime(1)
    with pytest.raises(ConfigError):
        Controller([r0, r1], [Channel(0, 5, NS)], quantum=NS, end_time=NS)
    with pytest.raises(ConfigError):
        Controller([r0, r1], [Channel(0, 1, NS), Channel(0, 1, 2 * NS)],
                   quantum=NS, end_time=NS)


# -- channels ---------------------------------------------------------------

def test_channel_preserves_delivery_order():
    ch = Channel(0, 1, 10 * NS)
    ch.push(0, 1, Message("raw", 1, "x", 0, body="a"))
    ch.push(5, 2, Message("raw", 1, "x", 0, body="b"))
    assert [m.body for _, m in ch.pop_until(20 * NS)] == ["a", "b"]


def test_channel_rejects_delivery_order_violation():
    ch = Channel(0, 1, 10 * NS)
    ch.push(100, 1, Message("raw", 1, "x", 0))
    with pytest.raises(DeadlockError):
        ch.push(50, 2, Message("raw", 1, "x", 0))


def test_step_rejects_past_delivery():
    rt = make_runtime(0)
    rt.kernel.run_until(1000)
    with pytest.raises(DeadlockError):
        rt.step(2000, [(500, Message("raw", 0, "x", 1, body=None))])


# -- raw message latency ----------------------------------------------------

def test_raw_delivery_time_is_send_plus_latency():
    r0 = make_runtime(0, {1: 1})
    r1 = make_runtime(1)
    sink = Sink()
    r1.components["sink"] = sink
    r0.components["gen"] = TrafficGen(
        r0, [(100 * NS, 1, "sink", "a"), (300 * NS, 1, "sink", "b")])
    ctrl = Controller([r0, r1], [Channel(0, 1, 500 * NS)],
                      quantum=1 * US, end_time=100 * US)
    report = ctrl.run()
    assert sink.received == [(600 * NS, "a"), (800 * NS, "b")]
    assert report.finished_by == "quiescence"


def test_raw_multi_hop_adds_bus_crossing_per_hop():
    r0 = make_runtime(0, {1: 1, 2: 1})
    r1 = make_runtime(1, {2: 2})
    r2 = make_runtime(2)
    sink = Sink()
    r2.components["sink"] = sink
    r0.components["gen"] = TrafficGen(r0, [(0, 2, "sink", "x")])
    ctrl = Controller(
        [r0, r1, r2],
        [Channel(0, 1, 200 * NS), Channel(1, 2, 300 * NS)],
        quantum=1 * US, end_time=100 * US)
    ctrl.run()
    assert sink.received == [(200 * NS + BUS_LATENCY_PS + 300 * NS, "x")]


# -- termination ------------------------------------------------------------

def test_end_time_caps_a_spinning_core():
    cfg = preset_uniform()
    cfg.end_time_ps = 100 * US
    cfg.quantum_ps = 10 * US
    wl = Workload(programs={"cpu0": (assemble("loop: JAL r0, loop\nHALT"),
                                     0x1000)})
    ctrl = build(cfg, wl)
    report = ctrl.run()
    assert report.finished_by == "end_time"
    assert report.simulated_time == 100 * US
    assert all(seg.status == "done" for seg in report.segments)


def test_zero_latency_cycle_deadlocks():
    r0, r1 = make_runtime(0, {1: 1}), make_runtime(1, {0: 0})
    ctrl = Controller([r0, r1], [Channel(0, 1, 0), Channel(1, 0, 0)],
                      quantum=1 * US, end_time=100 * US)
    with pytest.raises(DeadlockError, match="no segment can advance"):
        ctrl.run()


def test_worker_error_propagates_from_parallel_mode():
    class Exploding:
        def set_limit(self, limit):
            raise ValueError("boom")

    r0 = make_runtime(0)
    r0.components["bad"] = Exploding()
    ctrl = Controller([r0], [], quantum=1 * US, end_time=100 * US,
                      mode=PARALLEL)
    with pytest.raises(DeadlockError, match="worker 0 failed.*boom"):
        ctrl.run()


# -- whole-platform runs ----------------------------------------------------

SUM_PROG = """
    ADDI r1, r0, 0
    ADDI r2, r0, 0
    ADDI r3, r0, 200
loop:
    ADDI r2, r2, 1
    ADD  r1, r1, r2
    BLT  r2, r3, loop
    ST   r1, 0x2000(r0)
    HALT
"""

# cpu1 sits in segment 1; its loads and the final store cross the channel
# to the DRAM in segment 0.
REMOTE_SUM_PROG = """
    ADDI r1, r0, 0
    ADDI r2, r0, 0x100      # cursor into A
    ADDI r3, r0, 0x120      # end
loop:
    LD   r4, 0(r2)
    ADD  r1, r1, r4
    ADDI r2, r2, 8
    BLT  r2, r3, loop
    ST   r1, 0x2008(r0)
    HALT
"""


def platform():
    cfg = preset_uniform(quantum_insns=1000)
    image = b"".join(v.to_bytes(8, "little") for v in (3, 5, 7, 11))
    wl = Workload(
        programs={"cpu0": (assemble(SUM_PROG), 0x1000),
                  "cpu1": (assemble(REMOTE_SUM_PROG), 0x1000)},
        dram_image=[(0x100, image)])
    return cfg, wl


def run_platform(mode):
    cfg, wl = platform()
    cfg.mode = mode
    ctrl = build(cfg, wl)
    report = ctrl.run(extracts=[("sum0", 0x2000, 8), ("sum1", 0x2008, 8)])
    return ctrl, report


def test_single_platform_results_match_reference():
    ctrl, report = run_platform(SEQUENTIAL)
    mem = ctrl.finish_data[0]["memory"]
    assert int.from_bytes(mem["sum0"], "little") == 200 * 201 // 2
    assert int.from_bytes(mem["sum1"], "little") == 3 + 5 + 7 + 11
    assert report.finished_by == "quiescence"
    # timed instruction counts equal the untimed oracle's
    ref0 = run_reference(assemble(SUM_PROG), bytearray(0x3000), 0)
    stats0 = ctrl.finish_data[0]["stats"]["cpu0"]
    assert stats0["instruction_count"] == ref0.instruction_count
    assert stats0["halted"]


def test_seq_pll_mode_equivalence_exact():
    ctrl_s, rep_s = run_platform(SEQUENTIAL)
    ctrl_p, rep_p = run_platform(PARALLEL)
    assert rep_s.simulated_time == rep_p.simulated_time
    assert rep_s.rounds == rep_p.rounds
    for seg_s, seg_p in zip(rep_s.segments, rep_p.segments):
        assert (seg_s.commit_time, seg_s.sync_waits) == \
               (seg_p.commit_time, seg_p.sync_waits)
    for sid in (0, 1):
        fs, fp = ctrl_s.finish_data[sid], ctrl_p.finish_data[sid]
        assert fs["stats"] == fp["stats"]
        assert fs["memory"] == fp["memory"]
        assert sorted(fs["trace"]) == sorted(fp["trace"])


def test_sync_waits_counted_per_round_alive():
    ctrl, report = run_platform(SEQUENTIAL)
    for seg in report.segments:
        assert 0 < seg.sync_waits <= report.rounds
