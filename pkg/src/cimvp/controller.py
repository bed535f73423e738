"""Simulation controller: segments, channels, quantum dispatch, and the
conservative synchronization loop.

Every segment owns one event kernel. The controller advances the system in
rounds: it computes each segment's limit from peer commit times plus
channel latencies, steps every in-simulation segment by at most one
quantum (one worker per segment in parallel mode, round robin in
sequential mode), then publishes outbound messages and repeats. Both modes
execute identical rounds, which is what makes sequential/parallel mode
equivalence an exact property rather than a statistical one.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from .bus import BLOCKED, Bus
from .errors import ConfigError, DeadlockError
from .kernel import EventKernel, SimTime

log = logging.getLogger(__name__)


@dataclass
class Message:
    kind: str                # "req" | "resp" | "raw"
    dst_seg: int
    dst_comp: str
    origin_seg: int
    txn: Any = None
    body: Any = None


@dataclass
class Channel:
    """Latency-annotated directed message conduit between two segments."""
    src: int
    dst: int
    latency: SimTime
    queue: deque = field(default_factory=deque)  # (delivery_time, seq, Message)

    def push(self, send_time: SimTime, seq: int, msg: Message) -> None:
        delivery = send_time + self.latency
        if self.queue and self.queue[-1][0] > delivery:
            raise DeadlockError(
                f"channel {self.src}->{self.dst}: delivery order violated")
        self.queue.append((delivery, seq, msg))

    def pop_until(self, target: SimTime) -> list[tuple[SimTime, Message]]:
        out = []
        q = self.queue
        while q and q[0][0] <= target:
            delivery, _seq, msg = q.popleft()
            out.append((delivery, msg))
        return out


class SegmentRuntime:
    """One segment: kernel + bus + components, stepped quantum by quantum.

    The same object backs both modes; in parallel mode it lives inside a
    worker process and is driven over a pipe with the identical interface.
    """

    def __init__(self, segment_id: int, kernel: EventKernel, bus: Bus,
                 components: dict[str, Any], next_hop: dict[int, int]):
        self.id = segment_id
        self.kernel = kernel
        self.bus = bus
        self.components = components
        self.next_hop = next_hop  # destination segment -> neighbor segment
        self.outbox: list[tuple[int, SimTime, Message]] = []  # (dst_neighbor, send, msg)
        bus.remote_send = self._remote_send
        self.commit: SimTime = 0

    # -- outbound ---------------------------------------------------------

    def _remote_send(self, txn, time: SimTime, target_seg: int) -> None:
        msg = Message("req", target_seg, "", self.id, txn=txn)
        self._send_toward(target_seg, time, msg)

    def _send_toward(self, dst_seg: int, time: SimTime, msg: Message) -> None:
        hop = self.next_hop.get(dst_seg)
        if hop is None:
            raise ConfigError(
                f"segment {self.id}: no channel path toward segment {dst_seg}")
        self.outbox.append((hop, time, msg))

    def send_raw(self, dst_seg: int, dst_comp: str, time: SimTime, body) -> None:
        """Application-level message (used by synthetic traffic components)."""
        self._send_toward(dst_seg, time,
                          Message("raw", dst_seg, dst_comp, self.id, body=body))

    # -- inbound ----------------------------------------------------------

    def _on_message(self, time: SimTime, msg: Message) -> None:
        if msg.dst_seg != self.id:
            # Intermediate hop: pay the local bus crossing and forward.
            self._send_toward(msg.dst_seg, time + self.bus.latency, msg)
            return
        if msg.kind == "req":
            completion, data = self.bus.serve_remote(msg.txn, time)
            if completion is BLOCKED:
                return  # bus decided it still is not local; already forwarded
            resp = Message("resp", msg.origin_seg,
                           msg.txn.initiator.split(".")[0], self.id,
                           body=(data,))
            self._send_toward(msg.origin_seg, completion, resp)
        elif msg.kind == "resp":
            component = self.components[msg.dst_comp]
            component.complete_remote(time + self.bus.latency, msg.body[0])
        else:
            self.components[msg.dst_comp].on_message(time, msg.body)

    # -- stepping ---------------------------------------------------------

    def step(self, target: SimTime, inbound: list[tuple[SimTime, Message]]):
        for delivery, msg in inbound:
            if delivery < self.kernel.now:
                raise DeadlockError(
                    f"segment {self.id}: message delivery {delivery} ps "
                    f"before local time {self.kernel.now} ps")
            self.kernel.schedule_at(delivery, self._on_message, msg)
        for comp in self.components.values():
            if hasattr(comp, "set_limit"):
                comp.set_limit(target)
        _now, executed, quiescent = self.kernel.run_until(target)
        if quiescent:
            # A core that exhausted its quantum has no queued event but will
            # resume at the next set_limit; the segment is not drained.
            for comp in self.components.values():
                if (getattr(comp, "started", False) and not comp.halted
                        and comp.pending is None):
                    quiescent = False
                    break
        self.commit = target
        outbox, self.outbox = self.outbox, []
        return target, outbox, executed, quiescent, self._busy()

    def _busy(self) -> bool:
        for comp in self.components.values():
            busy = getattr(comp, "busy", None)
            if busy:
                return True
            idle = getattr(comp, "idle_and_drained", None)
            if idle is not None and not idle():
                return True
        return False

    def finish(self, extracts: list[tuple[str, int, int]]):
        """Collect end-of-run state: traces, component stats, memory ranges."""
        stats = {}
        for name, comp in self.components.items():
            if hasattr(comp, "instruction_count"):
                stats[name] = {
                    "instruction_count": comp.instruction_count,
                    "cycles": comp.cycles,
                    "halted": comp.halted,
                }
        memory = {}
        for key, addr, length in extracts:
            for comp in self.components.values():
                if hasattr(comp, "peek"):
                    memory[key] = comp.peek(addr, length)
        cim_logs = {name: comp.state_log for name, comp in self.components.items()
                    if hasattr(comp, "state_log")}
        return {
            "segment": self.id,
            "trace": self.bus.sink.records,
            "stats": stats,
            "event_count": self.kernel.event_count,
            "memory": memory,
            "cim_logs": cim_logs,
        }


# ---------------------------------------------------------------------------
# Parallel workers

def _worker_main(runtime: SegmentRuntime, conn) -> None:
    try:
        while True:
            cmd = conn.recv()
            tag = cmd[0]
            if tag == "step":
                conn.send(runtime.step(cmd[1], cmd[2]))
            elif tag == "finish":
                conn.send(runtime.finish(cmd[1]))
            else:
                break
    except Exception as exc:  # surface worker failures to the controller
        conn.send(("error", repr(exc)))
    finally:
        conn.close()


class _WorkerProxy:
    def __init__(self, runtime: SegmentRuntime, ctx):
        self.id = runtime.id
        self.conn, child = ctx.Pipe()
        self.proc = ctx.Process(target=_worker_main, args=(runtime, child),
                                daemon=True)
        self.proc.start()
        child.close()

    def step_async(self, target, inbound):
        self.conn.send(("step", target, inbound))

    def step_result(self):
        return self._recv()

    def finish(self, extracts):
        self.conn.send(("finish", extracts))
        return self._recv()

    def _recv(self):
        result = self.conn.recv()
        if isinstance(result, tuple) and result and result[0] == "error":
            raise DeadlockError(f"worker {self.id} failed: {result[1]}")
        return result

    def stop(self):
        try:
            self.conn.send(("stop",))
            self.conn.close()
        except OSError:
            pass
        self.proc.join(timeout=5)


# ---------------------------------------------------------------------------
# Controller

SEQUENTIAL = "seq"
PARALLEL = "pll"

IN_SIMULATION = "in-simulation"
WAITING = "waiting"
DONE = "done"


@dataclass
class SegmentReport:
    id: int
    commit_time: SimTime
    executed: int
    sync_waits: int
    status: str


@dataclass
class SimulationReport:
    mode: str
    simulated_time: SimTime
    rounds: int
    segments: list[SegmentReport]
    quantum: SimTime
    end_time: SimTime
    finished_by: str  # "end_time" | "quiescence"


class Controller:
    """Owns all segments and channels and runs the quantum loop."""

    def __init__(self, runtimes: list[SegmentRuntime],
                 channels: list[Channel], quantum: SimTime,
                 end_time: SimTime, mode: str = SEQUENTIAL):
        if quantum <= 0 or end_time <= 0:
            raise ConfigError("quantum and end_time must be positive")
        ids = {rt.id for rt in runtimes}
        for ch in channels:
            if ch.src not in ids or ch.dst not in ids:
                raise ConfigError(
                    f"channel {ch.src}->{ch.dst} names an unknown segment")
        if mode not in (SEQUENTIAL, PARALLEL):
            raise ConfigError(f"unknown mode {mode!r}")
        self.runtimes = sorted(runtimes, key=lambda rt: rt.id)
        self.channels = {(ch.src, ch.dst): ch for ch in channels}
        if len(self.channels) != len(channels):
            raise ConfigError("duplicate channel for a segment pair")
        self.incoming: dict[int, list[Channel]] = {rt.id: [] for rt in self.runtimes}
        for ch in channels:
            self.incoming[ch.dst].append(ch)
        self.quantum = quantum
        self.end_time = end_time
        self.mode = mode
        self.commit: dict[int, SimTime] = {rt.id: 0 for rt in self.runtimes}
        self.sync_waits: dict[int, int] = {rt.id: 0 for rt in self.runtimes}
        self.executed: dict[int, int] = {rt.id: 0 for rt in self.runtimes}
        self.status: dict[int, str] = {rt.id: IN_SIMULATION for rt in self.runtimes}
        self._quiescent: dict[int, bool] = {rt.id: False for rt in self.runtimes}
        self._busy: dict[int, bool] = {rt.id: True for rt in self.runtimes}
        self._seq = 0
        self.rounds = 0
        self.finish_data: dict[int, dict] = {}

    # -- limits -----------------------------------------------------------

    def compute_limit(self, seg_id: int) -> SimTime:
        """How far `seg_id` may simulate without risking a missed message."""
        limit = self.end_time
        for ch in self.incoming[seg_id]:
            bound = self.commit[ch.src] + ch.latency
            if bound < limit:
                limit = bound
        return limit

    # -- run loop ---------------------------------------------------------

    def run(self, extracts: Optional[list[tuple[str, int, int]]] = None,
            verbose: bool = False) -> SimulationReport:
        extracts = extracts or []
        proxies = None
        if self.mode == PARALLEL:
            ctx = mp.get_context("fork")
            proxies = {rt.id: _WorkerProxy(rt, ctx) for rt in self.runtimes}
        try:
            finished_by = self._loop(proxies, verbose)
            self._collect(proxies, extracts)
        finally:
            if proxies:
                for proxy in proxies.values():
                    proxy.stop()
        segments = [SegmentReport(rt.id, self.commit[rt.id],
                                  self.executed[rt.id], self.sync_waits[rt.id],
                                  self.status[rt.id])
                    for rt in self.runtimes]
        return SimulationReport(
            mode=self.mode,
            simulated_time=max(self.commit.values()),
            rounds=self.rounds,
            segments=segments,
            quantum=self.quantum,
            end_time=self.end_time,
            finished_by=finished_by,
        )

    def _loop(self, proxies, verbose: bool) -> str:
        while True:
            limits = {rt.id: self.compute_limit(rt.id) for rt in self.runtimes}
            runnable = []
            waiting = []
            for rt in self.runtimes:
                sid = rt.id
                if self.commit[sid] >= self.end_time:
                    self.status[sid] = DONE
                elif self.commit[sid] < limits[sid]:
                    self.status[sid] = IN_SIMULATION
                    runnable.append(sid)
                else:
                    self.status[sid] = WAITING
                    waiting.append(sid)

            if all(self.status[rt.id] == DONE for rt in self.runtimes):
                return "end_time"
            if self._globally_quiescent():
                if any(self._busy.values()):
                    raise DeadlockError(
                        "simulation drained with components still mid-operation")
                return "quiescence"
            if not runnable:
                raise DeadlockError(
                    "no segment can advance (zero-latency cycle or wedged "
                    f"topology); waiting={waiting}")

            targets = {}
            inbound = {}
            for sid in runnable:
                targets[sid] = min(self.commit[sid] + self.quantum, limits[sid])
                msgs = []
                for ch in self.incoming[sid]:
                    msgs.extend(ch.pop_until(targets[sid]))
                msgs.sort(key=lambda dm: dm[0])
                inbound[sid] = msgs

            results = {}
            if proxies is None:
                for sid in runnable:
                    rt = self.runtimes[self._index(sid)]
                    results[sid] = rt.step(targets[sid], inbound[sid])
            else:
                for sid in runnable:
                    proxies[sid].step_async(targets[sid], inbound[sid])
                for sid in runnable:
                    results[sid] = proxies[sid].step_result()

            for sid in runnable:  # publish in segment order: deterministic
                commit, outbox, executed, quiescent, busy = results[sid]
                self.commit[sid] = commit
                self.executed[sid] += executed
                self._quiescent[sid] = quiescent
                self._busy[sid] = busy
                for hop, send_time, msg in outbox:
                    ch = self.channels.get((sid, hop))
                    if ch is None:
                        raise ConfigError(f"no channel {sid}->{hop}")
                    self._seq += 1
                    ch.push(send_time, self._seq, msg)

            # Every segment still in simulation pays one synchronization
            # boundary this round; this is the paper's per-quantum sync cost.
            for sid in runnable:
                self.sync_waits[sid] += 1
            for sid in waiting:
                self.sync_waits[sid] += 1
            self.rounds += 1
            if verbose:
                log.info("round %d commits=%s waiting=%s", self.rounds,
                         {s: self.commit[s] for s in self.commit}, waiting)

    def _globally_quiescent(self) -> bool:
        return (all(self._quiescent.values())
                and all(not ch.queue for ch in self.channels.values()))

    def _index(self, sid: int) -> int:
        for i, rt in enumerate(self.runtimes):
            if rt.id == sid:
                return i
        raise KeyError(sid)

    def _collect(self, proxies, extracts) -> None:
        if proxies is None:
            for rt in self.runtimes:
                self.finish_data[rt.id] = rt.finish(extracts)
        else:
            for rt in self.runtimes:
                self.finish_data[rt.id] = proxies[rt.id].finish(extracts)
