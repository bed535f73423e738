"""Parallel, time-decoupled virtual platform for multicore systems with
compute-in-memory (memristor crossbar) accelerators."""

from .bench import (CompareReport, LayerSpec, RunReport, SplitMix64, compare,
                    gen_vmm_workload, layer_table, matmul_oracle,
                    quantum_sweep, run_bench)
from .cim import CimConfig, CimUnit, crossbar_vmm
from .config import (VpConfig, Workload, build, load_config,
                     preset_load_oriented, preset_uniform, serialize)
from .controller import Channel, Controller, SegmentRuntime, SimulationReport
from .cpu import Cpu, assemble, run_reference
from .dram import Dram, DramConfig
from .errors import (AddressError, AssembleError, ConfigError, DeadlockError,
                     DecodeError, IncomparableRuns, ParseError, ProtocolError,
                     ResultMismatch, RunawayError, ValidationError, VpError)
from .kernel import EventKernel

__version__ = "0.1.0"
