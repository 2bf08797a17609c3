"""Functional and analytical model of an elastic output-stationary PE array.

The package models a DNN engine of R rows by C cores end to end: layer
workloads and operation counts, ground-truth integer references, the
stream restructurings between DRAM and the array, a cycle-exact
functional simulator, the closed-form performance model, and a static
design-space explorer, all cross-validated against one another.
"""

from .engine import (BeatCounts, ConfigHeader, EngineConfig, SimReport,
                     fc_batched, simulate_layer, simulate_network)
from .oracle import (AccumulatorOverflowError, ArithmeticModel,
                     conv_reference, fc_reference)
from .perfmodel import (LayerPerf, NetworkPerf, arithmetic_intensity,
                        bandwidth, clocks, efficiency, layer_perf,
                        memory_accesses, network_perf, peak_gops)
from .tiling import (DerivedParams, TiledStream, UnmappableLayerError,
                     derive_params, detile_output, dump_stream, load_stream,
                     shift_count, tile_input, tile_weights, untile_input)
from .workload import (LayerDescriptor, LayerKind, Network, OpCounts,
                       ShapeError, builtin_names, builtin_network, conv,
                       count_macs, fc, matmul, raw_memory_accesses)

__version__ = "0.1.0"
