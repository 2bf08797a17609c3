"""Closed-form per-layer clocks, efficiency, memory traffic and bandwidth.

Every quantity is an exact function of the layer shape and the static
array configuration; the cycle-level simulator must agree with clocks()
and memory_accesses() to the word.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tiling import DerivedParams, derive_params, out_col_beats
from .workload import LayerDescriptor, Network, count_macs


@dataclass(frozen=True)
class LayerPerf:
    layer: LayerDescriptor
    clocks: int
    efficiency: float          # valid MACs / (PEs * clocks), in (0, 1]
    mx_words: int
    mk_words: int
    my_words: int
    arith_intensity: float     # 2 * valid MACs / total words
    bw_x: float                # words per second at the given frequency
    bw_k: float
    bw_y: float

    @property
    def total_words(self) -> int:
        return self.mx_words + self.mk_words + self.my_words


@dataclass(frozen=True)
class DomainPerf:
    """Aggregate over one frequency domain (conv stack or fc stack)."""
    clocks: int
    efficiency: float          # cycle-weighted mean of layer efficiencies
    total_words: int
    arith_intensity: float
    fps: float                 # frames per second (batch-aware)
    latency_s: float
    frames_per_pass: int


@dataclass(frozen=True)
class NetworkPerf:
    network: Network
    layers: tuple[LayerPerf, ...]
    conv: DomainPerf | None
    fc: DomainPerf | None
    overall_efficiency: float


def clocks(layer: LayerDescriptor, cfg) -> int:
    """Total clocks: T * (q_c + N*L*W * (q_s + ci*kh))."""
    p = derive_params(layer, cfg)
    d = layer
    per_col = p.shift_stall + d.ci * d.kh
    return p.num_iterations * (p.config_stall
                               + d.n * p.num_blocks * d.w * per_col)


def efficiency(layer: LayerDescriptor, cfg) -> float:
    """Valid MACs over PE-clocks, the exact form including stall clocks."""
    return count_macs(layer).macs_valid / (cfg.rows * cfg.cores
                                           * clocks(layer, cfg))


def memory_accesses(layer: LayerDescriptor, cfg) -> tuple[int, int, int]:
    """Restructured-stream words (input, kernel, output) for the layer."""
    d = layer
    p = derive_params(d, cfg)
    t = p.num_iterations
    mx = t * d.n * p.num_blocks * d.w * d.ci * d.sh * (cfg.rows + p.shift_factor)
    mk = t * d.ci * d.kh * d.sw * cfg.cores
    my = t * d.n * p.num_blocks * out_col_beats(d) \
        * p.num_groups * d.sw * cfg.rows
    return mx, mk, my


def arithmetic_intensity(layer: LayerDescriptor, cfg) -> float:
    return 2 * count_macs(layer).macs_valid / sum(memory_accesses(layer, cfg))


def bandwidth(layer: LayerDescriptor, cfg, f: float) -> tuple[float, float, float]:
    """Stream bandwidths in words/s at engine frequency f.

    bw_x: the register bank consumes rows+F words every F' clocks; when
    F' is zero (kh < sh or fc layers) the beat-per-clock convention
    applies.  bw_k: the next iteration's rotator fill spread over the
    current iteration's clocks.  bw_y: one release drained before the
    next column's sums arrive.
    """
    d = layer
    p = derive_params(d, cfg)
    f_prime = max(d.kh // d.sh, 1)
    bw_x = f * (cfg.rows + p.shift_factor) / f_prime
    per_iter = p.config_stall + d.n * p.num_blocks * d.w \
        * (p.shift_stall + d.ci * d.kh)
    bw_k = f * (d.ci * d.kh * d.sw * cfg.cores) / per_iter
    bw_y = f * (p.num_groups * d.sw * cfg.rows) / (d.ci * d.kh + p.shift_stall)
    return bw_x, bw_k, bw_y


def peak_gops(cfg, f: float) -> float:
    """Two ops per PE per clock."""
    return 2 * cfg.rows * cfg.cores * f / 1e9


def average_gops(layers, cfg, f: float) -> float:
    """Efficiency-weighted throughput over a layer list."""
    total_q = sum(clocks(l, cfg) for l in layers)
    total_macs = sum(count_macs(l).macs_valid for l in layers)
    return 2 * total_macs * f / total_q / 1e9 if total_q else 0.0


def layer_perf(layer: LayerDescriptor, cfg, f: float) -> LayerPerf:
    q = clocks(layer, cfg)
    macs = count_macs(layer).macs_valid
    mx, mk, my = memory_accesses(layer, cfg)
    bw = bandwidth(layer, cfg, f)
    return LayerPerf(layer, q, macs / (cfg.rows * cfg.cores * q),
                     mx, mk, my, 2 * macs / (mx + mk + my), *bw)


def _domain(layers, perfs, f) -> DomainPerf | None:
    if not layers:
        return None
    q = sum(p.clocks for p in perfs)
    macs = sum(count_macs(l).macs_valid for l in layers)
    words = sum(p.total_words for p in perfs)
    frames = layers[0].n if layers[0].is_conv else layers[0].h
    return DomainPerf(
        clocks=q,
        efficiency=sum(p.efficiency * p.clocks for p in perfs) / q,
        total_words=words,
        arith_intensity=2 * macs / words,
        fps=frames * f / q,
        latency_s=q / f,
        frames_per_pass=frames,
    )


def network_perf(net: Network, cfg, f_conv: float, f_fc: float) -> NetworkPerf:
    """Per-layer metrics plus cycle-weighted aggregates per domain.

    Convolutional and fully-connected layers run in separate frequency
    domains; fps of the fc stack counts all batch rows of one pass.
    """
    perfs = tuple(layer_perf(l, cfg, f_conv if l.is_conv else f_fc)
                  for l in net.layers)
    conv_layers = [l for l in net.layers if l.is_conv]
    fc_layers = [l for l in net.layers if not l.is_conv]
    conv_perfs = [p for p in perfs if p.layer.is_conv]
    fc_perfs = [p for p in perfs if not p.layer.is_conv]
    total_q = sum(p.clocks for p in perfs)
    overall = sum(p.efficiency * p.clocks for p in perfs) / total_q
    return NetworkPerf(net, perfs,
                       _domain(conv_layers, conv_perfs, f_conv),
                       _domain(fc_layers, fc_perfs, f_fc),
                       overall)
