"""Cycle-level functional simulator of the elastic PE-array engine.

The array is R rows by C cores.  Each column phase broadcasts one pixel
word per row and one weight word per core for ci*kh consecutive MAC
clocks; partial sums then shift one core to the right inside each
elastic group, so that after kw phases the rightmost cores hold full
convolution sums.  Strided layers interleave sw output channels across
the group instead of discarding diagonals.

The simulator is exact: it consumes the restructured streams beat by
beat, reproduces the reference convolution bit for bit, and its cycle
and beat counts equal the closed-form model with zero tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import tiling
from .oracle import AccumulatorOverflowError, ArithmeticModel
from .tiling import (DerivedParams, TiledStream, UnmappableLayerError,
                     derive_params, out_col_beats, tap_presentation_order)
from .workload import LayerDescriptor, Network, ShapeError, fc


@dataclass(frozen=True)
class EngineConfig:
    """Static build parameters of one engine instance."""

    rows: int = 7
    cores: int = 96
    input_bits: int = 8
    weight_bits: int = 8
    acc_bits: int = 32
    wsram_depth: int = 2048        # rotator rows per core
    max_shift: int | None = None   # deepest supported shift factor
    supported_kernel_strides: frozenset[tuple[int, int]] | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cores < 1:
            raise ValueError("rows and cores must be >= 1")

    @property
    def num_pes(self) -> int:
        return self.rows * self.cores

    def arith(self) -> ArithmeticModel:
        return ArithmeticModel(self.input_bits, self.weight_bits, self.acc_bits)


class MuxSelect(Enum):
    OWN_PRODUCT = 0
    LEFT_NEIGHBOR_SUM = 1


@dataclass
class PEState:
    """Snapshot of one processing element (debug/trace use)."""
    accumulator: int
    mux_select: MuxSelect


class UnsupportedAdapterError(ValueError):
    """Layer needs a (kh, sh) datawidth adapter the build lacks."""


class RotatorUnderrunError(RuntimeError):
    """Weight prefetch could not complete within its iteration."""


class ConfigHeaderError(ValueError):
    """Stream header malformed or inconsistent with the layer."""


# 64-bit header layout: five 8-bit shape fields, a 16-bit channel count,
# one kind bit, remaining 7 bits reserved.
_H_FIELDS = (("kh", 8), ("kw", 8), ("sh", 8), ("sw", 8), ("ci", 16),
             ("shift_factor", 8), ("is_matmul", 1))


@dataclass(frozen=True)
class ConfigHeader:
    kh: int
    kw: int
    sh: int
    sw: int
    ci: int
    shift_factor: int
    is_matmul: int

    def pack(self) -> int:
        word = 0
        shift = 0
        for name, bits in _H_FIELDS:
            value = getattr(self, name)
            if not 0 <= value < (1 << bits):
                raise ConfigHeaderError(f"{name}={value} exceeds {bits} bits")
            word |= value << shift
            shift += bits
        return word

    @classmethod
    def unpack(cls, word: int) -> "ConfigHeader":
        if not 0 <= word < (1 << 64):
            raise ConfigHeaderError("header must fit in 64 bits")
        values = {}
        shift = 0
        for name, bits in _H_FIELDS:
            values[name] = int((word >> shift) & ((1 << bits) - 1))
            shift += bits
        return cls(**values)

    @classmethod
    def for_layer(cls, layer: LayerDescriptor,
                  params: DerivedParams) -> "ConfigHeader":
        return cls(layer.kh, layer.kw, layer.sh, layer.sw, layer.ci,
                   params.shift_factor, 0 if layer.is_conv else 1)

    def check_layer(self, layer: LayerDescriptor, params: DerivedParams):
        expect = ConfigHeader.for_layer(layer, params)
        if self != expect:
            raise ConfigHeaderError(f"header {self} does not match layer "
                                    f"({expect})")


def attach_header(stream: TiledStream, header: ConfigHeader,
                  word_bits: int) -> TiledStream:
    """Prepend the 64 configuration bits, split into stream-width words."""
    packed = header.pack()
    n_words = -(-64 // word_bits)
    words = [(packed >> (i * word_bits)) & ((1 << word_bits) - 1)
             for i in range(n_words)]
    n_beats = -(-n_words // stream.width)
    head = np.zeros((n_beats, stream.width), dtype=stream.data.dtype)
    head.flat[:n_words] = words
    return TiledStream(stream.beats + n_beats, stream.width,
                       np.concatenate([head, stream.data]),
                       provenance=stream.provenance)


def split_header(stream: TiledStream,
                 word_bits: int) -> tuple[ConfigHeader, TiledStream]:
    n_words = -(-64 // word_bits)
    n_beats = -(-n_words // stream.width)
    if stream.beats < n_beats:
        raise ConfigHeaderError("stream shorter than its header")
    words = stream.data[:n_beats].flat[:n_words]
    packed = 0
    for i, w in enumerate(words):
        packed |= int(w) << (i * word_bits)
    rest = TiledStream(stream.beats - n_beats, stream.width,
                       stream.data[n_beats:], provenance=stream.provenance)
    return ConfigHeader.unpack(packed), rest


class BeatCounts(NamedTuple):
    x_beats: int
    k_beats: int
    y_beats: int


@dataclass
class SimReport:
    layer: LayerDescriptor
    cycles: int
    mem_beats: BeatCounts
    output: np.ndarray
    valid_macs: int
    idle_pe_cycles: int
    stalls: int = 0
    drain_overruns: int = 0

    @property
    def utilization(self) -> float:
        """Fraction of PE-clocks doing valid work; equals the model's E_j."""
        return self.valid_macs / (self.valid_macs + self.idle_pe_cycles)


def _check_words(arr, bits, what, name):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if arr.size and (arr.min() < lo or arr.max() > hi):
        raise ShapeError(f"{name}: {what} values exceed {bits}-bit words")


def _check_build_support(layer, p, cfg):
    if cfg.supported_kernel_strides is not None \
            and (layer.kh, layer.sh) not in cfg.supported_kernel_strides:
        raise UnsupportedAdapterError(
            f"{layer.name}: no ({layer.kh},{layer.sh}) adapter in this build")
    if cfg.max_shift is not None and p.shift_factor > cfg.max_shift:
        raise UnsupportedAdapterError(
            f"{layer.name}: shift factor {p.shift_factor} exceeds "
            f"max {cfg.max_shift}")
    # the rotator replays its content N*L*W times; a single pass can
    # stream through, anything more must fit the SRAM
    replay = layer.n * p.num_blocks * layer.w
    if replay > 1 and layer.sw * layer.ci * layer.kh > cfg.wsram_depth:
        raise UnmappableLayerError(
            f"{layer.name}: rotator needs {layer.sw * layer.ci * layer.kh} "
            f"rows, build has {cfg.wsram_depth}")


def simulate_layer(x: np.ndarray, k: np.ndarray, layer: LayerDescriptor,
                   cfg: EngineConfig, *, arith: ArithmeticModel | None = None,
                   static_check: bool = True, trace=None,
                   k_fill_rate: float | None = None) -> SimReport:
    """Run one layer through the engine and detile its output.

    trace: optional writable receiving one CSV record per clock.
    k_fill_rate: weight-prefetch bandwidth override in words/clock; the
    default meets the closed-form requirement exactly, a lower value
    raises RotatorUnderrunError.
    """
    d = layer
    p = derive_params(d, cfg)
    _check_build_support(d, p, cfg)
    arith = arith or cfg.arith()
    if static_check:
        arith.check_layer(d)
    _check_words(x, arith.input_bits, "input", d.name or d.kind.value)
    _check_words(k, arith.weight_bits, "weight", d.name or d.kind.value)

    if d.is_conv:
        x4, k4 = x, k
    else:
        if x.shape != (d.h, d.ci) or k.shape != (d.ci, d.co):
            raise ShapeError(f"fc operands {x.shape}, {k.shape} do not match "
                             f"layer ({d.h},{d.ci})x({d.ci},{d.co})")
        x4 = x.reshape(1, d.h, 1, d.ci)
        k4 = k.reshape(1, 1, d.ci, d.co)

    # wire format: a 64-bit configuration header rides ahead of both
    # streams and is decoded back before the run
    x_stream = attach_header(tiling.tile_input(x4, d, cfg),
                             ConfigHeader.for_layer(d, p), cfg.input_bits)
    k_stream = attach_header(tiling.tile_weights(k4, d, cfg),
                             ConfigHeader.for_layer(d, p), cfg.weight_bits)
    hdr_x, xhat = split_header(x_stream, cfg.input_bits)
    hdr_k, khat = split_header(k_stream, cfg.weight_bits)
    hdr_x.check_layer(d, p)
    hdr_k.check_layer(d, p)

    report = _run(xhat, khat, d, p, cfg, arith, trace, k_fill_rate)
    if not d.is_conv:
        report.output = report.output.reshape(d.h, d.co)
    return report


def _run(xhat, khat, d, p, cfg, arith, trace, k_fill_rate) -> SimReport:
    rows, cores = cfg.rows, cfg.cores
    t_, e_, g_, sw = p.num_iterations, p.num_groups, p.group_size, d.sw
    eg = e_ * g_
    n_, l_, w_, ci = d.n, p.num_blocks, d.w, d.ci
    kh, kw = d.kh, d.kw
    wb = out_col_beats(d)
    q_s, q_c = p.shift_stall, p.config_stall
    per_iter_clocks = q_c + n_ * l_ * w_ * (q_s + ci * kh)

    taps = np.array(tap_presentation_order(d))
    s_idx = taps % d.sh
    gather_rows = (taps // d.sh)[:, None] + np.arange(rows)[None, :]

    beats_x = xhat.data.reshape(n_, l_, w_, ci, d.sh, rows + p.shift_factor)
    slices_k = khat.data.reshape(t_, sw, ci * kh, cores)

    # per-residue core schedule: channel slot and kernel column, -1 = idle
    sigma = -np.ones((sw, eg), dtype=np.int64)
    column = -np.ones((sw, eg), dtype=np.int64)
    for rho in range(sw):
        for gi, slot in enumerate(tiling._core_schedule(d, p, rho)):
            if slot is not None:
                s, col = slot
                sigma[rho, gi::g_][:e_] = s
                column[rho, gi::g_][:e_] = col
    active = column >= 0
    exit_residue = (kw - 1 - d.pad_w) % sw

    # in-range vertical taps per PE row, per block (rows past the real
    # output height contribute nothing)
    vh = np.zeros((l_, rows), dtype=np.int64)
    for l in range(l_):
        for r in range(rows):
            row = l * rows + r
            if row < d.h_out:
                base = row * d.sh - d.pad_h
                ks = base + np.arange(kh)
                vh[l, r] = int(np.count_nonzero((ks >= 0) & (ks < d.h)))

    limit = arith.acc_limit
    pmax = (1 << (arith.input_bits - 1)) * (1 << (arith.weight_bits - 1))
    safe = kw * ci * kh * pmax < limit

    drain_budget_ok = e_ <= ci * kh + q_s  # R words/clock, sw*(ci*kh+q_s) clocks
    if k_fill_rate is not None and t_ > 1:
        needed = sw * ci * kh * cores
        if k_fill_rate * per_iter_clocks < needed:
            raise RotatorUnderrunError(
                f"{d.name}: prefetch of {needed} words cannot complete in "
                f"{per_iter_clocks} clocks at {k_fill_rate} words/clock")

    y_data = np.zeros((t_ * n_ * l_ * wb, e_ * sw * rows), dtype=np.int64)
    cycles = 0
    valid_macs = 0
    drain_overruns = 0

    for t in range(t_):
        cycles += q_c
        if q_c and trace is not None:
            trace.write(f"{cycles},config,{t},-,-,-,-,-,0\n")
        wt = slices_k[t]
        # channel slots still inside co for this iteration, per residue
        chan_ok = np.zeros((sw, eg), dtype=bool)
        for rho in range(sw):
            co_idx = t * e_ * sw + (np.arange(eg) // g_) * sw + sigma[rho]
            chan_ok[rho] = active[rho] & (co_idx < d.co)
        for n in range(n_):
            for l in range(l_):
                acc = np.zeros((rows, cores), dtype=np.int64)
                sum_vh = int(vh[l].sum())
                base_beat = ((t * n_ + n) * l_ + l) * wb
                for w in range(w_):
                    rho = w % sw
                    block = beats_x[n, l, w]  # [ci, sh, rows+F]
                    pix = block[:, s_idx[:, None], gather_rows]
                    pmat = pix.transpose(2, 0, 1).reshape(rows, ci * kh)
                    if safe:
                        acc += pmat @ wt[rho]
                    else:
                        pre = int(np.abs(acc).max())
                        if pre + ci * kh * pmax >= limit:
                            _mac_stepwise(acc, pmat, wt[rho], limit, d)
                        else:
                            acc += pmat @ wt[rho]
                            _check_limit(acc, limit, d)
                    if trace is not None:
                        for j in range(ci * kh):
                            trace.write(f"{cycles + j + 1},mac,{t},{n},{l},"
                                        f"{w},{j // kh},{taps[j % kh]},0\n")
                    cycles += ci * kh

                    # valid work this phase: live chains x in-range taps
                    live = active[rho].copy()
                    o_vec = np.full(eg, -1, dtype=np.int64)
                    o_vec[live] = (w + d.pad_w - column[rho, live]) // sw
                    live &= (o_vec >= 0) & (o_vec < d.w_out) & chan_ok[rho]
                    valid_macs += ci * sum_vh * int(np.count_nonzero(live))

                    released = 0
                    if rho == exit_residue:
                        o = (w + d.pad_w - kw + 1) // sw
                        if 0 <= o < wb:
                            _copy_out(y_data, base_beat + o, acc, e_, g_, sw,
                                      rows)
                            released = e_ * sw * rows
                            if not drain_budget_ok:
                                drain_overruns += 1
                    if w == w_ - 1:
                        released += _flush(y_data, base_beat, acc, d, p,
                                           sigma[rho], column[rho], rows, w)
                    if q_s:
                        cycles += 1
                        accg = acc[:, :eg].reshape(rows, e_, g_)
                        accg[:, :, 1:] = accg[:, :, :-1]
                        accg[:, :, 0] = 0
                        acc[:, :eg] = accg.reshape(rows, eg)
                        if trace is not None:
                            trace.write(f"{cycles},shift,{t},{n},{l},{w},"
                                        f"-,-,{released}\n")
                    elif trace is not None and released:
                        trace.write(f"{cycles},release,{t},{n},{l},{w},"
                                    f"-,-,{released}\n")
                    if (w + 1 + d.pad_w) % sw == 0:
                        # fresh chains begin in the first sw cores of each
                        # group; their first product overwrites (bypass)
                        accg = acc[:, :eg].reshape(rows, e_, g_)
                        accg[:, :, :sw] = 0
                        acc[:, :eg] = accg.reshape(rows, eg)

    output = tiling.detile_output(
        TiledStream(y_data.shape[0], y_data.shape[1], y_data,
                    provenance="output"), d, cfg)
    _check_limit(output, limit, d)

    assert cycles == t_ * per_iter_clocks, "cycle loop drifted from the model"
    beats = BeatCounts(x_beats=t_ * n_ * l_ * w_ * ci * d.sh,
                       k_beats=t_ * sw * ci * kh,
                       y_beats=t_ * n_ * l_ * wb)
    idle = cfg.num_pes * cycles - valid_macs
    return SimReport(d, cycles, beats, output, valid_macs, idle,
                     stalls=0, drain_overruns=drain_overruns)


def _check_limit(arr, limit, d):
    if arr.size and int(np.abs(arr).max()) >= limit:
        raise AccumulatorOverflowError(
            f"{d.name or d.kind.value}: accumulator exceeded configured width")


def _mac_stepwise(acc, pmat, wmat, limit, d):
    """Per-clock accumulation, overflow checked after every product."""
    for j in range(pmat.shape[1]):
        acc += np.outer(pmat[:, j], wmat[j])
        _check_limit(acc, limit, d)


def _copy_out(y_data, beat, acc, e_, g_, sw, rows):
    """Output pipe copy: channel slot sigma exits from core g-1-sigma."""
    accg = acc[:, :e_ * g_].reshape(rows, e_, g_)
    dest = y_data[beat].reshape(e_, sw, rows)
    for s in range(sw):
        dest[:, s, :] = accg[:, :, g_ - 1 - s].T


def _flush(y_data, base_beat, acc, d, p, sig, col, rows, w):
    """Block end: chains whose remaining taps all fall on right padding
    are complete and release together in the final column's clocks."""
    e_, g_, sw = p.num_groups, p.group_size, d.sw
    released = 0
    accg = acc[:, :e_ * g_].reshape(rows, e_, g_)
    for gi in range(g_):
        c = col[gi]
        if c < 0 or c == d.kw - 1:
            continue  # idle core, or already exited at this boundary
        o = (w + d.pad_w - c) // sw
        if 0 <= o < d.w_out:
            dest = y_data[base_beat + o].reshape(e_, sw, rows)
            dest[:, sig[gi], :] = accg[:, :, gi].T
            released += e_ * rows
    return released


def simulate_network(net: Network, cfg: EngineConfig, seed: int = 0,
                     value_range: int = 7) -> list[SimReport]:
    """Chain layers back to back, re-tiling each output into the next input.

    Raw accumulator words stream between layers (no requantization), so
    stimulus is drawn from a narrow range to keep every intermediate
    inside the configured accumulator width.
    """
    rng = np.random.default_rng(seed)
    reports = []
    x = None
    wide = ArithmeticModel(cfg.acc_bits, cfg.weight_bits, cfg.acc_bits)
    for i, layer in enumerate(net.layers):
        if x is None:
            shape = (layer.n, layer.h, layer.w, layer.ci) if layer.is_conv \
                else (layer.h, layer.ci)
            x = rng.integers(-value_range, value_range + 1, size=shape,
                             dtype=np.int64)
        else:
            prev = net.layers[i - 1]
            got = (prev.n, prev.h_out, prev.w_out, prev.co)
            want = (layer.n, layer.h, layer.w, layer.ci) if layer.is_conv \
                else (1, layer.h, 1, layer.ci)
            if got != want:
                raise ShapeError(f"{net.name}: layer '{layer.name}' expects "
                                 f"{want}, previous layer produced {got}")
        kshape = (layer.kh, layer.kw, layer.ci, layer.co) if layer.is_conv \
            else (layer.ci, layer.co)
        k = rng.integers(-value_range, value_range + 1, size=kshape,
                         dtype=np.int64)
        rep = simulate_layer(x, k, layer, cfg,
                             arith=wide if i else None,
                             static_check=(i == 0))
        reports.append(rep)
        x = rep.output if layer.is_conv \
            else rep.output.reshape(1, layer.h, 1, layer.co)
    return reports


def fc_batched(x: np.ndarray, k: np.ndarray, cfg: EngineConfig,
               **kwargs) -> SimReport:
    """Batched matrix product on the array; batch rows map to PE rows."""
    if x.ndim != 2 or k.ndim != 2 or x.shape[1] != k.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {k.shape}")
    layer = fc(x.shape[0], x.shape[1], k.shape[1])
    return simulate_layer(x, k, layer, cfg, **kwargs)
