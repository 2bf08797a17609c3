"""Stream restructuring between plain NHWC tensors and engine beat order.

Three transforms move data between DRAM layout and the PE array:

* input tiling     -- row blocks are interleaved so a small shift-register
                      bank can feed every PE row its strided vertical taps,
* weight tiling    -- kernels are spread across cores so that the periodic
                      shift-accumulate of partial sums inside an elastic
                      group reconstructs the horizontal convolution,
* output de-tiling -- engine release order back to NHWC.

All transforms are bijections on their domains and O(n) single passes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .workload import LayerDescriptor, ShapeError


class UnmappableLayerError(ValueError):
    """Layer cannot be scheduled onto the configured array."""


class StreamFormatError(ValueError):
    """Malformed serialized stream."""


@dataclass(frozen=True)
class DerivedParams:
    """Static schedule quantities for one layer on one array shape."""

    group_size: int        # cores per elastic group, kw + sw - 1
    num_groups: int        # elastic groups that fit, C // group_size
    shift_factor: int      # register shifts per non-final load
    num_blocks: int        # row blocks covering the input height
    num_iterations: int    # output-channel passes
    clocks_per_column: int # 1 + ci*kh
    shift_stall: int       # 1 when a dead clock separates column phases
    config_stall: int      # 1 when reconfiguration costs a clock

    @property
    def parallel_channels(self) -> int:
        return self.num_groups * self._sw

    # sw is stashed so parallel_channels and beat widths need no layer.
    _sw: int = 1


def derive_params(layer: LayerDescriptor, cfg) -> DerivedParams:
    """Schedule parameters; raises UnmappableLayerError when G > C."""
    d = layer
    g = d.kw + d.sw - 1
    if g > cfg.cores:
        raise UnmappableLayerError(
            f"{d.name or d.kind.value}: group of {g} cores exceeds C={cfg.cores}")
    e = cfg.cores // g
    f = math.ceil(d.kh / d.sh) - 1
    blocks = math.ceil(d.h / (cfg.rows * d.sh))
    iters = math.ceil(d.co / (e * d.sw))
    shift = 1 if (d.is_conv and d.kw != 1) else 0
    params = DerivedParams(
        group_size=g,
        num_groups=e,
        shift_factor=f,
        num_blocks=blocks,
        num_iterations=iters,
        clocks_per_column=1 + d.ci * d.kh,
        shift_stall=shift,
        config_stall=1 - shift,
        _sw=d.sw,
    )
    # Over-padded layers would need output rows/columns no block computes.
    if d.h_out > blocks * cfg.rows:
        raise UnmappableLayerError(
            f"{d.name}: padding asks for {d.h_out} output rows, "
            f"blocks cover {blocks * cfg.rows}")
    if d.w_out > out_col_beats(layer):
        raise UnmappableLayerError(
            f"{d.name}: padding asks for {d.w_out} output columns, "
            f"stream carries {out_col_beats(layer)}")
    return params


def shift_count(load_index: int, params: DerivedParams, layer: LayerDescriptor) -> int:
    """Register shifts after the given 1-based load of a column phase."""
    if not 1 <= load_index <= layer.sh:
        raise ValueError(f"load_index {load_index} out of 1..{layer.sh}")
    if load_index == layer.sh:
        return layer.kh // layer.sh
    return params.shift_factor


def out_col_beats(layer: LayerDescriptor) -> int:
    """Output beats per (iteration, batch, block): one every sw columns."""
    return -(-layer.w // layer.sw)


def tap_presentation_order(layer: LayerDescriptor) -> list[int]:
    """Vertical kernel taps in the order the register bank exposes them.

    Load s presents tap s immediately and tap m*sh + s after its m-th
    shift, so taps of one input column arrive load-major, not in kh
    order.  Spare alignments past the kernel are skipped.
    """
    order = []
    for s in range(layer.sh):
        shifts = (layer.kh // layer.sh if s == layer.sh - 1
                  else math.ceil(layer.kh / layer.sh) - 1)
        for m in range(shifts + 1):
            kh = m * layer.sh + s
            if kh < layer.kh:
                order.append(kh)
    assert sorted(order) == list(range(layer.kh))
    return order


@dataclass(frozen=True)
class TiledStream:
    """Beats-by-words view of a restructured array."""

    beats: int
    width: int
    data: np.ndarray  # shape (beats, width)
    provenance: str = ""

    def __post_init__(self):
        if self.data.shape != (self.beats, self.width):
            raise StreamFormatError(
                f"stream data {self.data.shape} != ({self.beats}, {self.width})")

    @property
    def words(self) -> int:
        return self.beats * self.width


# -- input restructuring ----------------------------------------------------

def _block_window(x, base, span, pad_h):
    """Rows [base - pad_h, base - pad_h + span) with zero fill outside x."""
    n, h, w, c = x.shape
    idx = np.arange(base - pad_h, base - pad_h + span)
    inside = (idx >= 0) & (idx < h)
    out = np.zeros((n, span, w, c), dtype=x.dtype)
    out[:, inside] = x[:, idx[inside]]
    return out


def tile_input(x: np.ndarray, layer: LayerDescriptor, cfg) -> TiledStream:
    """NHWC tensor -> interleaved beat stream for the register bank.

    Per block: take sh*(rows+F) input rows starting pad_h above the
    block, reshape the height into [rows+F, sh], then emit beats ordered
    [n, block, column, ci, s] each carrying rows+F words.
    """
    d = layer
    p = derive_params(d, cfg)
    if x.shape != (d.n, d.h, d.w, d.ci):
        raise ShapeError(f"input shape {x.shape} != layer "
                         f"{(d.n, d.h, d.w, d.ci)}")
    rows, f = cfg.rows, p.shift_factor
    span = d.sh * (rows + f)
    blocks = []
    for l in range(p.num_blocks):
        blk = _block_window(x, l * rows * d.sh, span, d.pad_h)
        # [n, rows+f, sh, w, ci] -> beat order [n, w, ci, sh][rows+f]
        blk = blk.reshape(d.n, rows + f, d.sh, d.w, d.ci)
        blocks.append(blk.transpose(0, 3, 4, 2, 1))
    stacked = np.stack(blocks, axis=1)  # [n, L, w, ci, sh, rows+f]
    data = np.ascontiguousarray(
        stacked.transpose(0, 1, 2, 3, 4, 5).reshape(-1, rows + f))
    return TiledStream(data.shape[0], rows + f, data, provenance="input")


def untile_input(xhat: TiledStream, layer: LayerDescriptor, cfg) -> np.ndarray:
    """Exact inverse of tile_input on its image."""
    d = layer
    p = derive_params(d, cfg)
    rows, f = cfg.rows, p.shift_factor
    expect = d.n * p.num_blocks * d.w * d.ci * d.sh
    if xhat.beats != expect or xhat.width != rows + f:
        raise StreamFormatError(
            f"stream {xhat.beats}x{xhat.width} beats, expected "
            f"{expect}x{rows + f}")
    grid = xhat.data.reshape(d.n, p.num_blocks, d.w, d.ci, d.sh, rows + f)
    x = np.zeros((d.n, d.h, d.w, d.ci), dtype=xhat.data.dtype)
    for l in range(p.num_blocks):
        # beat word j at slot s holds input row l*rows*sh - pad_h + j*sh + s;
        # halo rows repeat across blocks with identical values, so plain
        # overwrites reconstruct the tensor exactly
        for s in range(d.sh):
            rows_idx = l * rows * d.sh - d.pad_h + np.arange(rows + f) * d.sh + s
            keep = (rows_idx >= 0) & (rows_idx < d.h)
            # mixed advanced indexing puts the masked axis first: [K, n, w, ci]
            vals = grid[:, l, :, :, s, keep]
            x[:, rows_idx[keep]] = vals.transpose(1, 0, 2, 3)
    return x


# -- weight restructuring ---------------------------------------------------

def _core_schedule(layer: LayerDescriptor, params: DerivedParams, phase_mod: int):
    """Per-core (channel slot, kernel column) for one phase residue.

    Inside a group, the core at offset g serves channel slot
    sigma = (phase + pad_w - g + sw - 1) mod sw with kernel column
    g - sw + 1 + sigma; columns outside the kernel make the core idle
    for that residue.
    """
    sw = layer.sw
    sched = []
    for g in range(params.group_size):
        sigma = (phase_mod + layer.pad_w - g + sw - 1) % sw
        col = g - sw + 1 + sigma
        sched.append((sigma, col) if 0 <= col < layer.kw else None)
    return sched


def tile_weights(k: np.ndarray, layer: LayerDescriptor, cfg) -> TiledStream:
    """[kh, kw, ci, co] kernels -> rotator beat stream.

    Per iteration the rotator holds sw slices of ci*kh beats; the slice
    replayed for column w is w mod sw.  Cores of group e compute
    channels t*E*sw + e*sw + sigma; cores past E*G and channel slots
    past co carry null words so the beat width stays C.
    """
    d = layer
    p = derive_params(d, cfg)
    if d.is_conv and k.shape != (d.kh, d.kw, d.ci, d.co):
        raise ShapeError(f"kernel shape {k.shape} != "
                         f"{(d.kh, d.kw, d.ci, d.co)}")
    if not d.is_conv:
        k = k.reshape(1, 1, d.ci, d.co)
    taps = tap_presentation_order(d)
    t_, e_, g_, sw = p.num_iterations, p.num_groups, p.group_size, d.sw
    data = np.zeros((t_, sw, d.ci, d.kh, cfg.cores), dtype=k.dtype)
    for rho in range(sw):
        sched = _core_schedule(d, p, rho)
        for e in range(e_):
            for g, slot in enumerate(sched):
                if slot is None:
                    continue
                sigma, col = slot
                for t in range(t_):
                    co = t * e_ * sw + e * sw + sigma
                    if co >= d.co:
                        continue
                    # beat index inside the slice follows tap order
                    data[t, rho, :, :, e * g_ + g] = k[taps, col, :, co].T
    flat = data.reshape(-1, cfg.cores)
    return TiledStream(flat.shape[0], cfg.cores, flat, provenance="weights")


# -- output de-tiling -------------------------------------------------------

def detile_output(yhat: TiledStream, layer: LayerDescriptor, cfg) -> np.ndarray:
    """Engine release stream -> [n, h_out, w_out, co] tensor.

    Beat (t, n, l, b) word (e, sigma, r) is output pixel
    (n, l*rows + r, b, t*E*sw + e*sw + sigma); rows, columns and
    channels past the real extents are padding and are dropped.
    """
    d = layer
    p = derive_params(d, cfg)
    rows = cfg.rows
    wb = out_col_beats(d)
    beats = p.num_iterations * d.n * p.num_blocks * wb
    width = p.num_groups * d.sw * rows
    if yhat.beats != beats or yhat.width != width:
        raise StreamFormatError(
            f"stream {yhat.beats}x{yhat.width}, expected {beats}x{width}")
    grid = yhat.data.reshape(p.num_iterations, d.n, p.num_blocks, wb,
                             p.num_groups, d.sw, rows)
    # -> [n, l, r, b, t, e, sigma]
    grid = grid.transpose(1, 2, 6, 3, 0, 4, 5)
    full = grid.reshape(d.n, p.num_blocks * rows, wb,
                        p.num_iterations * p.num_groups * d.sw)
    return np.ascontiguousarray(full[:, :d.h_out, :d.w_out, :d.co])


def retile_output(y: np.ndarray, layer: LayerDescriptor, cfg) -> TiledStream:
    """Inverse of detile_output, zero-filling the cropped padding lanes."""
    d = layer
    p = derive_params(d, cfg)
    rows = cfg.rows
    wb = out_col_beats(d)
    if y.shape != (d.n, d.h_out, d.w_out, d.co):
        raise ShapeError(f"output shape {y.shape} != "
                         f"{(d.n, d.h_out, d.w_out, d.co)}")
    full = np.zeros((d.n, p.num_blocks * rows, wb,
                     p.num_iterations * p.num_groups * d.sw), dtype=y.dtype)
    full[:, :d.h_out, :d.w_out, :d.co] = y
    grid = full.reshape(d.n, p.num_blocks, rows, wb,
                        p.num_iterations, p.num_groups, d.sw)
    grid = grid.transpose(4, 0, 1, 3, 5, 6, 2)  # [t, n, l, b, e, sigma, r]
    width = p.num_groups * d.sw * rows
    data = np.ascontiguousarray(grid.reshape(-1, width))
    return TiledStream(data.shape[0], width, data, provenance="output")


# -- binary stream files ----------------------------------------------------

_MAGIC = b"PFTS"
_VERSION = 1


def dump_stream(stream: TiledStream, path, word_bits: int = 32):
    """Write header + little-endian words; used for golden stream files."""
    dtype = "<i4" if word_bits <= 32 else "<i8"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQI", _VERSION, stream.beats, stream.width,
                             word_bits))
        fh.write(np.ascontiguousarray(stream.data, dtype=dtype).tobytes())


def load_stream(path) -> TiledStream:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise StreamFormatError(f"bad magic {magic!r}")
        version, beats, width, word_bits = struct.unpack("<IQQI", fh.read(24))
        if version != _VERSION:
            raise StreamFormatError(f"unsupported version {version}")
        dtype = "<i4" if word_bits <= 32 else "<i8"
        raw = np.frombuffer(fh.read(), dtype=dtype)
    if raw.size != beats * width:
        raise StreamFormatError(
            f"payload has {raw.size} words, header says {beats * width}")
    data = raw.reshape(beats, width).astype(np.int64)
    return TiledStream(int(beats), int(width), data)
