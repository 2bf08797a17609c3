"""Layer descriptors, operation counts and built-in CNN workload tables.

A layer is described by the nine shape parameters of a convolution
(N, H, W, C_i, C_o, K_H, K_W, S_H, S_W) plus explicit zero padding per
side.  Fully-connected layers and matrix products are carried in the
same descriptor with H holding the batch-row count and every spatial
parameter pinned to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache


class LayerKind(Enum):
    CONV = "conv"
    FULLY_CONNECTED = "fc"
    MATMUL = "matmul"


class ShapeError(ValueError):
    """Raised when a layer descriptor violates its invariants."""


@dataclass(frozen=True)
class LayerDescriptor:
    """Shape parameters of one engine-acceleratable layer.

    For FULLY_CONNECTED / MATMUL layers: h = batch rows, ci/co = matrix
    inner/outer widths, and n = w = kh = kw = sh = sw = 1, pad = 0.
    """

    kind: LayerKind
    n: int
    h: int
    w: int
    ci: int
    co: int
    kh: int
    kw: int
    sh: int
    sw: int
    pad_h: int = 0
    pad_w: int = 0
    name: str = ""

    def __post_init__(self):
        validate_layer(self)

    @property
    def is_conv(self) -> bool:
        return self.kind is LayerKind.CONV

    @property
    def h_out(self) -> int:
        """Output rows by direct convolution arithmetic."""
        return (self.h + 2 * self.pad_h - self.kh) // self.sh + 1

    @property
    def w_out(self) -> int:
        return (self.w + 2 * self.pad_w - self.kw) // self.sw + 1

    @property
    def is_same_padded(self) -> bool:
        """True when padding follows the (K-1)/2 convention of odd kernels."""
        return (self.kh % 2 == 1 and self.kw % 2 == 1
                and self.pad_h == (self.kh - 1) // 2
                and self.pad_w == (self.kw - 1) // 2)


def validate_layer(layer: LayerDescriptor):
    d = layer
    if any(v < 1 for v in (d.n, d.h, d.w, d.ci, d.co, d.kh, d.kw, d.sh, d.sw)):
        raise ShapeError(f"{d.name or d.kind.value}: extents and strides must be >= 1")
    if d.pad_h < 0 or d.pad_w < 0:
        raise ShapeError(f"{d.name}: negative padding")
    if d.kh > d.h + 2 * d.pad_h or d.kw > d.w + 2 * d.pad_w:
        raise ShapeError(f"{d.name}: kernel exceeds padded input extent")
    if d.kind is not LayerKind.CONV:
        ones = (d.n, d.w, d.kh, d.kw, d.sh, d.sw)
        if ones != (1, 1, 1, 1, 1, 1) or d.pad_h or d.pad_w:
            raise ShapeError(
                f"{d.name}: fc/matmul layers require n=w=kh=kw=sh=sw=1 and no padding")


def conv(h, w, ci, co, k, s=1, pad=None, name="", n=1) -> LayerDescriptor:
    """Square-kernel convolution helper; pad defaults to the 'same' value."""
    if pad is None:
        pad = (k - 1) // 2
    return LayerDescriptor(LayerKind.CONV, n, h, w, ci, co, k, k, s, s, pad, pad, name)


def fc(batch, ci, co, name="") -> LayerDescriptor:
    return LayerDescriptor(LayerKind.FULLY_CONNECTED, 1, batch, 1, ci, co,
                           1, 1, 1, 1, 0, 0, name)


def matmul(rows, inner, cols, name="") -> LayerDescriptor:
    return LayerDescriptor(LayerKind.MATMUL, 1, rows, 1, inner, cols,
                           1, 1, 1, 1, 0, 0, name)


@dataclass(frozen=True)
class Network:
    name: str
    layers: tuple[LayerDescriptor, ...]
    chained: bool = False

    def __post_init__(self):
        if self.chained:
            for prev, cur in zip(self.layers, self.layers[1:]):
                if (prev.h_out, prev.w_out, prev.co) != (cur.h, cur.w, cur.ci):
                    raise ShapeError(
                        f"{self.name}: layer '{cur.name}' does not chain from "
                        f"'{prev.name}'")

    @property
    def conv_layers(self):
        return tuple(l for l in self.layers if l.is_conv)

    @property
    def fc_layers(self):
        return tuple(l for l in self.layers if not l.is_conv)


@dataclass(frozen=True)
class OpCounts:
    macs_with_zpad: int
    macs_valid: int
    zpad_taps: int  # zero-padding tap positions per (ci, co) pair

    def __post_init__(self):
        assert 0 <= self.macs_valid <= self.macs_with_zpad


def _valid_taps_1d(extent, out, k, stride, pad) -> int:
    """Number of (output position, kernel tap) pairs hitting real input."""
    count = 0
    for o in range(out):
        base = o * stride - pad
        lo = max(0, -base)
        hi = min(k, extent - base)
        count += max(0, hi - lo)
    return count


@lru_cache(maxsize=None)
def count_macs(layer: LayerDescriptor) -> OpCounts:
    """MAC counts with and without the taps that fall on zero padding.

    The padding-tap count is obtained by enumerating (output pixel,
    kernel tap) pairs per dimension; the 2-D count is their product,
    which is exact for rectangular padding.
    """
    d = layer
    if not d.is_conv:
        total = d.h * d.ci * d.co  # batch rows x matrix product
        return OpCounts(total, total, 0)
    out_positions = d.h_out * d.w_out * d.kh * d.kw
    valid_h = _valid_taps_1d(d.h, d.h_out, d.kh, d.sh, d.pad_h)
    valid_w = _valid_taps_1d(d.w, d.w_out, d.kw, d.sw, d.pad_w)
    valid_positions = valid_h * valid_w
    z = out_positions - valid_positions
    pairs = d.ci * d.co
    return OpCounts(d.n * out_positions * pairs,
                    d.n * valid_positions * pairs,
                    z)


def raw_memory_accesses(layer: LayerDescriptor) -> tuple[int, int, int]:
    """Word counts to fetch inputs/kernels and store outputs, unrestructured."""
    d = layer
    if not d.is_conv:
        return d.h * d.ci, d.ci * d.co, d.h * d.co
    m_x = d.n * d.h * d.w * d.ci
    m_k = d.kh * d.kw * d.ci * d.co
    m_y = d.n * d.h_out * d.w_out * d.co
    return m_x, m_k, m_y


# ---------------------------------------------------------------------------
# Built-in benchmark networks.
#
# Shapes follow the evaluation tables of the modeled engine: pooling is
# folded into the spatial extents of the next layer, and grouped
# convolutions are carried as single layers with the per-group input
# channel count.  The AlexNet classifier head input widths are kept as
# evaluated (the last stage reads 1024 channels).
# ---------------------------------------------------------------------------

def _alexnet(fc_batch) -> Network:
    layers = (
        conv(232, 232, 3, 96, k=11, s=4, pad=1, name="conv1"),
        conv(27, 27, 48, 256, k=5, name="conv2"),
        conv(13, 13, 256, 384, k=3, name="conv3"),
        conv(13, 13, 192, 384, k=3, name="conv4"),
        conv(13, 13, 192, 256, k=3, name="conv5"),
        fc(fc_batch, 9216, 4096, name="fc6"),
        fc(fc_batch, 4096, 4096, name="fc7"),
        fc(fc_batch, 1024, 1000, name="fc8"),
    )
    return Network("alexnet", layers)


def _vgg16(fc_batch) -> Network:
    dims = [(224, 3, 64), (224, 64, 64),
            (112, 64, 128), (112, 128, 128),
            (56, 128, 256), (56, 256, 256), (56, 256, 256),
            (28, 256, 512), (28, 512, 512), (28, 512, 512),
            (14, 512, 512), (14, 512, 512), (14, 512, 512)]
    layers = [conv(hw, hw, ci, co, k=3, name=f"conv{i + 1}")
              for i, (hw, ci, co) in enumerate(dims)]
    layers += [fc(fc_batch, 25088, 4096, name="fc6"),
               fc(fc_batch, 4096, 4096, name="fc7"),
               fc(fc_batch, 4096, 1000, name="fc8")]
    return Network("vgg16", tuple(layers))


def _resnet50(fc_batch) -> Network:
    # Bottleneck stages.  The stride-2 downsampling of each stage's leading
    # block sits on its first 1x1 and on the 1x1 projection; a strided 1x1
    # is arithmetically identical to an unstrided one on the subsampled
    # input, and the layers are carried in that form (the inter-layer
    # re-tiling performs the subsampling at no cost).
    layers = [conv(224, 224, 3, 64, k=7, s=2, name="conv1")]

    def bottleneck(tag, hw, cin, mid, cout, stride):
        hw_out = hw // stride
        layers.append(conv(hw_out, hw_out, cin, mid, k=1, name=f"{tag}.a"))
        layers.append(conv(hw_out, hw_out, mid, mid, k=3, name=f"{tag}.b"))
        layers.append(conv(hw_out, hw_out, mid, cout, k=1, name=f"{tag}.c"))
        if stride != 1 or cin != cout:
            layers.append(conv(hw_out, hw_out, cin, cout, k=1,
                               name=f"{tag}.proj"))

    stages = [  # (blocks, input hw, mid, out channels, first-block stride)
        (3, 56, 64, 256, 1),
        (4, 56, 128, 512, 2),
        (6, 28, 256, 1024, 2),
        (3, 14, 512, 2048, 2),
    ]
    cin = 64
    for blocks, hw, mid, cout, stride in stages:
        for b in range(blocks):
            s = stride if b == 0 else 1
            h = hw if b == 0 else hw // stride
            bottleneck(f"conv{len(layers)}", h, cin, mid, cout, s)
            cin = cout
    layers.append(fc(fc_batch, 2048, 1000, name="fc"))
    return Network("resnet50", tuple(layers))


_BUILTINS = {"alexnet": _alexnet, "vgg16": _vgg16, "resnet50": _resnet50}


def builtin_network(name: str, fc_batch: int = 7) -> Network:
    """One of the bundled CNN tables; fc layers carry `fc_batch` rows."""
    try:
        factory = _BUILTINS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown built-in network '{name}' "
                       f"(have: {', '.join(sorted(_BUILTINS))})") from None
    return factory(fc_batch)


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))
