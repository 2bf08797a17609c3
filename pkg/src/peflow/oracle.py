"""Ground-truth integer evaluation of conv / fully-connected / matmul layers.

Tensors are plain numpy arrays in NHWC order (row-major), kernels are
[kh, kw, ci, co].  Arithmetic is exact: accumulation happens in int64
and any value exceeding the configured accumulator width is a hard
error, never a silent wrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .workload import LayerDescriptor, LayerKind, ShapeError


class AccumulatorOverflowError(ArithmeticError):
    """A sum left the representable accumulator range."""


@dataclass(frozen=True)
class ArithmeticModel:
    input_bits: int = 8
    weight_bits: int = 8
    accumulator_bits: int = 32

    def check_layer(self, layer: LayerDescriptor):
        """Verify the accumulator can absorb a full dot product."""
        taps = layer.kh * layer.kw * layer.ci
        need = self.input_bits + self.weight_bits + math.ceil(math.log2(taps)) \
            if taps > 1 else self.input_bits + self.weight_bits
        if self.accumulator_bits < need:
            raise AccumulatorOverflowError(
                f"{self.accumulator_bits}-bit accumulator cannot hold "
                f"{taps} products of {self.input_bits}x{self.weight_bits} bits")

    @property
    def acc_limit(self) -> int:
        return 1 << (self.accumulator_bits - 1)

    def input_range(self):
        lo = -(1 << (self.input_bits - 1))
        return lo, -lo - 1

    def weight_range(self):
        lo = -(1 << (self.weight_bits - 1))
        return lo, -lo - 1


DEFAULT_ARITH = ArithmeticModel()


def _check_range(arr, bits, what):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if arr.size and (arr.min() < lo or arr.max() > hi):
        raise ShapeError(f"{what} values exceed {bits}-bit range")


def _check_acc(y, arith):
    if y.size and max(abs(int(y.min())), abs(int(y.max()))) >= arith.acc_limit:
        raise AccumulatorOverflowError(
            f"accumulator exceeded {arith.accumulator_bits} bits")


def conv_reference(x: np.ndarray, k: np.ndarray, layer: LayerDescriptor,
                   arith: ArithmeticModel = DEFAULT_ARITH) -> np.ndarray:
    """Direct convolution; out-of-range input taps contribute zero."""
    d = layer
    if x.shape != (d.n, d.h, d.w, d.ci):
        raise ShapeError(f"input {x.shape} != {(d.n, d.h, d.w, d.ci)}")
    if k.shape != (d.kh, d.kw, d.ci, d.co):
        raise ShapeError(f"kernel {k.shape} != {(d.kh, d.kw, d.ci, d.co)}")
    _check_range(x, arith.input_bits, "input")
    _check_range(k, arith.weight_bits, "weight")

    xp = np.zeros((d.n, d.h + 2 * d.pad_h, d.w + 2 * d.pad_w, d.ci),
                  dtype=np.int64)
    xp[:, d.pad_h:d.pad_h + d.h, d.pad_w:d.pad_w + d.w] = x
    k64 = k.astype(np.int64)
    y = np.zeros((d.n, d.h_out, d.w_out, d.co), dtype=np.int64)
    for kh in range(d.kh):
        for kw in range(d.kw):
            window = xp[:,
                        kh:kh + d.sh * (d.h_out - 1) + 1:d.sh,
                        kw:kw + d.sw * (d.w_out - 1) + 1:d.sw]
            y += np.tensordot(window, k64[kh, kw], axes=([3], [0]))
    _check_acc(y, arith)
    return y


def fc_reference(x: np.ndarray, k: np.ndarray,
                 arith: ArithmeticModel = DEFAULT_ARITH) -> np.ndarray:
    """Batched matrix product [n, ci] @ [ci, co], exact integers."""
    if x.ndim != 2 or k.ndim != 2 or x.shape[1] != k.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {k.shape}")
    _check_range(x, arith.input_bits, "input")
    _check_range(k, arith.weight_bits, "weight")
    y = x.astype(np.int64) @ k.astype(np.int64)
    _check_acc(y, arith)
    return y


def fc_as_conv(x: np.ndarray, k: np.ndarray, layer: LayerDescriptor,
               arith: ArithmeticModel = DEFAULT_ARITH) -> np.ndarray:
    """Fully-connected layer routed through conv_reference.

    The batch rows become the spatial height with every kernel and
    stride extent pinned to 1; results must match fc_reference exactly.
    """
    if layer.kind is LayerKind.CONV:
        raise ShapeError("fc_as_conv expects an fc/matmul layer")
    as_conv = LayerDescriptor(LayerKind.CONV, 1, layer.h, 1, layer.ci,
                              layer.co, 1, 1, 1, 1, 0, 0, layer.name)
    y = conv_reference(x.reshape(1, layer.h, 1, layer.ci),
                       k.reshape(1, 1, layer.ci, layer.co), as_conv, arith)
    return y.reshape(layer.h, layer.co)


def random_input(layer: LayerDescriptor, rng: np.random.Generator,
                 arith: ArithmeticModel = DEFAULT_ARITH) -> np.ndarray:
    lo, hi = arith.input_range()
    if layer.is_conv:
        shape = (layer.n, layer.h, layer.w, layer.ci)
    else:
        shape = (layer.h, layer.ci)
    return rng.integers(lo, hi + 1, size=shape, dtype=np.int64)


def random_weights(layer: LayerDescriptor, rng: np.random.Generator,
                   arith: ArithmeticModel = DEFAULT_ARITH) -> np.ndarray:
    lo, hi = arith.weight_range()
    if layer.is_conv:
        shape = (layer.kh, layer.kw, layer.ci, layer.co)
    else:
        shape = (layer.ci, layer.co)
    return rng.integers(lo, hi + 1, size=shape, dtype=np.int64)
