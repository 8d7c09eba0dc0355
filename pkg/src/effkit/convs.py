"""Grouped spatial convolution with selectable compute backend.

Group size G is the number of input channels feeding each output channel;
G = 1 is a depthwise convolution and G = C_in is a dense one. Weights are
laid out (C_out, G, k, k). The numba backend runs the serial kernels in
:mod:`effkit._conv_kernels`; the numpy backend computes the same correlation
with sliding windows and einsum. Both share the padding arithmetic here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _conv_kernels, backend

PADDINGS = ("same", "valid")


def round_group_size(requested: int, channels: int) -> int:
    """Nearest divisor of ``channels`` to ``requested``; ties go to the larger."""
    if channels < 1:
        raise ValueError(f"channels must be positive, got {channels}")
    if requested < 1:
        raise ValueError(f"requested group size must be positive, got {requested}")
    best = 1
    for d in range(1, channels + 1):
        if channels % d != 0:
            continue
        if abs(d - requested) < abs(best - requested) or (
            abs(d - requested) == abs(best - requested) and d > best
        ):
            best = d
    return best


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one grouped convolution.

    ``batch`` and ``field`` do not affect the kernel math (they come from the
    input tensor); they carry the workload context that the intensity model
    in :mod:`effkit.perf` needs.
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    group_size: int | None = None  # None means dense (G = in_channels)
    padding: str = "same"
    batch: int | None = None
    field: int | None = None

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) < 1:
            raise ValueError(f"conv dimensions must be positive: {self}")
        if self.batch is not None and self.batch < 1:
            raise ValueError(f"batch must be positive, got {self.batch}")
        if self.field is not None and self.field < 1:
            raise ValueError(f"field must be positive, got {self.field}")
        if self.padding not in PADDINGS:
            raise ValueError(f"unknown padding {self.padding!r}; use one of {PADDINGS}")
        g = self.resolved_group_size
        if self.in_channels % g != 0:
            raise ValueError(
                f"group size {g} does not divide {self.in_channels} input channels"
            )
        if self.out_channels % self.groups != 0:
            raise ValueError(
                f"{self.groups} groups do not divide {self.out_channels} output channels"
            )

    @property
    def resolved_group_size(self) -> int:
        return self.in_channels if self.group_size is None else self.group_size

    @property
    def groups(self) -> int:
        return self.in_channels // self.resolved_group_size

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.resolved_group_size, self.kernel, self.kernel)

    def out_size(self, size: int) -> int:
        if self.padding == "same":
            return -(-size // self.stride)
        if size < self.kernel:
            raise ValueError(f"input size {size} below kernel {self.kernel} with valid padding")
        return (size - self.kernel) // self.stride + 1

    def pad_amounts(self, size: int) -> tuple[int, int]:
        """(before, after) padding for one spatial axis; extra goes after."""
        if self.padding == "valid":
            return 0, 0
        total = max((self.out_size(size) - 1) * self.stride + self.kernel - size, 0)
        return total // 2, total - total // 2


def _pad_input(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    ph = spec.pad_amounts(x.shape[2])
    pw = spec.pad_amounts(x.shape[3])
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), (0, 0), ph, pw))


def _windows(xp: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """(B, groups, G, OH, OW, k, k) view of the padded input."""
    b = xp.shape[0]
    k, s = spec.kernel, spec.stride
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    oh, ow = win.shape[2], win.shape[3]
    return win.reshape(b, spec.groups, spec.resolved_group_size, oh, ow, k, k)


def conv_forward(x: np.ndarray, weight: np.ndarray, spec: ConvSpec):
    """Returns (y, cache) with y of shape (B, C_out, OH, OW)."""
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValueError(f"input shape {x.shape} does not match {spec}")
    if weight.shape != spec.weight_shape:
        raise ValueError(f"weight shape {weight.shape}, expected {spec.weight_shape}")
    xp = np.ascontiguousarray(_pad_input(x, spec), dtype=np.float64)
    weight = np.ascontiguousarray(weight, dtype=np.float64)
    if backend.active_backend() == "numba":
        y = _conv_kernels.grouped_conv_fwd(xp, weight, spec.stride, spec.groups)
    else:
        win = _windows(xp, spec)
        wg = weight.reshape(
            spec.groups, spec.out_channels // spec.groups, spec.resolved_group_size,
            spec.kernel, spec.kernel,
        )
        y = np.einsum("bnchwyx,nocyx->bnohw", win, wg, optimize=True)
        y = y.reshape(x.shape[0], spec.out_channels, y.shape[3], y.shape[4])
    cache = {"xp": xp, "weight": weight, "spec": spec, "in_shape": x.shape}
    return y, cache


def conv_backward(cache, dy: np.ndarray):
    """Returns (dx, dweight)."""
    spec: ConvSpec = cache["spec"]
    xp, weight = cache["xp"], cache["weight"]
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    b, _, hp, wp = xp.shape
    k, s = spec.kernel, spec.stride
    if backend.active_backend() == "numba":
        dw = _conv_kernels.grouped_conv_bwd_w(xp, dy, s, spec.groups, k, k)
        dxp = _conv_kernels.grouped_conv_bwd_x(dy, weight, s, spec.groups, hp, wp)
    else:
        g = spec.resolved_group_size
        opg = spec.out_channels // spec.groups
        win = _windows(xp, spec)
        dg = dy.reshape(b, spec.groups, opg, dy.shape[2], dy.shape[3])
        dw = np.einsum("bnchwyx,bnohw->nocyx", win, dg, optimize=True)
        dw = dw.reshape(spec.weight_shape)
        wg = weight.reshape(spec.groups, opg, g, k, k)
        dxp = np.zeros((b, spec.groups, g, hp, wp))
        oh, ow = dy.shape[2], dy.shape[3]
        for ky in range(k):
            for kx in range(k):
                patch = np.einsum("bnohw,noc->bnchw", dg, wg[:, :, :, ky, kx], optimize=True)
                dxp[:, :, :, ky : ky + oh * s : s, kx : kx + ow * s : s] += patch
        dxp = dxp.reshape(b, spec.in_channels, hp, wp)
    in_shape = cache["in_shape"]
    ph, _ = spec.pad_amounts(in_shape[2])
    pw, _ = spec.pad_amounts(in_shape[3])
    dx = dxp[:, :, ph : ph + in_shape[2], pw : pw + in_shape[3]]
    return np.ascontiguousarray(dx), dw
