"""Serial loop kernels for grouped convolution.

These are compiled with numba when it is installed and selected; the loop
nests use one fixed summation order so repeated runs produce bit-identical
results. The vectorized numpy path lives in :mod:`effkit.convs`.
"""

from __future__ import annotations

import numpy as np

from .backend import njit


@njit
def grouped_conv_fwd(xp: np.ndarray, w: np.ndarray, stride: int, groups: int) -> np.ndarray:
    """Correlate padded input (B, Cin, Hp, Wp) with weights (Cout, G, k, k)."""
    b, cin, hp, wp = xp.shape
    cout, g, kh, kw = w.shape
    opg = cout // groups
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((b, cout, oh, ow), dtype=np.float64)
    for n in range(b):
        for co in range(cout):
            base = (co // opg) * g
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(g):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (
                                    xp[n, base + ci, oy * stride + ky, ox * stride + kx]
                                    * w[co, ci, ky, kx]
                                )
                    out[n, co, oy, ox] = acc
    return out


@njit
def grouped_conv_bwd_w(
    xp: np.ndarray, dout: np.ndarray, stride: int, groups: int, kh: int, kw: int
) -> np.ndarray:
    b, cin, hp, wp = xp.shape
    _, cout, oh, ow = dout.shape
    g = cin // groups
    opg = cout // groups
    dw = np.zeros((cout, g, kh, kw), dtype=np.float64)
    for n in range(b):
        for co in range(cout):
            base = (co // opg) * g
            for ci in range(g):
                for ky in range(kh):
                    for kx in range(kw):
                        acc = dw[co, ci, ky, kx]
                        for oy in range(oh):
                            for ox in range(ow):
                                acc += (
                                    xp[n, base + ci, oy * stride + ky, ox * stride + kx]
                                    * dout[n, co, oy, ox]
                                )
                        dw[co, ci, ky, kx] = acc
    return dw


@njit
def grouped_conv_bwd_x(
    dout: np.ndarray, w: np.ndarray, stride: int, groups: int, hp: int, wp: int
) -> np.ndarray:
    b, cout, oh, ow = dout.shape
    _, g, kh, kw = w.shape
    opg = cout // groups
    dxp = np.zeros((b, groups * g, hp, wp), dtype=np.float64)
    for n in range(b):
        for co in range(cout):
            base = (co // opg) * g
            for oy in range(oh):
                for ox in range(ow):
                    d = dout[n, co, oy, ox]
                    for ci in range(g):
                        for ky in range(kh):
                            for kx in range(kw):
                                dxp[n, base + ci, oy * stride + ky, ox * stride + kx] += (
                                    d * w[co, ci, ky, kx]
                                )
    return dxp
