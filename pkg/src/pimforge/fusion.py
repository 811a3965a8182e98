"""Learning-to-Weight Module: gated channel reweighting of two feature maps."""
from __future__ import annotations

import numpy as np

from .nn import Module, param
from .tensor import ShapeError, Tensor
from .tensor import ops


class LwmModule(Module):
    def __init__(self, rng, c1: int, c2: int, c_out: int, dtype=np.float64):
        c = c1 + c2
        self.fc_weight = param(rng, (c, c), fan_in=c, dtype=dtype)
        self.fc_bias = param(rng, (c,), value=0.0, dtype=dtype)
        self.proj_weight = param(rng, (c_out, c, 1, 1), fan_in=c, dtype=dtype)
        self.proj_bias = param(rng, (c_out,), value=0.0, dtype=dtype)
        self._channels = (c1, c2, c_out)

    @property
    def channels(self) -> tuple[int, int, int]:
        return self._channels


def lwm_gate(f1, f2, lwm: LwmModule):
    """Return the concatenated features and their (N, C1+C2) gate values."""
    if f1.shape[0] != f2.shape[0] or f1.shape[-2:] != f2.shape[-2:]:
        raise ShapeError(f"lwm_fuse: spatial mismatch {f1.shape} vs {f2.shape}")
    c = ops.concat([f1, f2], axis=1)
    if c.shape[1] != lwm.fc_weight.shape[0]:
        raise ShapeError(f"lwm_fuse: {c.shape[1]} channels vs module built for {lwm.fc_weight.shape[0]}")
    gate = ops.sigmoid(ops.linear(ops.global_avg_pool(c), lwm.fc_weight, lwm.fc_bias))
    return c, gate


def lwm_fuse(f1, f2, lwm: LwmModule, return_preprojection: bool = False):
    """``f_F = project(c + A * c)`` with ``c = f1 (+) f2`` and ``A`` broadcast over space.

    Inputs are N x C x H x W (a single C x H x W map is also accepted).
    """
    f1 = f1 if isinstance(f1, Tensor) else Tensor(f1)
    f2 = f2 if isinstance(f2, Tensor) else Tensor(f2)
    squeeze = f1.ndim == 3
    if squeeze:
        f1 = ops.reshape(f1, (1,) + f1.shape)
        f2 = ops.reshape(f2, (1,) + f2.shape)
    c, gate = lwm_gate(f1, f2, lwm)
    n, ch = gate.shape
    weighted = ops.mul(c, ops.reshape(gate, (n, ch, 1, 1)))
    pre = ops.add(c, weighted)
    out = ops.conv2d(pre, lwm.proj_weight, lwm.proj_bias, padding=0)
    if squeeze:
        out = ops.reshape(out, out.shape[1:])
        pre = ops.reshape(pre, pre.shape[1:])
    return (out, pre) if return_preprojection else out
