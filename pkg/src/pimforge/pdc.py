"""Central and radial pixel-difference convolutions and the PDC head.

Radial pair table on the 5x5 region (offsets are (dy, dx) from the centre)::

    outer ring x_i            inner ring x_i'
    (-2,-2) (-2,-1) (-2,0) (-2,1) (-2,2)      (-1,-1) (-1,-1) (-1,0) (-1,1) (-1,1)
    (-1,-2)                 (-1, 2)      ->   (-1,-1)                 (-1, 1)
    ( 0,-2)       c         ( 0, 2)           ( 0,-1)       c         ( 0, 1)
    ( 1,-2)                 ( 1, 2)           ( 1,-1)                 ( 1, 1)
    ( 2,-2) ( 2,-1) ( 2,0) ( 2,1) ( 2,2)      ( 1,-1) ( 1,-1) ( 1,0) ( 1,1) ( 1,1)

Each outer pixel pairs with the inner-ring pixel one step toward the centre.
Corners step diagonally; every other outer pixel steps along the axis that
leaves the ring, which equals clipping each coordinate to [-1, 1].
"""
from __future__ import annotations

import numpy as np

from .fusion import LwmModule, lwm_fuse
from .nn import Module, param
from .tensor import ShapeError, Tensor
from .tensor import ops

CPDC_OFFSETS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))
CPDC_PAIRS = tuple((off, (0, 0)) for off in CPDC_OFFSETS)

RPDC_OUTER = tuple(
    [(-2, dx) for dx in range(-2, 3)]
    + [(dy, 2) for dy in range(-1, 3)]
    + [(2, dx) for dx in range(1, -3, -1)]
    + [(dy, -2) for dy in range(1, -2, -1)]
)
RPDC_PAIRS = tuple(((dy, dx), (int(np.clip(dy, -1, 1)), int(np.clip(dx, -1, 1)))) for dy, dx in RPDC_OUTER)


class CpdcKernel(Module):
    """3x3 central-difference kernel bank, stored as the 8 non-centre taps (O x C x 8).

    The centre tap multiplies ``x_c - x_c`` and carries no information.
    """

    size = 3

    def __init__(self, weight):
        w = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        if w.ndim != 3 or w.shape[2] != len(CPDC_PAIRS):
            raise ShapeError(f"CpdcKernel: expected O x C x 8 taps of a 3x3 kernel, got {w.shape}")
        self.weight = w

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, dtype=np.float64) -> "CpdcKernel":
        return cls(param(rng, (c_out, c_in, 8), fan_in=c_in * 8, dtype=dtype))

    @classmethod
    def from_3x3(cls, kernel: np.ndarray) -> "CpdcKernel":
        k = np.asarray(kernel, dtype=np.float64)
        if k.ndim == 2:
            k = k[None, None]
        if k.shape[-2:] != (3, 3):
            raise ShapeError(f"CpdcKernel: kernel must be 3x3, got {k.shape[-2:]}")
        taps = np.stack([k[..., dy + 1, dx + 1] for dy, dx in CPDC_OFFSETS], axis=-1)
        return cls(Tensor(taps, requires_grad=True))

    def as_3x3(self) -> np.ndarray:
        """Dense O x C x 3 x 3 kernel with a zero centre tap."""
        w = self.weight.data
        k = np.zeros(w.shape[:2] + (3, 3), dtype=w.dtype)
        for t, (dy, dx) in enumerate(CPDC_OFFSETS):
            k[..., dy + 1, dx + 1] = w[..., t]
        return k

    def reparameterized(self) -> np.ndarray:
        """Equivalent vanilla 3x3 kernel: centre tap ``w_c - sum_i w_i``."""
        k = self.as_3x3()
        k[..., 1, 1] = k[..., 1, 1] - k.sum(axis=(-2, -1))
        return k


class RpdcKernel(Module):
    """5x5 radial-difference kernel bank over the 16 pairs of ``RPDC_PAIRS`` (O x C x 16)."""

    size = 5

    def __init__(self, weight):
        w = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        if w.ndim != 3 or w.shape[2] != len(RPDC_PAIRS):
            raise ShapeError(f"RpdcKernel: expected O x C x 16 pair weights of a 5x5 region, got {w.shape}")
        self.weight = w

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, dtype=np.float64) -> "RpdcKernel":
        return cls(param(rng, (c_out, c_in, 16), fan_in=c_in * 16, dtype=dtype))


def cpdc_forward(x, k: CpdcKernel):
    """``out(p) = sum_i w_i (x_i - x_c)`` over the 3x3 neighbourhood, zero padded."""
    if getattr(k, "size", None) != 3:
        raise ShapeError("cpdc_forward: kernel must be 3x3")
    return ops.pair_difference_conv(x, k.weight, CPDC_PAIRS, halo=1)


def rpdc_forward(x, k: RpdcKernel):
    """``out(p) = sum_i w_i (x_i - x_i')`` over the radial pairs, zero padded."""
    if getattr(k, "size", None) != 5:
        raise ShapeError("rpdc_forward: kernel region must be 5x5")
    return ops.pair_difference_conv(x, k.weight, RPDC_PAIRS, halo=2)


class PdcHead(Module):
    def __init__(self, rng, c_in: int, c_out: int, dtype=np.float64):
        self.cpdc = CpdcKernel.init(rng, c_in, c_out, dtype=dtype)
        self.rpdc = RpdcKernel.init(rng, c_in, c_out, dtype=dtype)
        self.lwm = LwmModule(rng, c_out, c_out, c_out, dtype=dtype)


def pdc_head_forward(f, head: PdcHead):
    """f_l' -> (CPDC, RPDC) -> LWM -> f_l."""
    fc = cpdc_forward(f, head.cpdc)
    fr = rpdc_forward(f, head.rpdc)
    return lwm_fuse(fc, fr, head.lwm)
