"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .core import Tape, Tensor, TapeError, backward


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise TapeError(f"grad_check needs a scalar output, got shape {out.shape}")
    return float(out.data.reshape(()))


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    h: float = 1e-5,
    indices: dict[int, Iterable[tuple]] | Iterable[tuple] | None = None,
) -> float:
    """Max relative error between autodiff and central differences.

    ``fn`` maps the input tensor(s) to a scalar. ``indices`` restricts the
    check to sampled coordinates (per input when given as a dict keyed by
    input position). Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    single = isinstance(inputs, Tensor)
    xs = [inputs] if single else list(inputs)
    for x in xs:
        x.requires_grad = True
        x.grad = None
    with Tape() as tape:
        out = fn(*xs)
    _scalar(out)
    backward(tape, out, params=xs)

    if indices is None:
        picks = {i: list(np.ndindex(x.shape)) for i, x in enumerate(xs)}
    elif isinstance(indices, dict):
        picks = {i: list(v) for i, v in indices.items()}
    else:
        picks = {0: list(indices)}

    worst = 0.0
    for i, coords in picks.items():
        x = xs[i]
        analytic = x.grad
        for idx in coords:
            orig = x.data[idx]
            x.data[idx] = orig + h
            fp = _scalar(fn(*xs))
            x.data[idx] = orig - h
            fm = _scalar(fn(*xs))
            x.data[idx] = orig
            num = (fp - fm) / (2.0 * h)
            a = float(analytic[idx])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
