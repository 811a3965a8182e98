"""Differentiable primitives.

Every op takes Tensors (or array-likes, promoted to constants) and returns a
new Tensor. Image-like tensors are laid out N x C x H x W; a single
C x H x W image is accepted wherever a batch is expected.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .core import ShapeError, Tensor, as_tensor, make_result

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _lift(*xs) -> list[Tensor]:
    ref = next((x.data.dtype for x in xs if isinstance(x, Tensor)), np.float64)
    return [x if isinstance(x, Tensor) else as_tensor(np.asarray(x, dtype=ref)) for x in xs]


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result("mul", a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result("div", out, (a, b), bw)


def neg(a) -> Tensor:
    (a,) = _lift(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def power(a, k: float) -> Tensor:
    (a,) = _lift(a)
    k = float(k)

    def bw(g):
        return (g * k * a.data ** (k - 1.0),)

    return make_result("power", a.data ** k, (a,), bw)


def log(a) -> Tensor:
    (a,) = _lift(a)
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    (a,) = _lift(a)
    out = np.exp(a.data)
    return make_result("exp", out, (a,), lambda g: (g * out,))


def scale(a, s: float) -> Tensor:
    (a,) = _lift(a)
    s = float(s)
    return make_result("scale", a.data * s, (a,), lambda g: (g * s,))


# activations -----------------------------------------------------------------

def sigmoid(x) -> Tensor:
    (x,) = _lift(x)
    # split by sign so neither branch overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)

    def bw(g):
        return (g * out * (1.0 - out),)

    return make_result("sigmoid", out, (x,), bw)


def gelu(x) -> Tensor:
    (x,) = _lift(x)
    d = x.data
    cdf = 0.5 * (1.0 + erf(d / _SQRT2))
    out = (d * cdf).astype(d.dtype, copy=False)

    def bw(g):
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT2PI
        return (g * (cdf + d * pdf),)

    return make_result("gelu", out, (x,), bw)


def relu(x) -> Tensor:
    (x,) = _lift(x)
    m = x.data > 0

    def bw(g):
        return (g * m,)

    return make_result("relu", np.where(m, x.data, 0).astype(x.dtype, copy=False), (x,), bw)


def softmax(x, mask=None, axis: int = -1) -> Tensor:
    """Softmax over ``axis``; entries where ``mask`` is False get probability 0.

    A slice with no allowed entries yields all zeros (empty context).
    """
    (x,) = _lift(x)
    d = x.data
    if mask is None:
        z = d - d.max(axis=axis, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=axis, keepdims=True)
    else:
        allow = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        masked = np.where(allow, d, -np.inf)
        mx = masked.max(axis=axis, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.where(allow, np.exp(masked - mx), 0.0)
        s = e.sum(axis=axis, keepdims=True)
        p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)
    p = p.astype(d.dtype, copy=False)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", p, (x,), bw)


# reductions and shape plumbing ----------------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    (x,) = _lift(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    (x,) = _lift(x)
    shape = x.shape
    axes = range(x.ndim) if axis is None else ((axis,) if isinstance(axis, int) else axis)
    count = int(np.prod([shape[a] for a in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result("mean", np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), bw)


def reshape(x, shape) -> Tensor:
    (x,) = _lift(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return make_result("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    (x,) = _lift(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence, axis: int = 1) -> Tensor:
    xs = _lift(*xs)
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        lead = (slice(None),) * ax
        return tuple(g[lead + (slice(bounds[i], bounds[i + 1]),)] for i in range(len(xs)))

    return make_result("concat", np.concatenate([t.data for t in xs], axis=ax), xs, bw)


def matmul(a, b) -> Tensor:
    a, b = _lift(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result("matmul", a.data @ b.data, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """Fully-connected layer over the last axis: ``x @ weight + bias``."""
    x, weight = _lift(x, weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    inputs = (x, weight) if bias is None else (x, weight, _lift(bias)[0])
    out = x.data @ weight.data
    if bias is not None:
        out = out + inputs[2].data

    def bw(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if bias is None:
            return gx, gw
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if inputs[2].requires_grad else None
        return gx, gw, gb

    return make_result("linear", out, inputs, bw)


def global_avg_pool(x) -> Tensor:
    """N x C x H x W -> N x C."""
    (x,) = _lift(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected N x C x H x W, got {x.shape}")
    return mean(x, axis=(2, 3))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = _lift(x, gamma, beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, g.shape[-1])
        gg = (flat * xhat.reshape(flat.shape)).sum(axis=0) if gamma.requires_grad else None
        gbeta = flat.sum(axis=0) if beta.requires_grad else None
        return gx, gg, gbeta

    return make_result("layer_norm", out.astype(d.dtype, copy=False), (x, gamma, beta), bw)


# convolution family ------------------------------------------------------------

def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected C x H x W or N x C x H x W, got {x.shape}")
    return x, False


def _unbatch(out: Tensor, squeezed: bool) -> Tensor:
    return reshape(out, out.shape[1:]) if squeezed else out


def conv2d(x, weight, bias=None, stride=1, padding="same") -> Tensor:
    """Direct (im2col) 2-D cross-correlation with zero padding.

    ``padding`` is an int, a pair, or ``"same"`` (odd kernels, stride 1).
    """
    x, weight = _lift(x, weight)
    x, squeezed = _as_batch(x)
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} vs weight {weight.shape}")
    O, C, kh, kw = weight.shape
    sh, sw = _pair(stride)
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0 or (sh, sw) != (1, 1):
            raise ShapeError(f"conv2d: 'same' padding needs odd kernel and stride 1, got {weight.shape}")
        ph, pw = kh // 2, kw // 2
    else:
        ph, pw = _pair(padding)
    N, _, H, W = x.shape
    Hp, Wp = H + 2 * ph, W + 2 * pw
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {weight.shape} too large for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    # N, C, Ho, Wo, kh, kw -> N, C*kh*kw, Ho*Wo
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(N, C * kh * kw, Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = np.matmul(wmat, cols)
    inputs = [x, weight]
    if bias is not None:
        (b,) = _lift(bias)
        if b.shape != (O,):
            raise ShapeError(f"conv2d: bias {b.shape} for {O} output channels")
        out = out + b.data[None, :, None]
        inputs.append(b)
    out = out.reshape(N, O, Ho, Wo)

    def bw(g):
        g2 = g.reshape(N, O, Ho * Wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2).reshape(N, C, kh, kw, Ho, Wo)
            dxp = np.zeros((N, C, Hp, Wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += dcols[:, :, i, j]
            gx = dxp[:, :, ph:ph + H, pw:pw + W]
        if bias is not None:
            gb = g2.sum(axis=(0, 2)) if inputs[2].requires_grad else None
            return gx, gw, gb
        return gx, gw

    return _unbatch(make_result("conv2d", out, inputs, bw), squeezed)


def pair_difference_conv(x, weight, pairs: Sequence, halo: int) -> Tensor:
    """Convolution over pixel differences.

    ``out[n, o, p] = sum_{c, k} weight[o, c, k] * (x[c, p + a_k] - x[c, p + b_k])``
    where ``pairs[k] = ((ay, ax), (by, bx))`` are offsets from the output
    pixel. Zero padding of width ``halo``; stride 1, same size out.
    """
    x, weight = _lift(x, weight)
    x, squeezed = _as_batch(x)
    P = len(pairs)
    if weight.ndim != 3 or weight.shape[1] != x.shape[1] or weight.shape[2] != P:
        raise ShapeError(f"pair_difference_conv: input {x.shape} vs weight {weight.shape} ({P} pairs)")
    N, C, H, W = x.shape
    O = weight.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (halo, halo), (halo, halo)))
    diffs = np.empty((N, C, P, H, W), dtype=x.dtype)
    for k, ((ay, ax), (by, bx)) in enumerate(pairs):
        diffs[:, :, k] = (xp[:, :, halo + ay:halo + ay + H, halo + ax:halo + ax + W]
                          - xp[:, :, halo + by:halo + by + H, halo + bx:halo + bx + W])
    cols = diffs.reshape(N, C * P, H * W)
    wmat = weight.data.reshape(O, C * P)
    out = np.matmul(wmat, cols).reshape(N, O, H, W)

    def bw(g):
        g2 = g.reshape(N, O, H * W)
        gx = gw = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if x.requires_grad:
            dd = np.matmul(wmat.T, g2).reshape(N, C, P, H, W)
            dxp = np.zeros_like(xp)
            for k, ((ay, ax), (by, bx)) in enumerate(pairs):
                dxp[:, :, halo + ay:halo + ay + H, halo + ax:halo + ax + W] += dd[:, :, k]
                dxp[:, :, halo + by:halo + by + H, halo + bx:halo + bx + W] -= dd[:, :, k]
            gx = dxp[:, :, halo:halo + H, halo:halo + W]
        return gx, gw

    return _unbatch(make_result("pair_difference_conv", out, (x, weight), bw), squeezed)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    (x,) = _lift(x)
    x, squeezed = _as_batch(x)
    f = int(factor)
    N, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def bw(g):
        return (g.reshape(N, C, H, f, W, f).sum(axis=(3, 5)),)

    return _unbatch(make_result("upsample_nearest", out, (x,), bw), squeezed)


def pixel_shuffle(x, factor: int) -> Tensor:
    """N x (C*r*r) x H x W -> N x C x (H*r) x (W*r)."""
    x, squeezed = _as_batch(_lift(x)[0])
    r = int(factor)
    N, Cr, H, W = x.shape
    if Cr % (r * r):
        raise ShapeError(f"pixel_shuffle: {Cr} channels not divisible by {r * r}")
    C = Cr // (r * r)
    y = reshape(x, (N, C, r, r, H, W))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return _unbatch(reshape(y, (N, C, H * r, W * r)), squeezed)


# losses ----------------------------------------------------------------------

def binary_cross_entropy(prob, target, clip: float = 1e-7) -> Tensor:
    """Mean per-pixel BCE on probabilities, clipped to [clip, 1 - clip]."""
    prob, target = _lift(prob, target)
    if prob.shape != target.shape:
        raise ShapeError(f"binary_cross_entropy: prediction {prob.shape} vs target {target.shape}")
    p = np.clip(prob.data, clip, 1.0 - clip)
    t = target.data
    n = prob.size
    val = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    inside = (prob.data >= clip) & (prob.data <= 1.0 - clip)

    def bw(g):
        gp = g * (-(t / p) + (1.0 - t) / (1.0 - p)) / n * inside
        return gp.astype(prob.dtype, copy=False), None

    return make_result("bce", np.asarray(val, dtype=prob.dtype), (prob, target), bw)


def l1_distance(a, b, reduction: str = "sum") -> Tensor:
    """Sum (or mean) of |a - b| over all elements."""
    a, b = _lift(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance: shapes {a.shape} and {b.shape}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"l1_distance: unknown reduction {reduction!r}")
    diff = a.data - b.data
    denom = 1.0 if reduction == "sum" else float(a.size)
    val = np.abs(diff).sum() / denom
    sgn = np.sign(diff) / denom

    def bw(g):
        return (g * sgn if a.requires_grad else None), (-g * sgn if b.requires_grad else None)

    return make_result("l1", np.asarray(val, dtype=a.dtype), (a, b), bw)


def weighted_sum(terms: Sequence, weights: Sequence[float]) -> Tensor:
    terms = _lift(*terms)
    if len(terms) != len(weights):
        raise ShapeError(f"weighted_sum: {len(terms)} terms vs {len(weights)} weights")
    w = [float(v) for v in weights]
    out = terms[0].data * w[0]
    for t, wi in zip(terms[1:], w[1:]):
        if t.shape != terms[0].shape:
            raise ShapeError(f"weighted_sum: shapes {terms[0].shape} and {t.shape}")
        out = out + t.data * wi

    def bw(g):
        return tuple(g * wi for wi in w)

    return make_result("weighted_sum", np.asarray(out), terms, bw)


# dispatch ---------------------------------------------------------------------

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "power": power,
    "log": log,
    "exp": exp,
    "scale": scale,
    "matmul": matmul,
    "conv2d": conv2d,
    "pair_difference_conv": pair_difference_conv,
    "softmax": softmax,
    "sigmoid": sigmoid,
    "gelu": gelu,
    "relu": relu,
    "concat": concat,
    "global_avg_pool": global_avg_pool,
    "linear": linear,
    "layer_norm": layer_norm,
    "upsample_nearest": upsample_nearest,
    "pixel_shuffle": pixel_shuffle,
    "bce": binary_cross_entropy,
    "l1": l1_distance,
    "weighted_sum": weighted_sum,
    "sum": sum,
    "mean": mean,
    "reshape": reshape,
    "transpose": transpose,
}


def forward_primitives(inputs: Sequence, op_kind: str, attrs: dict | None = None) -> Tensor:
    """Run the primitive named ``op_kind`` on ``inputs`` with keyword ``attrs``."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown op_kind {op_kind!r}") from None
    attrs = attrs or {}
    if op_kind in ("concat", "weighted_sum"):
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)
