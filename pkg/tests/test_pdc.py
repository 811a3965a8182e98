import numpy as np
import pytest

from pimforge.fusion import lwm_fuse
from pimforge.pdc import (RPDC_OUTER, RPDC_PAIRS, CpdcKernel, PdcHead, RpdcKernel, cpdc_forward,
                          pdc_head_forward, rpdc_forward)
from pimforge.tensor import ShapeError, Tape, Tensor, backward
from pimforge.tensor import ops


def conv_same(x, k):
    """Plain loop cross-correlation with zero padding, N x C x H x W by O x C x kh x kw."""
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, o, h, w))
    for y in range(h):
        for x_ in range(w):
            out[:, :, y, x_] = np.einsum("ncij,ocij->no", xp[:, :, y:y + kh, x_:x_ + kw], k)
    return out


def test_pair_table_shape():
    assert len(RPDC_PAIRS) == 16
    assert sorted(RPDC_OUTER) == sorted((dy, dx) for dy in range(-2, 3) for dx in range(-2, 3)
                                        if max(abs(dy), abs(dx)) == 2)
    for (oy, ox), (iy, ix) in RPDC_PAIRS:
        assert max(abs(iy), abs(ix)) == 1
        assert max(abs(oy - iy), abs(ox - ix)) == 1


@pytest.mark.parametrize("value", [0.0, 1.0, -3.5])
def test_constant_input_zero_response(value):
    rng = np.random.default_rng(0)
    x = np.full((1, 2, 7, 7), value)
    c = CpdcKernel.init(rng, 2, 3)
    r = RpdcKernel.init(rng, 2, 3)
    # zero padding makes the border see a step, so only the interior is exactly zero
    assert np.array_equal(cpdc_forward(Tensor(x), c).data[..., 1:-1, 1:-1], np.zeros((1, 3, 5, 5)))
    assert np.array_equal(rpdc_forward(Tensor(x), r).data[..., 2:-2, 2:-2], np.zeros((1, 3, 3, 3)))


def test_cpdc_hand_example():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    k = np.zeros((3, 3))
    k[0, 0] = 1.0
    out = cpdc_forward(Tensor(x), CpdcKernel.from_3x3(k)).data
    assert out[0, 0, 1, 1] == -4.0


def test_cpdc_equals_reparameterized_conv():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(size=(1, 2, 6, 5))
        k = CpdcKernel.init(rng, 2, 3)
        got = cpdc_forward(Tensor(x), k).data
        np.testing.assert_allclose(got, conv_same(x, k.reparameterized()), rtol=0, atol=1e-10)


def test_rpdc_single_corner_pair():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 1, 9, 9))
    w = np.zeros((1, 1, 16))
    w[0, 0, RPDC_PAIRS.index(((-2, -2), (-1, -1)))] = 1.0
    out = rpdc_forward(Tensor(x), RpdcKernel(w)).data[0, 0]
    for y in range(2, 9):
        for x_ in range(2, 9):
            assert out[y, x_] == x[0, 0, y - 2, x_ - 2] - x[0, 0, y - 1, x_ - 1]


def test_rpdc_translation_equivariance_interior():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 12, 12))
    k = RpdcKernel.init(rng, 2, 2)
    a = rpdc_forward(Tensor(x), k).data
    b = rpdc_forward(Tensor(np.roll(x, (1, 2), axis=(2, 3))), k).data
    assert np.array_equal(np.roll(a, (1, 2), axis=(2, 3))[..., 5:-5, 5:-5], b[..., 5:-5, 5:-5])


def test_high_pass_constant_plus_impulse():
    rng = np.random.default_rng(4)
    imp = np.zeros((1, 1, 11, 11))
    imp[0, 0, 5, 5] = 2.0
    c = CpdcKernel.init(rng, 1, 2)
    r = RpdcKernel.init(rng, 1, 2)
    for fwd, k, m in ((cpdc_forward, c, 1), (rpdc_forward, r, 2)):
        a = fwd(Tensor(imp + 0.7), k).data[..., m:-m, m:-m]
        b = fwd(Tensor(imp), k).data[..., m:-m, m:-m]
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_kernel_type_checks():
    with pytest.raises(ShapeError):
        CpdcKernel(np.zeros((1, 1, 9)))
    with pytest.raises(ShapeError):
        RpdcKernel(np.zeros((1, 1, 8)))
    with pytest.raises(ShapeError):
        cpdc_forward(Tensor(np.zeros((1, 1, 5, 5))), RpdcKernel(np.zeros((1, 1, 16))))
    with pytest.raises(ShapeError):
        CpdcKernel.from_3x3(np.zeros((5, 5)))


def test_head_shape_and_constant_input():
    rng = np.random.default_rng(5)
    head = PdcHead(rng, 3, 4)
    f = np.full((2, 3, 9, 9), 0.3)
    out = pdc_head_forward(Tensor(f), head).data
    assert out.shape == (2, 4, 9, 9)
    zero = lwm_fuse(Tensor(np.zeros((2, 4, 5, 5))), Tensor(np.zeros((2, 4, 5, 5))), head.lwm).data
    # interior pixels see both branches at exactly zero; the projection bias is all that is left
    np.testing.assert_array_equal(out[..., 2:-2, 2:-2], zero)


def test_head_gradients_reach_both_branches():
    rng = np.random.default_rng(6)
    head = PdcHead(rng, 2, 3)
    x = Tensor(rng.normal(size=(1, 2, 8, 8)))
    with Tape() as tape:
        loss = ops.sum(ops.mul(pdc_head_forward(x, head), Tensor(rng.normal(size=(1, 3, 8, 8)))))
    backward(tape, loss, params=head.parameters())
    assert np.abs(head.cpdc.weight.grad).min() > 0
    assert np.abs(head.rpdc.weight.grad).min() > 0
