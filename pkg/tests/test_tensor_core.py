import numpy as np
import pytest

from pimforge.tensor import (AdamState, NonFiniteGradient, ShapeError, Tape, TapeError, Tensor, adam_step,
                             backward, forward_primitives, grad_check)
from pimforge.tensor import ops


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


class TestForward:
    def test_matmul_identity(self, rng):
        a = rng.normal(size=(3, 3))
        out = forward_primitives([np.eye(3), a], "matmul")
        np.testing.assert_array_equal(out.data, a)

    def test_softmax_symmetric(self):
        np.testing.assert_array_equal(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_softmax_empty_row_is_zero(self):
        out = ops.softmax(Tensor(np.ones((2, 3))), mask=np.array([[False] * 3, [True, True, False]]))
        np.testing.assert_array_equal(out.data[0], 0.0)
        np.testing.assert_allclose(out.data[1], [0.5, 0.5, 0.0])

    @pytest.mark.parametrize("c,kernel_sum", [(0.7, 1.0), (2.0, -0.3)])
    def test_conv_constant_interior(self, rng, c, kernel_sum):
        k = rng.normal(size=(1, 1, 3, 3))
        k *= kernel_sum / k.sum()
        out = ops.conv2d(Tensor(np.full((1, 1, 5, 5), c)), Tensor(k), padding="same")
        assert out.shape == (1, 1, 5, 5)
        np.testing.assert_allclose(out.data[0, 0, 1:-1, 1:-1], c * kernel_sum, rtol=1e-12)

    def test_conv_matches_direct_sum(self, rng):
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        out = ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 4, 4, 3))
        for i in range(4):
            for j in range(3):
                patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                ref[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown op_kind"):
            forward_primitives([Tensor([1.0])], "fft")

    def test_shape_error_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeError, match="add"):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_deterministic(self, rng):
        x = rng.normal(size=(1, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        a = ops.gelu(ops.conv2d(Tensor(x), Tensor(w))).data
        b = ops.gelu(ops.conv2d(Tensor(x), Tensor(w))).data
        assert a.tobytes() == b.tobytes()

    def test_no_recording_outside_tape(self):
        x = leaf([1.0, 2.0])
        y = ops.mul(x, x)
        assert y.is_leaf and not y.requires_grad

    def test_upsample_and_pool(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        up = ops.upsample_nearest(x, 2).data[0, 0]
        np.testing.assert_array_equal(up, [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])
        np.testing.assert_array_equal(ops.global_avg_pool(x).data, [[1.5]])


class TestBackward:
    def test_sum_gives_ones(self):
        x = leaf(np.zeros((2, 3, 4)))
        with Tape() as t:
            loss = ops.sum(x)
        backward(t, loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_square(self):
        x = leaf([1.0, 2.0, 3.0])
        with Tape() as t:
            loss = ops.sum(ops.mul(x, x))
        backward(t, loss)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss(self):
        x = leaf([1.0, 2.0])
        with Tape() as t:
            y = ops.mul(x, x)
        with pytest.raises(TapeError, match="scalar"):
            backward(t, y)

    def test_twice_without_reset(self):
        x = leaf([1.0, 2.0])
        with Tape() as t:
            loss = ops.sum(x)
        backward(t, loss)
        with pytest.raises(TapeError, match="already"):
            backward(t, loss)

    def test_non_participating_leaf_gets_zero(self):
        x, y = leaf([1.0]), leaf([[5.0, 6.0]])
        with Tape() as t:
            loss = ops.sum(x)
        backward(t, loss, params=[x, y])
        np.testing.assert_array_equal(y.grad, np.zeros((1, 2)))

    def test_tape_is_topological(self):
        x = leaf([0.5, -1.0])
        with Tape() as t:
            ops.sum(ops.sigmoid(ops.mul(ops.add(x, 1.0), x)))
        seen = set()
        for node in t.nodes:
            for inp in node.inputs:
                assert inp.is_leaf or id(inp._node) in seen
            seen.add(id(node))

    def test_concat_splits_exactly(self, rng):
        a, b = leaf(rng.normal(size=(1, 2, 3, 3))), leaf(rng.normal(size=(1, 3, 3, 3)))
        g = rng.normal(size=(1, 5, 3, 3))
        with Tape() as t:
            loss = ops.sum(ops.mul(ops.concat([a, b], axis=1), Tensor(g)))
        backward(t, loss)
        np.testing.assert_array_equal(a.grad, g[:, :2])
        np.testing.assert_array_equal(b.grad, g[:, 2:])


class TestGradCheck:
    def test_linear_map_exact(self, rng):
        w = Tensor(rng.normal(size=(4, 3)))
        assert grad_check(lambda x: ops.sum(ops.matmul(x, w)), leaf(rng.normal(size=(2, 4)))) <= 1e-9

    def test_softmax_cross_entropy(self, rng):
        target = Tensor(np.eye(5)[rng.integers(0, 5, size=3)])

        def f(x):
            p = ops.softmax(x)
            return ops.neg(ops.sum(ops.mul(target, ops.log(p))))

        assert grad_check(f, leaf(rng.normal(size=(3, 5)))) <= 1e-4

    def test_non_scalar_output(self, rng):
        with pytest.raises(TapeError):
            grad_check(lambda x: ops.mul(x, x), leaf(rng.normal(size=3)))


class TestAdam:
    def test_first_step(self):
        p = leaf(np.zeros(4))
        state = AdamState(learning_rate=1e-3, weight_decay=0.0)
        adam_step([p], [np.ones(4)], state)
        np.testing.assert_allclose(p.data, -1e-3 / (1 + 1e-8), rtol=1e-12)
        assert state.t == 1

    def test_zero_grad_no_decay_is_noop(self, rng):
        x = rng.normal(size=5)
        p = leaf(x.copy())
        adam_step([p], [np.zeros(5)], AdamState(weight_decay=0.0))
        assert p.data.tobytes() == x.tobytes()

    def test_lr_zero_bit_identical(self, rng):
        x = rng.normal(size=(3, 2))
        p = leaf(x.copy())
        state = AdamState(learning_rate=0.0)
        for _ in range(3):
            adam_step([p], [rng.normal(size=(3, 2))], state)
        assert p.data.tobytes() == x.tobytes()

    def test_decoupled_decay(self):
        p = leaf([2.0])
        adam_step([p], [np.zeros(1)], AdamState(learning_rate=0.1, weight_decay=0.5))
        np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0])

    def test_nan_aborts_without_change(self):
        p = leaf([1.0, 2.0])
        state = AdamState()
        with pytest.raises(NonFiniteGradient):
            adam_step([p], [np.array([np.nan, 0.0])], state)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        assert state.t == 0

    def test_quadratic_bowl(self):
        p = leaf([3.0])
        state = AdamState(learning_rate=1e-2, weight_decay=0.0)
        mags = []
        for _ in range(200):
            adam_step([p], [2 * p.data], state)
            mags.append(abs(p.data[0]))
        assert all(b < a for a, b in zip(mags[5:], mags[6:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            adam_step([leaf([1.0, 2.0])], [np.zeros(3)], AdamState())
