import threading

import numpy as np
import pytest

from scet import tensor as T
from scet.gradcheck import grad_check
from scet.tensor import NonFiniteError, Tape, Tensor, backward, concat, no_grad, precision


def leaf(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=True)


class TestConstruction:
    def test_scalar_promoted_to_rank_one(self):
        t = Tensor(3.0)
        assert t.shape == (1,)
        assert t.item() == 3.0

    def test_rank_five_rejected(self):
        with pytest.raises(ValueError, match="rank"):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_default_precision_is_32_bit(self):
        assert Tensor([1, 2]).dtype == np.float32

    def test_precision_context(self):
        with precision(np.float64):
            assert Tensor([1, 2]).dtype == np.float64
        assert Tensor([1, 2]).dtype == np.float32

    def test_float64_array_keeps_dtype(self):
        assert Tensor(np.zeros(3)).dtype == np.float64

    def test_data_is_contiguous_copy_safe(self):
        base = np.arange(12.0).reshape(3, 4).T
        t = Tensor(base)
        assert t.data.flags.c_contiguous
        assert t.data.size == np.prod(t.shape)

    def test_nonfinite_input_is_allowed_but_ops_reject_it(self):
        t = Tensor(np.array([1.0, np.inf]))
        with pytest.raises(NonFiniteError):
            t + 1.0

    def test_precision_rejects_other_types(self):
        with pytest.raises(ValueError):
            with precision(np.int32):
                pass


class TestBackward:
    def test_sum_gives_ones(self):
        x = leaf(np.random.default_rng(0).standard_normal((2, 3)))
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_gives_two_x(self):
        xv = np.random.default_rng(1).standard_normal((3, 4))
        x = leaf(xv)
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 2 * xv, rtol=0, atol=1e-15)

    def test_non_scalar_rejected(self):
        x = leaf(np.ones(3))
        with pytest.raises(ValueError, match="single-element"):
            backward(x * 2.0)

    def test_repeated_calls_accumulate(self):
        x = leaf([1.0, 2.0])
        loss = (x * 3.0).sum()
        backward(loss)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_zero_grad_resets(self):
        x = leaf([1.0])
        backward((x * 2.0).sum())
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression_counted_once_per_use(self):
        x = leaf([2.0])
        y = x * x          # used twice below
        backward((y + y * 3.0).sum())
        # d/dx (4 x^2) = 8x
        np.testing.assert_allclose(x.grad, [16.0])

    def test_intermediates_have_no_grad(self):
        x = leaf([1.0, 2.0])
        y = x * 2.0
        backward(y.sum())
        assert y.grad is None

    def test_broadcast_gradient_reduced(self):
        x = leaf(np.ones((2, 3)))
        b = leaf(np.ones((1, 3)))
        backward((x * b).sum())
        np.testing.assert_array_equal(b.grad, [[2.0, 2.0, 2.0]])

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y.is_leaf

    def test_no_grad_is_thread_local(self):
        seen = {}

        def worker():
            seen["other"] = T.is_grad_enabled()

        with no_grad():
            th = threading.Thread(target=worker)
            th.start()
            th.join()
            assert not T.is_grad_enabled()
        assert seen["other"] is True

    def test_backward_without_graph_is_noop(self):
        x = Tensor([1.0])
        backward(x.sum())
        assert x.grad is None

    def test_explicit_seed_gradient(self):
        x = leaf([1.0, 2.0])
        y = x * 3.0
        backward(y, grad=np.array([1.0, 10.0]))
        np.testing.assert_array_equal(x.grad, [3.0, 30.0])


class TestTape:
    def test_order_is_topological(self):
        x = leaf([1.0])
        a = x * 2.0
        b = a + x
        c = b * a
        tape = Tape(c)
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]

    def test_each_node_once(self):
        x = leaf([1.0])
        y = x
        for _ in range(50):
            y = y + y
        tape = Tape(y)
        assert len(tape) == len({id(n) for n in tape.nodes}) == 51

    def test_deep_chain_does_not_recurse(self):
        x = leaf([1.0])
        y = x
        for _ in range(5000):
            y = y * 1.0
        backward(y.sum())
        assert x.grad[0] == 1.0


class TestElementwise:
    def test_division_and_reflected_ops(self, f64):
        x = leaf([2.0, 4.0])
        y = (1.0 - x) / x + 3.0 / x
        np.testing.assert_allclose(y.data, [1.0, 0.0])
        backward(y.sum())
        # d/dx ((1 - x)/x + 3/x) = -4/x^2
        np.testing.assert_allclose(x.grad, [-1.0, -0.25])

    def test_division_gradient_with_tiny_divisor_float32(self):
        a = Tensor(np.array([1e-20], dtype=np.float32), requires_grad=True)
        b = Tensor(np.array([1e-20], dtype=np.float32), requires_grad=True)
        backward((a / b).sum())
        assert np.isfinite(b.grad).all()
        assert b.grad[0] == pytest.approx(-1e20, rel=1e-5)

    def test_concat_splits_gradient(self):
        a = leaf(np.ones((1, 2, 2, 2)))
        b = leaf(np.ones((1, 3, 2, 2)))
        c = concat([a, b], axis=1)
        assert c.shape == (1, 5, 2, 2)
        w = Tensor(np.arange(20.0).reshape(1, 5, 2, 2))
        backward((c * w).sum())
        np.testing.assert_array_equal(a.grad, w.data[:, :2])
        np.testing.assert_array_equal(b.grad, w.data[:, 2:])

    def test_transpose_property_swaps_last_two(self):
        x = Tensor(np.arange(24.0).reshape(2, 3, 4))
        assert x.T.shape == (2, 4, 3)
        np.testing.assert_array_equal(x.T.data, np.swapaxes(x.data, -1, -2))

    def test_mean_and_abs(self):
        x = leaf([-1.0, 3.0])
        m = x.abs().mean()
        assert m.item() == 2.0
        backward(m)
        np.testing.assert_array_equal(x.grad, [-0.5, 0.5])

    @pytest.mark.parametrize("axis", [None, 0, 1, (0, 2)])
    def test_reductions_gradcheck(self, f64, axis):
        x = leaf(np.random.default_rng(2).standard_normal((2, 3, 4)))
        assert grad_check(lambda t: t.sum(axis=axis), [x]) < 1e-8
        assert grad_check(lambda t: t.mean(axis=axis, keepdims=True), [x]) < 1e-8

    def test_reshape_transpose_gradcheck(self, f64):
        x = leaf(np.random.default_rng(3).standard_normal((2, 3, 4)))
        assert grad_check(lambda t: t.reshape(6, 4).transpose(1, 0) * 2.0, [x]) < 1e-8
