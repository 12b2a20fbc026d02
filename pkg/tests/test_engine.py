import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdsp.engine import (
    SGD,
    DimensionError,
    DomainError,
    GraphError,
    MissingGradError,
    OptimizerState,
    Tape,
    Tensor,
    no_grad,
    ops,
    ordered_summation,
    sgd_step,
)
from cdsp.engine.gradcheck import check_gradients, numeric_grads


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = a.dtype.type(0)
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def naive_conv(x, w, b, stride=1, pad=0):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for y in range(oh):
            for xx in range(ow):
                out[oc, y, xx] = (xp[:, y * stride : y * stride + kh, xx * stride : xx * stride + kw] * w[oc]).sum() + b[oc]
    return out


# -- matmul ---------------------------------------------------------------


def test_matmul_identity_and_zero():
    a = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal(ops.matmul(t64(np.eye(3)), t64(a)).data, a)
    z = ops.matmul(t64(np.zeros((2, 3))), t64(np.random.default_rng(1).normal(size=(3, 4))))
    assert z.shape == (2, 4) and not z.data.any()


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(2)
    a, b = rng.random((3, 3)), rng.random((3, 3))
    np.testing.assert_allclose(ops.matmul(t64(a), t64(b)).data, naive_matmul(a, b), rtol=1e-6)
    with ordered_summation():
        assert np.array_equal(ops.matmul(t64(a), t64(b)).data, naive_matmul(a, b))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(t64(np.ones((2, 3))), t64(np.ones((4, 5))))


# -- elementwise ------------------------------------------------------------


def test_relu_add_identity():
    assert ops.relu(t64([-1, 0, 2])).data.tolist() == [0, 0, 2]
    x = np.random.default_rng(3).normal(size=(4,))
    assert np.array_equal(ops.add(t64(x), t64(np.zeros(4))).data, x)


def test_exp_log_round_trip():
    x = np.linspace(0.1, 10, 50)
    np.testing.assert_allclose(ops.exp(ops.log(t64(x))).data, x, rtol=1e-6)


def test_log_domain_and_guard():
    with pytest.raises(DomainError):
        ops.log(t64([1.0, 0.0]))
    y = ops.log(t64([0.0, 1.0]), eps=1e-12)
    assert y.data[0] == pytest.approx(np.log(1e-12))


def test_broadcast_mismatch():
    with pytest.raises(DimensionError):
        ops.add(t64(np.ones((2, 3))), t64(np.ones((4,))))


def test_elementwise_dispatch():
    assert ops.elementwise("scale", t64([1.0, 2.0]), 3.0).data.tolist() == [3.0, 6.0]
    with pytest.raises(ValueError):
        ops.elementwise("tanh", t64([1.0]))


# -- softmax / l2 -------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax(t64(np.full(5, 2.3))).data, np.full(5, 0.2))
    np.testing.assert_allclose(ops.softmax(t64([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-50, 50)), st.integers(0, 1))
def test_softmax_normalised(x, axis):
    y = ops.softmax(t64(x), axis=axis).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=axis), 1.0, atol=1e-6)


def test_l2_normalize_examples():
    np.testing.assert_allclose(ops.l2_normalize(t64([3.0, 4.0]), axis=0).data, [0.6, 0.8])
    assert not ops.l2_normalize(t64(np.zeros(3)), axis=0).data.any()


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=st.floats(-10, 10)))
def test_l2_normalize_unit_norm(x):
    y = ops.l2_normalize(t64(x), axis=0).data
    norms = np.linalg.norm(x, axis=0)
    live = norms > 1e-6
    np.testing.assert_allclose(np.linalg.norm(y, axis=0)[live], 1.0, atol=1e-6)


# -- conv2d -----------------------------------------------------------------------


def test_conv_identity_kernel_and_zero_input():
    x = np.random.default_rng(4).normal(size=(1, 5, 5))
    out = ops.conv2d(t64(x), t64(np.ones((1, 1, 1, 1))), t64(np.zeros(1)))
    assert np.array_equal(out.data, x)
    b = np.array([0.5, -2.0])
    out = ops.conv2d(t64(np.zeros((1, 4, 4))), t64(np.ones((2, 1, 3, 3))), t64(b), pad=1)
    assert np.array_equal(out.data, np.broadcast_to(b[:, None, None], (2, 4, 4)))


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(5)
    x, w, b = rng.normal(size=(1, 5, 5)), rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2)
    got = ops.conv2d(t64(x), t64(w), t64(b), stride=stride, pad=pad).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad), rtol=1e-6, atol=1e-12)


def test_conv_ordered_mode_matches_default_closely():
    rng = np.random.default_rng(6)
    x, w = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, 3, 3))
    fast = ops.conv2d(t64(x), t64(w), pad=1).data
    with ordered_summation():
        slow = ops.conv2d(t64(x), t64(w), pad=1).data
    np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv2d(t64(np.ones((2, 4, 4))), t64(np.ones((1, 3, 3, 3))))


# -- reductions / upsample --------------------------------------------------------


def test_reductions():
    x = np.random.default_rng(7).normal(size=(3, 4))
    assert ops.mse(t64(x), t64(x)).item() == 0
    assert ops.mse(t64([0.0, 0.0]), t64([1.0, 1.0])).item() == 1.0
    np.testing.assert_allclose(ops.global_avg_pool(t64(np.full((2, 3, 3), 1.5))).data, [1.5, 1.5])
    with pytest.raises(DimensionError):
        ops.mse(t64(np.ones(2)), t64(np.ones(3)))


def test_upsample():
    x = np.random.default_rng(8).normal(size=(2, 3, 3))
    assert np.array_equal(ops.upsample_nearest(t64(x), 1).data, x)
    assert np.array_equal(ops.upsample_nearest(t64([[[7.0]]]), 2).data, np.full((1, 2, 2), 7.0))
    with pytest.raises(ValueError):
        ops.upsample_nearest(t64(x), 0)


def test_upsample_grad_is_factor_squared():
    x = np.random.default_rng(9).normal(size=(1, 2, 2))
    fn = lambda t: ops.sum(ops.upsample_nearest(t, 3))  # noqa: E731
    np.testing.assert_allclose(numeric_grads(fn, [x])[0], np.full(x.shape, 9.0), rtol=1e-6)
    with Tape() as tape:
        xt = t64(x, grad=True)
        tape.backward(fn(xt))
    assert np.array_equal(xt.grad, np.full(x.shape, 9.0))


# -- tape semantics ----------------------------------------------------------------


def test_backward_sum_gives_ones():
    with Tape() as tape:
        x = t64(np.random.default_rng(10).normal(size=(3, 2)), grad=True)
        tape.backward(ops.sum(x))
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_mse_matches_finite_differences():
    c = np.random.default_rng(11).normal(size=(4,))
    assert check_gradients(lambda x: ops.mse(x, Tensor(c)), [np.random.default_rng(12).normal(size=(4,))]) < 1e-4


def test_backward_without_requires_grad_allocates_nothing():
    x = t64([1.0, 2.0])
    with Tape() as tape:
        tape.backward(ops.sum(ops.mul(x, x)))
    assert x.grad is None


def test_backward_rejects_non_scalar_and_replay():
    with Tape() as tape:
        x = t64([1.0, 2.0], grad=True)
        y = ops.mul(x, x)
        with pytest.raises(GraphError):
            tape.backward(y)
        loss = ops.sum(y)
        tape.backward(loss)
        with pytest.raises(GraphError, match="already consumed"):
            tape.backward(loss)


def test_backward_rejects_foreign_tape():
    outer = Tape()
    with outer:
        x = t64([1.0], grad=True)
        loss = ops.sum(ops.mul(x, x))
    with Tape() as other:
        with pytest.raises(GraphError):
            other.backward(loss)


def test_reverse_order_accumulates_shared_subexpression():
    with Tape() as tape:
        x = t64([2.0], grad=True)
        y = ops.mul(x, x)
        tape.backward(ops.sum(ops.add(y, ops.scale(y, 3.0))))
    assert x.grad.tolist() == [16.0]  # d/dx 4x^2


def test_no_grad_records_nothing():
    with Tape() as tape:
        x = t64([1.0], grad=True)
        with no_grad():
            y = ops.mul(x, x)
        assert len(tape) == 0 and not y.requires_grad


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(13)
        with Tape() as tape:
            x = t64(rng.normal(size=(2, 3, 5, 5)), grad=True)
            w = t64(rng.normal(size=(4, 3, 3, 3)), grad=True)
            loss = ops.sum(ops.softmax(ops.conv2d(x, w, pad=1), axis=1))
            tape.backward(ops.mse(ops.conv2d(x, w, pad=1), Tensor(np.zeros((2, 4, 5, 5)))))
        return loss.data.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_float32_default_dtype():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64


# -- optimizer ----------------------------------------------------------------------


def _param(v, g):
    p = Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
    p.grad = np.asarray(g, dtype=np.float64)
    return p


def test_sgd_lr_zero_is_noop():
    p = _param([1.0, -2.0], [5.0, 5.0])
    sgd_step([p], OptimizerState(lr=0.0))
    assert p.data.tolist() == [1.0, -2.0]


def test_sgd_vanilla():
    p = _param([1.0, -2.0], [0.5, 1.0])
    sgd_step([p], OptimizerState(lr=0.1, momentum=0.0, weight_decay=0.0))
    np.testing.assert_allclose(p.data, [0.95, -2.1])


def test_sgd_two_momentum_steps_hand_recurrence():
    p = _param([1.0], [0.0])
    opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.01)
    grads = [0.5, -0.2]
    v, w = 0.0, 1.0
    for g in grads:
        p.grad = np.array([g])
        opt.step()
        v = 0.9 * v + g + 0.01 * w
        w = w - 0.1 * v
    assert p.data[0] == pytest.approx(w, abs=1e-15)
    assert opt.state.buffers[0].shape == p.shape


def test_sgd_missing_grad():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(MissingGradError):
        SGD([p], lr=0.1).step()


def test_scalar_results_keep_f64():
    x = Tensor(np.array([0.25, 0.5]), dtype=np.float64)
    assert ops.scale(ops.sum(x), 3.0).dtype == np.float64
    assert ops.mean(ops.mul(x, x)).dtype == np.float64
