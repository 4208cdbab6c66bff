import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vidboot import autodiff as ad
from vidboot.autodiff import Tape, Tensor, finite_difference_grad
from vidboot.errors import ContractError, DomainError


def grad_of(fn, x):
    tape = Tape()
    t = tape.watch(x)
    out = fn(t)
    tape.backward(out)
    return t.grad


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def check(fn, x, tol=1e-6):
    g = grad_of(fn, x)
    fd = finite_difference_grad(lambda v: fn(Tensor(v)).item(), x)
    assert rel_err(g, fd) < tol


finite = arrays(np.float64, (3, 4), elements=st.floats(-3, 3, allow_nan=False))


@settings(max_examples=25, deadline=None)
@given(finite, finite)
def test_elementwise_binary_grads(a, b):
    b = np.where(np.abs(b) < 0.3, 0.7, b)
    for op in (ad.add, ad.sub, ad.mul, ad.div):
        check(lambda t: ad.tsum(ad.mul(op(t, b), np.arange(12.0).reshape(3, 4))), a)
        check(lambda t: ad.tsum(op(a + 5.0, t + 5.0)), b)


@settings(max_examples=25, deadline=None)
@given(finite)
def test_unary_grads(a):
    a = np.where(np.abs(a) < 1e-2, 0.5, a)  # keep away from the |x| and ELU kinks
    check(lambda t: ad.tsum(ad.square(t)), a)
    check(lambda t: ad.tsum(ad.texp(t)), a)
    check(lambda t: ad.tsum(ad.sigmoid(t)), a)
    check(lambda t: ad.tsum(ad.elu(t)), a)
    check(lambda t: ad.tsum(ad.tabs(t)), a)
    check(lambda t: ad.tsum(ad.tlog(ad.add(ad.tabs(t), 0.1))), a)
    check(lambda t: ad.tsum(ad.tsqrt(ad.add(ad.square(t), 1.0))), a)


def test_elu_values_match_definition():
    x = np.array([-2.0, -0.5, 0.0, 0.3, 4.0])
    np.testing.assert_allclose(ad.elu(Tensor(x)).data, np.where(x > 0, x, np.exp(x) - 1.0))


def test_log_of_nonpositive_is_domain_error():
    with pytest.raises(DomainError):
        ad.tlog(Tensor(np.array([1.0, 0.0])))


def test_reductions_and_reshapes(rng):
    x = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 3))
    check(lambda t: ad.tsum(ad.mul(ad.tmean(t, axis=2), np.ones((2, 3)) * 2.0)), x)
    check(lambda t: ad.tsum(ad.mul(ad.transpose(ad.tsum(t, axis=0)), w)), x)
    check(lambda t: ad.tsum(ad.square(ad.transpose(ad.reshape(t, (6, 4))))), x)
    check(lambda t: ad.tsum(ad.square(ad.getitem(t, (slice(None), 1, slice(1, 3))))), x)
    check(lambda t: ad.tsum(ad.square(ad.concat([t, ad.mul(t, 2.0)], axis=1))), x)
    check(lambda t: ad.tsum(ad.square(ad.stack([t, t], axis=0))), x)
    check(lambda t: ad.tsum(ad.square(ad.broadcast_to(ad.tsum(t, axis=0), (5, 3, 4)))), x)


def test_matmul_grad(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    check(lambda t: ad.tsum(ad.square(ad.matmul(t, b))), a)
    check(lambda t: ad.tsum(ad.square(ad.matmul(a, t))), b)


def naive_conv(x, k, b, pad):
    c, h, w = x.shape
    co, ci, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                out[o, i, j] = np.sum(xp[:, i : i + kh, j : j + kw] * k[o]) + b[o]
    return out


def test_conv2d_matches_loop_oracle(rng):
    x, k, b = rng.normal(size=(2, 6, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(k), 1, 1, Tensor(b)).data, naive_conv(x, k, b, 1), atol=1e-12)
    np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(k), 1, 0, Tensor(b)).data, naive_conv(x, k, b, 0), atol=1e-12)


def test_conv2d_grads(rng):
    x, k, b = rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    w = rng.normal(size=(3, 5, 5))
    check(lambda t: ad.tsum(ad.mul(ad.conv2d(t, k, 1, 1, b), w)), x)
    check(lambda t: ad.tsum(ad.mul(ad.conv2d(x, t, 1, 1, b), w)), k)
    check(lambda t: ad.tsum(ad.mul(ad.conv2d(x, k, 1, 1, t), w)), b)


def test_avg_pool_and_upsample(rng):
    x = rng.normal(size=(2, 4, 6))
    pooled = ad.avg_pool2x2(Tensor(x)).data
    np.testing.assert_allclose(pooled, x.reshape(2, 2, 2, 3, 2).mean(axis=(2, 4)))
    # Upsampling preserves a constant image.
    assert np.allclose(ad.upsample_bilinear_x2(Tensor(np.ones((1, 3, 3)))).data, 1.0)
    w = rng.normal(size=(2, 8, 12))
    check(lambda t: ad.tsum(ad.mul(ad.upsample_bilinear_x2(t), w)), x)
    check(lambda t: ad.tsum(ad.square(ad.avg_pool2x2(t))), x)
    check(lambda t: ad.tsum(ad.square(ad.box_filter3(t))), x)


def test_box_filter_is_valid_window_mean(rng):
    x = rng.normal(size=(1, 5, 6))
    out = ad.box_filter3(Tensor(x)).data
    assert out.shape == (1, 3, 4)
    assert np.isclose(out[0, 1, 2], x[0, 1:4, 2:5].mean())


def test_correlation_values_and_grads(rng):
    a, b = rng.normal(size=(3, 5, 6)), rng.normal(size=(3, 5, 6))
    out = ad.correlation(Tensor(a), Tensor(b), 1).data
    assert out.shape == (9, 5, 6)
    # displacement (dy, dx) = (1, -1) is channel (1+1)*3 + (-1+1) = 6
    assert np.isclose(out[6, 2, 3], np.mean(a[:, 2, 3] * b[:, 3, 2]))
    assert out[6, 4, 3] == 0.0  # shifted off the bottom edge: zero padding
    w = rng.normal(size=(9, 5, 6))
    check(lambda t: ad.tsum(ad.mul(ad.correlation(t, b, 1), w)), a)
    check(lambda t: ad.tsum(ad.mul(ad.correlation(a, t, 1), w)), b)


def test_softmax_and_log_softmax(rng):
    x = rng.normal(size=(4, 3, 2)) * 5
    s = ad.softmax_channels(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=0), 1.0)
    np.testing.assert_allclose(ad.log_softmax_channels(Tensor(x)).data, np.log(s), atol=1e-12)
    w = rng.normal(size=x.shape)
    check(lambda t: ad.tsum(ad.mul(ad.softmax_channels(t), w)), x)
    check(lambda t: ad.tsum(ad.mul(ad.log_softmax_channels(t), w)), x)


def test_where_and_clip_min(rng):
    x = rng.normal(size=(4, 4))
    m = x > 0
    check(lambda t: ad.tsum(ad.square(ad.where(m, t, ad.mul(t, 3.0)))), x)
    g = grad_of(lambda t: ad.tsum(ad.clip_min(t, 0.2)), np.array([0.1, 0.5]))
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_shared_subexpression_accumulates():
    g = grad_of(lambda t: ad.tsum(ad.mul(t, t)), np.array([3.0]))
    assert g[0] == 6.0


def test_unused_leaf_gets_zero_grad():
    tape = Tape()
    a, b = tape.watch(np.ones(3)), tape.watch(np.ones(2))
    tape.backward(ad.tsum(a))
    np.testing.assert_array_equal(b.grad, 0.0)


def test_tape_single_use():
    tape = Tape()
    a = tape.watch(np.ones(3))
    loss = ad.tsum(a)
    tape.backward(loss)
    with pytest.raises(ContractError):
        tape.backward(loss)


def test_mixing_tapes_is_rejected():
    a = Tape().watch(np.ones(2))
    b = Tape().watch(np.ones(2))
    with pytest.raises(ContractError):
        ad.add(a, b)


def test_constants_do_not_record():
    tape = Tape()
    out = ad.mul(Tensor(np.ones(3)), 2.0)
    assert not out.requires_grad and len(tape.nodes) == 0


def test_nonscalar_loss_rejected():
    tape = Tape()
    a = tape.watch(np.ones(3))
    with pytest.raises(ContractError):
        tape.backward(ad.mul(a, 2.0))


def test_shape_mismatch_rejected():
    with pytest.raises(ContractError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
