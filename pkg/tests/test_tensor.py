"""Autodiff primitives against float64 central-difference oracles."""

import numpy as np
import pytest

import oracles
from wscl import autodiff as ad
from wscl.autodiff import ParamGroup, SgdConfig, Tensor
from wscl.errors import GradientError, NumericError, ShapeError

H = 1e-3
TOL = 1e-3


def grad_of(build_loss, *arrays):
    """Autodiff gradients of a scalar loss w.r.t. each input array."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    ad.backward(loss)
    return [t.grad for t in tensors]


def away_from_zero(rng, shape, margin=0.05):
    """Values bounded away from 0 so relu kinks stay out of the h-window."""
    x = rng.uniform(margin, 1.0, size=shape)
    return (x * rng.choice([-1.0, 1.0], size=shape)).astype(np.float32)


def test_matmul_gradients(rng):
    a = rng.standard_normal((3, 4)).astype(np.float32)
    b = rng.standard_normal((4, 2)).astype(np.float32)
    ga, gb = grad_of(lambda x, y: ad.tsum(ad.matmul(x, y)), a, b)
    ref_a = oracles.central_diff(lambda v: oracles.matmul(v, b).sum(), a, H)
    ref_b = oracles.central_diff(lambda v: oracles.matmul(a, v).sum(), b, H)
    assert oracles.rel_error(ga, ref_a) < TOL
    assert oracles.rel_error(gb, ref_b) < TOL


def test_matmul_shape_errors(rng):
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


def test_add_and_mul_and_scale(rng):
    a = rng.standard_normal((2, 3)).astype(np.float32)
    b = rng.standard_normal((2, 3)).astype(np.float32)
    ga, gb = grad_of(lambda x, y: ad.tsum(ad.add(x, y)), a, b)
    assert np.allclose(ga, 1.0) and np.allclose(gb, 1.0)

    ga, gb = grad_of(lambda x, y: ad.tsum(ad.mul(x, y)), a, b)
    assert oracles.rel_error(ga, b) < TOL
    assert oracles.rel_error(gb, a) < TOL

    (ga,) = grad_of(lambda x: ad.tsum(ad.scale(x, -2.5)), a)
    assert np.allclose(ga, -2.5)

    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        ad.mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_operator_sugar(rng):
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    b = Tensor(np.full((2, 2), 2.0, dtype=np.float32), requires_grad=True)
    out = ad.tsum(2.0 * (a + b))
    assert out.item() == pytest.approx(24.0)
    ad.backward(out)
    assert np.allclose(a.grad, 2.0) and np.allclose(b.grad, 2.0)


def test_add_bias_gradients(rng):
    x = rng.standard_normal((4, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    gx, gb = grad_of(lambda u, v: ad.tsum(ad.add_bias(u, v)), x, b)
    assert np.allclose(gx, 1.0)
    assert np.allclose(gb, 4.0)   # batch axis collapses into the bias
    with pytest.raises(ShapeError):
        ad.add_bias(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))


def test_relu_gradients(rng):
    x = away_from_zero(rng, (3, 5))
    (gx,) = grad_of(lambda v: ad.tsum(ad.relu(v)), x)
    ref = oracles.central_diff(lambda v: oracles.relu(v).sum(), x, H)
    assert oracles.rel_error(gx, ref) < TOL


def test_reshape_and_tsum(rng):
    x = rng.standard_normal((2, 6)).astype(np.float32)
    (gx,) = grad_of(lambda v: ad.tsum(ad.reshape(v, (3, 4))), x)
    assert gx.shape == (2, 6) and np.allclose(gx, 1.0)
    total = ad.tsum(Tensor(x)).item()
    assert total == pytest.approx(float(x.sum(dtype=np.float64)), rel=1e-6)


def test_conv2d_gradients(rng):
    x = rng.standard_normal((2, 2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32) * 0.5
    b = rng.standard_normal(3).astype(np.float32)
    gx, gw, gb = grad_of(lambda u, v, c: ad.tsum(ad.conv2d(u, v, c)), x, w, b)
    ref_x = oracles.central_diff(lambda v: oracles.conv2d(v, w, b).sum(), x, H)
    ref_w = oracles.central_diff(lambda v: oracles.conv2d(x, v, b).sum(), w, H)
    ref_b = oracles.central_diff(lambda v: oracles.conv2d(x, w, v).sum(), b, H)
    assert oracles.rel_error(gx, ref_x) < TOL
    assert oracles.rel_error(gw, ref_w) < TOL
    assert oracles.rel_error(gb, ref_b) < TOL


def test_conv2d_shape_errors():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((2, 3, 5, 5))), Tensor(np.zeros((4, 2, 3, 3))),
                  Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(np.zeros((4, 2, 3, 3))),
                  Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):   # kernel larger than padded input
        ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 7, 7))),
                  Tensor(np.zeros(1)), padding=1)


def test_avg_pool2d_forward_and_gradients(rng):
    x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    out = ad.avg_pool2d(Tensor(x), 2)
    assert out.data.shape == (2, 3, 2, 2)   # trailing row/col dropped
    assert np.allclose(out.data, oracles.avg_pool2d(x, 2), atol=1e-6)
    (gx,) = grad_of(lambda v: ad.tsum(ad.avg_pool2d(v, 2)), x)
    ref = oracles.central_diff(lambda v: oracles.avg_pool2d(v, 2).sum(), x, H)
    assert oracles.rel_error(gx, ref) < TOL
    with pytest.raises(ShapeError):
        ad.avg_pool2d(Tensor(np.zeros((1, 1, 1, 1))), 2)


def test_softmax_cross_entropy_matches_oracle(rng):
    logits = rng.standard_normal((6, 5)).astype(np.float32)
    labels = rng.integers(0, 5, size=6)
    loss = ad.softmax_cross_entropy(Tensor(logits), labels)
    assert loss.item() == pytest.approx(
        oracles.softmax_cross_entropy(logits, labels), rel=1e-5)
    (g,) = grad_of(lambda z: ad.softmax_cross_entropy(z, labels), logits)
    ref = oracles.central_diff(
        lambda z: oracles.softmax_cross_entropy(z, labels), logits, H)
    assert oracles.rel_error(g, ref) < TOL


def test_softmax_cross_entropy_class_mask(rng):
    logits = rng.standard_normal((4, 6)).astype(np.float32)
    labels = np.array([0, 1, 1, 0])
    mask = np.array([True, True, False, False, True, False])
    loss = ad.softmax_cross_entropy(Tensor(logits), labels, class_mask=mask)
    assert loss.item() == pytest.approx(
        oracles.softmax_cross_entropy(logits, labels, mask), rel=1e-5)
    (g,) = grad_of(lambda z: ad.softmax_cross_entropy(z, labels, class_mask=mask),
                   logits)
    assert np.allclose(g[:, ~mask], 0.0)   # masked classes get no gradient
    ref = oracles.central_diff(
        lambda z: oracles.softmax_cross_entropy(z, labels, mask), logits, H)
    assert oracles.rel_error(g[:, mask], ref[:, mask]) < TOL


def test_softmax_cross_entropy_validation():
    z = Tensor(np.zeros((2, 3), dtype=np.float32))
    with pytest.raises(ShapeError):
        ad.softmax_cross_entropy(z, np.array([0]))
    with pytest.raises(ShapeError):
        ad.softmax_cross_entropy(z, np.array([0, 3]))
    with pytest.raises(ShapeError):
        ad.softmax_cross_entropy(z, np.array([0, -1]))
    with pytest.raises(ShapeError):
        ad.softmax_cross_entropy(z, np.array([0, 1]),
                                 class_mask=np.array([False, False, False]))
    with pytest.raises(ShapeError):   # mask removes a label's class
        ad.softmax_cross_entropy(z, np.array([0, 1]),
                                 class_mask=np.array([True, False, True]))
    with pytest.raises(ShapeError):
        ad.softmax_cross_entropy(Tensor(np.zeros((2, 3, 1))), np.array([0, 1]))


def test_mse_logits_gradients(rng):
    logits = rng.standard_normal((3, 4)).astype(np.float32)
    stored = rng.standard_normal((3, 4)).astype(np.float32)
    loss = ad.mse_logits(Tensor(logits), stored)
    assert loss.item() == pytest.approx(oracles.mse(logits, stored), rel=1e-5)
    (g,) = grad_of(lambda z: ad.mse_logits(z, stored), logits)
    ref = oracles.central_diff(lambda z: oracles.mse(z, stored), logits, H)
    assert oracles.rel_error(g, ref) < TOL
    with pytest.raises(ShapeError):
        ad.mse_logits(Tensor(np.zeros((2, 3))), np.zeros((3, 2)))


def test_backward_requires_scalar():
    with pytest.raises(GradientError):
        ad.backward(Tensor(np.zeros(3), requires_grad=True))


def test_backward_accumulates_until_cleared(rng):
    x = Tensor(rng.standard_normal((2, 2)).astype(np.float32), requires_grad=True)
    loss = ad.tsum(ad.scale(x, 3.0))
    ad.backward(loss)
    first = x.grad.copy()
    loss2 = ad.tsum(ad.scale(x, 3.0))
    ad.backward(loss2)
    assert np.allclose(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_gradient(rng):
    # y = sum(x*x + x*x) must push 4x back to the shared leaf
    x = Tensor(rng.standard_normal((3,)).astype(np.float32) + 2.0,
               requires_grad=True)
    prod = ad.mul(x, x)
    loss = ad.tsum(ad.add(prod, prod))
    ad.backward(loss)
    assert oracles.rel_error(x.grad, 4.0 * x.data) < TOL


def test_parameter_rejects_non_finite():
    with pytest.raises(NumericError):
        ad.parameter(np.array([1.0, np.inf]))


def test_sgd_step_plain_and_momentum():
    t = ad.parameter(np.array([1.0, 2.0], dtype=np.float32))
    group = ParamGroup(1, [t])
    t.grad = np.array([0.5, -0.5], dtype=np.float32)
    n = ad.sgd_step([group], SgdConfig(0.1, 0.0))
    assert n == 2
    assert np.allclose(t.data, [0.95, 2.05])

    m = ad.parameter(np.array([1.0], dtype=np.float32))
    mg = ParamGroup(2, [m])
    m.grad = np.array([1.0], dtype=np.float32)
    ad.sgd_step([mg], SgdConfig(0.1, 0.9))       # v=1,   x=0.9
    m.grad = np.array([1.0], dtype=np.float32)
    ad.sgd_step([mg], SgdConfig(0.1, 0.9))       # v=1.9, x=0.71
    assert m.data[0] == pytest.approx(0.71, abs=1e-6)


def test_sgd_step_skips_frozen_and_validates():
    frozen = ad.parameter(np.array([1.0], dtype=np.float32))
    fg = ParamGroup(1, [frozen])
    fg.set_frozen(True)
    assert ad.sgd_step([fg], SgdConfig(0.1)) == 0
    assert frozen.data[0] == 1.0 and not frozen.requires_grad

    missing = ad.parameter(np.array([1.0], dtype=np.float32))
    with pytest.raises(GradientError):
        ad.sgd_step([ParamGroup(2, [missing])], SgdConfig(0.1))

    bad = ad.parameter(np.array([1.0], dtype=np.float32))
    bad.grad = np.array([np.nan], dtype=np.float32)
    with pytest.raises(NumericError):
        ad.sgd_step([ParamGroup(3, [bad])], SgdConfig(0.1))


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(0.0)
    with pytest.raises(ValueError):
        SgdConfig(0.1, -0.1)


def test_item_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor(np.zeros(2)).item()
