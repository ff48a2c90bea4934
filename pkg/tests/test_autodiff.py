"""Central-difference checks for every autodiff op, plus structural tests."""

import numpy as np
import pytest

from xmodal import autodiff as ad


def _fd_check(build, arrays, eps=1e-6, tol=1e-6, max_coords=24, seed=0):
    """Compare backprop against central differences on random coordinates.

    build(list_of_tensors) must return a scalar Tensor and be pure.
    """
    tensors = [ad.parameter(a.copy()) for a in arrays]
    out = build(tensors)
    ad.backward(out)
    rng = np.random.default_rng(seed)
    for k, base in enumerate(arrays):
        grad = tensors[k].grad
        assert grad is not None and grad.shape == base.shape
        count = min(max_coords, base.size)
        for idx in rng.choice(base.size, size=count, replace=False):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k].flat[idx] += eps
            minus[k].flat[idx] -= eps
            up = build([ad.constant(a) for a in plus]).item()
            dn = build([ad.constant(a) for a in minus]).item()
            numeric = (up - dn) / (2 * eps)
            analytic = grad.flat[idx]
            assert abs(analytic - numeric) <= tol * max(1.0, abs(analytic)), (
                k,
                idx,
                analytic,
                numeric,
            )


def test_add_mul_broadcast():
    rng = np.random.default_rng(1)
    a, b, c = rng.standard_normal((3, 4)), rng.standard_normal((1, 4)), rng.standard_normal(4)
    _fd_check(
        lambda ts: ad.tsum(ad.mul(ad.add(ts[0], ts[1]), ts[2])),
        [a, b, c],
    )


def test_sub_neg_scale_square():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((5,)), rng.standard_normal((5,))
    _fd_check(
        lambda ts: ad.tsum(ad.square(ad.sub(ad.scale(ts[0], 1.7), ad.neg(ts[1])))),
        [a, b],
    )


def test_activations():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 5))
    for fn in (ad.texp, ad.ttanh, ad.sigmoid, ad.elu):
        _fd_check(lambda ts, fn=fn: ad.tsum(fn(ts[0])), [x * 0.5])


def test_matmul_linear():
    rng = np.random.default_rng(4)
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    _fd_check(lambda ts: ad.tsum(ad.square(ad.linear(ts[0], ts[1], ts[2]))), [x, w, b])


def test_sum_axis_variants():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4, 2))
    _fd_check(lambda ts: ad.tsum(ad.square(ad.tsum(ts[0], axis=1))), [x])
    _fd_check(lambda ts: ad.tsum(ad.square(ad.tsum(ts[0], axis=(0, 2)))), [x])
    _fd_check(
        lambda ts: ad.tsum(ad.square(ad.tsum(ts[0], axis=2, keepdims=True))), [x]
    )


def test_reshape_concat_getitem_tile():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 2))

    def build(ts):
        cat = ad.concat([ts[0], ts[1]], axis=1)  # (2, 5)
        piece = ad.getitem(cat, (slice(None), slice(1, 4)))
        tiled = ad.tile_leading(piece, 3)  # (6, 3)
        strided = ad.getitem(tiled, (slice(0, None, 3),))
        return ad.tsum(ad.square(ad.reshape(strided, (6,))))

    _fd_check(build, [a, b])


def test_conv2d_gradients():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 6, 6, 3))
    w = rng.standard_normal((4, 4, 3, 5)) * 0.3
    b = rng.standard_normal(5) * 0.1
    _fd_check(
        lambda ts: ad.tsum(ad.square(ad.conv2d(ts[0], ts[1], ts[2], stride=2, pad=1))),
        [x, w, b],
        max_coords=16,
    )
    w3 = rng.standard_normal((3, 3, 3, 2)) * 0.3
    b3 = rng.standard_normal(2) * 0.1
    _fd_check(
        lambda ts: ad.tsum(ad.square(ad.conv2d(ts[0], ts[1], ts[2], stride=1, pad=1))),
        [x, w3, b3],
        max_coords=16,
    )
    w1 = rng.standard_normal((1, 1, 3, 2)) * 0.3
    b1 = rng.standard_normal(2) * 0.1
    _fd_check(
        lambda ts: ad.tsum(ad.square(ad.conv2d(ts[0], ts[1], ts[2]))),
        [x, w1, b1],
        max_coords=16,
    )


def test_conv2d_transpose_gradients():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 3, 4))
    w = rng.standard_normal((4, 4, 2, 4)) * 0.3
    b = rng.standard_normal(2) * 0.1
    _fd_check(
        lambda ts: ad.tsum(
            ad.square(ad.conv2d_transpose(ts[0], ts[1], ts[2], stride=2, pad=1))
        ),
        [x, w, b],
        max_coords=16,
    )


def test_conv_transpose_is_exact_adjoint_of_conv():
    # <conv(x, w), u> == <x, conv_transpose(u, w)> with shared weights
    rng = np.random.default_rng(9)
    x = rng.standard_normal((3, 8, 8, 4))
    w = rng.standard_normal((4, 4, 4, 6))
    u = rng.standard_normal((3, 4, 4, 6))
    zero_out = ad.constant(np.zeros(6))
    zero_in = ad.constant(np.zeros(4))
    lhs = np.sum(
        ad.conv2d(ad.constant(x), ad.constant(w), zero_out, stride=2, pad=1).data * u
    )
    rhs = np.sum(
        x
        * ad.conv2d_transpose(
            ad.constant(u), ad.constant(w), zero_in, stride=2, pad=1
        ).data
    )
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv_geometry_validation():
    x = ad.constant(np.zeros((1, 7, 7, 1)))
    w = ad.constant(np.zeros((4, 4, 1, 1)))
    b = ad.constant(np.zeros(1))
    with pytest.raises(ValueError):
        ad.conv2d(x, w, b, stride=2, pad=1)
    with pytest.raises(ValueError):
        ad.conv2d(ad.constant(np.zeros((1, 8, 8, 2))), w, b, stride=2, pad=1)


def test_backward_requires_scalar():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(x)


def test_grad_accumulates_over_fanout():
    x = ad.parameter(np.array(2.0))
    y = ad.add(ad.mul(x, x), ad.scale(x, 3.0))  # x^2 + 3x -> dy/dx = 2x + 3
    ad.backward(y)
    assert x.grad == pytest.approx(7.0)


def test_constant_gets_no_grad():
    x = ad.constant(np.ones(3))
    w = ad.parameter(np.ones(3))
    out = ad.tsum(ad.mul(x, w))
    ad.backward(out)
    assert x.grad is None
    assert np.allclose(w.grad, 1.0)
