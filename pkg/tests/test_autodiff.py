"""Finite-difference checks for every differentiable primitive."""

import numpy as np
import pytest

from tab2tex.errors import ShapeError
from tab2tex.model import autodiff as ad
from tab2tex.model.autodiff import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def check_grad(build, *arrays, tol=1e-6):
    """build(tensors...) -> scalar Tensor; checks d(out)/d(array) for each."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for t, a in zip(tensors, arrays):
        num = numeric_grad(lambda: build(*[Tensor(x) for x in arrays]).item(), a)
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, num, atol=tol, rtol=1e-4)


RNG = np.random.default_rng(0)


class TestPrimitives:
    def test_add_broadcast(self):
        a = RNG.standard_normal((2, 3))
        b = RNG.standard_normal((3,))
        check_grad(lambda x, y: ad.sum_all(ad.mul(x + y, x + y)), a, b)

    def test_mul(self):
        a = RNG.standard_normal((2, 3))
        b = RNG.standard_normal((2, 3))
        check_grad(lambda x, y: ad.sum_all(ad.mul(x, y)), a, b)

    def test_matmul_batched(self):
        a = RNG.standard_normal((2, 3, 4))
        b = RNG.standard_normal((4, 5))
        check_grad(lambda x, y: ad.sum_all(ad.mul(ad.matmul(x, y),
                                                  ad.matmul(x, y))), a, b)

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_reshape_transpose(self):
        a = RNG.standard_normal((2, 6))
        check_grad(lambda x: ad.sum_all(
            ad.mul(ad.transpose(ad.reshape(x, (2, 3, 2)), (1, 0, 2)),
                   ad.transpose(ad.reshape(x, (2, 3, 2)), (1, 0, 2)))), a)

    def test_sigmoid(self):
        a = RNG.standard_normal((3, 3))
        check_grad(lambda x: ad.sum_all(ad.mul(ad.sigmoid(x), ad.sigmoid(x))), a)

    def test_relu_away_from_kink(self):
        a = RNG.standard_normal((4, 4))
        a[np.abs(a) < 0.1] = 0.5
        check_grad(lambda x: ad.sum_all(ad.mul(ad.relu(x), ad.relu(x))), a)

    def test_softmax(self):
        a = RNG.standard_normal((2, 5))
        check_grad(lambda x: ad.sum_all(ad.mul(ad.softmax(x), ad.softmax(x))), a)

    def test_softmax_rows_sum_to_one(self):
        out = ad.softmax(Tensor(RNG.standard_normal((3, 7))))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0)

    def test_softmax_mask_excludes_positions(self):
        mask = np.array([[True, True, False]])
        out = ad.softmax(Tensor(np.zeros((1, 3))), mask)
        np.testing.assert_allclose(out.data, [[0.5, 0.5, 0.0]], atol=1e-12)

    def test_masked_softmax_grad(self):
        a = RNG.standard_normal((2, 4))
        mask = np.array([[True, True, True, False],
                         [True, False, True, True]])
        check_grad(lambda x: ad.sum_all(
            ad.mul(ad.softmax(x, mask), ad.softmax(x, mask))), a)

    def test_log_softmax(self):
        a = RNG.standard_normal((2, 5))
        w = RNG.standard_normal((2, 5))
        check_grad(lambda x: ad.sum_all(ad.mul(ad.log_softmax(x), Tensor(w))), a)

    def test_mean_all(self):
        a = RNG.standard_normal((3, 4))
        check_grad(lambda x: ad.mean_all(ad.mul(x, x)), a)

    def test_layer_norm(self):
        x = RNG.standard_normal((2, 3, 8))
        g = RNG.standard_normal(8)
        b = RNG.standard_normal(8)
        w = RNG.standard_normal((2, 3, 8))
        check_grad(lambda xx, gg, bb: ad.sum_all(
            ad.mul(ad.layer_norm(xx, gg, bb), Tensor(w))), x, g, b, tol=1e-5)

    def test_layer_norm_output_standardized(self):
        x = Tensor(RNG.standard_normal((4, 16)) * 3 + 2)
        out = ad.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)

    def test_embedding(self):
        table = RNG.standard_normal((5, 4))
        ids = np.array([[0, 2, 2], [4, 1, 0]])
        w = RNG.standard_normal((2, 3, 4))
        check_grad(lambda t: ad.sum_all(
            ad.mul(ad.embedding(t, ids), Tensor(w))), table)

    def test_im2col_conv(self):
        x = RNG.standard_normal((1, 2, 6, 6))
        w = RNG.standard_normal((2 * 9, 3))
        check_grad(lambda xx, ww: ad.sum_all(
            ad.mul(ad.matmul(ad.im2col(xx, 3, 2, 1), ww),
                   ad.matmul(ad.im2col(xx, 3, 2, 1), ww))), x, w, tol=1e-5)

    def test_conv_out_hw(self):
        assert ad.conv_out_hw(32, 32, 3, 2, 1) == (16, 16)
        assert ad.conv_out_hw(7, 7, 3, 1, 1) == (7, 7)

    def test_dropout_eval_is_identity(self):
        x = Tensor(RNG.standard_normal((3, 3)))
        out = ad.dropout(x, 0.5, np.random.default_rng(0), train=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_dropout_train_scales_kept_units(self):
        x = Tensor(np.ones((1000,)))
        out = ad.dropout(x, 0.25, np.random.default_rng(1), train=True)
        kept = out.data[out.data != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.75)
        assert 0.6 < len(kept) / 1000 < 0.9


class TestBackwardMechanics:
    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = ad.mul(x, x)  # dy/dx = 2x = 6
        y.backward()
        np.testing.assert_allclose(x.grad, 6.0)

    def test_no_grad_for_frozen_tensor(self):
        x = Tensor(np.array(3.0), requires_grad=False)
        y = ad.mul(x, x)
        y.backward()
        assert x.grad is None

    def test_diamond_graph(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        a = ad.mul(x, x)       # x^2
        out = a + a            # 2 x^2, d/dx = 4x = 8
        out.backward()
        np.testing.assert_allclose(x.grad, 8.0)
