"""
Pruebas de operaciones diferenciables: formas, semántica de bordes y valores
"""

import numpy as np
import pytest

from src import ops
from src.config import LAYERNORM_EPS
from src.exceptions import ShapeError
from src.tensor import Tensor, backward, precision


@pytest.fixture
def image_batch(rng):
    with precision(64):
        return Tensor(rng.standard_normal((2, 3, 7, 6)), requires_grad=True)


class TestConvolution:
    """conv2d y depthwise_conv2d"""

    def test_output_extent(self, image_batch, rng):
        with precision(64):
            w = Tensor(rng.standard_normal((5, 3, 3, 3)), requires_grad=True)
            out = ops.conv2d(image_batch, w, padding=1)
            assert out.shape == (2, 5, 7, 6)
            square = Tensor(rng.standard_normal((2, 3, 7, 7)))
            out = ops.conv2d(square, w, stride=2, padding=0)
            assert out.shape == (2, 5, 3, 3)

    def test_non_integer_extent_raises(self, image_batch, rng):
        w = Tensor(rng.standard_normal((5, 3, 3, 3)))
        with pytest.raises(ShapeError):
            ops.conv2d(image_batch, w, stride=2, padding=0)

    def test_same_padding_needs_odd_kernel(self, image_batch, rng):
        w = Tensor(rng.standard_normal((5, 3, 2, 2)))
        with pytest.raises(ShapeError):
            ops.conv2d(image_batch, w, padding='same')

    def test_channel_mismatch(self, image_batch, rng):
        w = Tensor(rng.standard_normal((5, 4, 3, 3)))
        with pytest.raises(ShapeError):
            ops.conv2d(image_batch, w, padding=1)

    def test_matches_direct_correlation(self, rng):
        with precision(64):
            x = rng.standard_normal((1, 2, 5, 5))
            w = rng.standard_normal((3, 2, 3, 3))
            out = ops.conv2d(Tensor(x), Tensor(w), padding=0).data
        expected = np.zeros((1, 3, 3, 3))
        for o in range(3):
            for i in range(3):
                for j in range(3):
                    expected[0, o, i, j] = np.sum(x[0, :, i:i + 3, j:j + 3] * w[o])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_depthwise_keeps_channels_separate(self, rng):
        with precision(64):
            x = np.zeros((1, 3, 5, 5))
            x[0, 1] = rng.standard_normal((5, 5))
            w = Tensor(rng.standard_normal((3, 1, 3, 3)))
            out = ops.depthwise_conv2d(Tensor(x), w).data
        assert out.shape == (1, 3, 5, 5)
        np.testing.assert_array_equal(out[0, 0], 0.0)
        np.testing.assert_array_equal(out[0, 2], 0.0)
        assert np.abs(out[0, 1]).sum() > 0


class TestPooling:
    """maxpool con ventanas finales truncadas"""

    def test_ceil_extent(self, image_batch):
        out = ops.maxpool2d(image_batch, 2)
        assert out.shape == (2, 3, 4, 3)

    def test_truncated_window_takes_remaining_max(self):
        with precision(64):
            x = Tensor(np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3))
            out = ops.maxpool2d(x, 2).data[0, 0]
        np.testing.assert_array_equal(out, [[4.0, 5.0], [7.0, 8.0]])

    def test_gradient_goes_to_argmax(self):
        with precision(64):
            x = Tensor(np.array([[[[1.0, 3.0], [2.0, 0.0]]]]), requires_grad=True)
            backward(ops.maxpool2d(x, 2).sum())
        np.testing.assert_array_equal(x.grad[0, 0], [[0.0, 1.0], [0.0, 0.0]])

    def test_spatial_average(self, image_batch):
        out = ops.avgpool_spatial(image_batch)
        np.testing.assert_allclose(out.data, image_batch.data.mean(axis=(2, 3)))


class TestActivations:
    """softmax, GELU y layernorm"""

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rng.standard_normal((4, 9)) * 50)
        y = ops.softmax(x, axis=-1).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-6)
        assert np.all(y >= 0)

    def test_gelu_reference_points(self):
        with precision(64):
            y = ops.gelu(Tensor(np.array([0.0, 1.0, -1.0]))).data
        np.testing.assert_allclose(y, [0.0, 0.8411919906, -0.1588080094], atol=1e-8)

    def test_layernorm_statistics(self, rng):
        with precision(64):
            x = Tensor(rng.standard_normal((2, 6, 3, 3)) * 4 + 2)
            y = ops.layernorm(x, axis=1).data
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-10)
        var = y.var(axis=1)
        np.testing.assert_allclose(var, 1.0, atol=1e-3)
        assert LAYERNORM_EPS > 0


class TestResize:
    """Vecino más cercano con índice floor(i * origen / destino)"""

    def test_index_map(self):
        np.testing.assert_array_equal(ops.nearest_index_map(3, 5), [0, 0, 1, 1, 2])
        np.testing.assert_array_equal(ops.nearest_index_map(4, 2), [0, 2])

    def test_upsample_replicates(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = ops.upsample_nearest2x(x).data[0, 0]
        np.testing.assert_array_equal(out[:2, :2], 1.0)
        np.testing.assert_array_equal(out[2:, 2:], 4.0)

    def test_upsample_to_odd_target(self):
        x = Tensor(np.ones((1, 2, 2, 2)))
        assert ops.upsample_nearest2x(x, (3, 3)).shape == (1, 2, 3, 3)


class TestLosses:
    """Entropía cruzada y L1 enmascarada"""

    def test_cross_entropy_uniform_logits(self):
        with precision(64):
            loss = ops.cross_entropy(Tensor(np.zeros((4, 3))), np.array([0, 1, 2, 0]))
        assert loss.item() == pytest.approx(np.log(3.0))

    def test_cross_entropy_label_shape(self):
        with pytest.raises(ShapeError):
            ops.cross_entropy(Tensor(np.zeros((4, 3))), np.array([0, 1]))

    def test_l1_mask_excludes_rows(self):
        with precision(64):
            pred = Tensor(np.array([[1.0, 1.0], [5.0, 5.0]]))
            target = np.zeros((2, 2))
            loss = ops.l1_loss(pred, target, mask=np.array([True, False]))
        assert loss.item() == pytest.approx(1.0)

    def test_l1_all_masked_is_zero(self):
        loss = ops.l1_loss(Tensor(np.ones((2, 4))), np.zeros((2, 4)), mask=np.array([False, False]))
        assert loss.item() == 0.0
