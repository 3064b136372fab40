"""
Pruebas del generador sintético, preprocesamiento, persistencia y lotes
"""

import numpy as np
import pytest

from src.config import NORM_MEANS, NORM_STDS, PAD_VALUE, SHAPE_CLASSES, PreprocessConfig
from src.data_generator import (
    gen_concealed_shapes, generate_sample, generate_splits, mask_to_box, sample_seed,
)
from src.data_loader import (
    BatchProducer, DataLoader, batch_indices, iterate_eval_batches, load_dataset,
    make_batch, save_dataset,
)
from src.preprocess import denormalize, normalize, pad_to, preprocess


class TestGenerator:
    """Formas camufladas deterministas"""

    def test_deterministic(self):
        a = generate_sample(5, 16, 16, 0.3, seed=11)
        b = generate_sample(5, 16, 16, 0.3, seed=11)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.box, b.box)
        assert a.seed == b.seed == sample_seed(11, 5)

    def test_round_robin_labels(self):
        samples = gen_concealed_shapes(9, 16, 16, seed=1)
        assert [s.label for s in samples] == [i % len(SHAPE_CLASSES) for i in range(9)]
        assert samples[1].class_name == SHAPE_CLASSES[1]

    def test_workers_do_not_change_result(self):
        serial = gen_concealed_shapes(6, 16, 16, seed=2, workers=1)
        threaded = gen_concealed_shapes(6, 16, 16, seed=2, workers=3)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.image, b.image)

    def test_image_range_and_box(self):
        for s in gen_concealed_shapes(6, 16, 16, seed=4):
            assert s.image.shape == (3, 16, 16)
            assert s.image.min() >= 0 and s.image.max() <= 255
            cx, cy, w, h = s.box
            assert 0 < w <= 1 and 0 < h <= 1
            assert 0 <= cx - w / 2 and cx + w / 2 <= 1

    def test_splits_are_disjoint(self):
        train, test = generate_splits(4, 3, 16, 0.3, seed=5)
        assert [s.sample_id for s in train] == [0, 1, 2, 3]
        assert [s.sample_id for s in test] == [4, 5, 6]

    def test_invalid_difficulty(self):
        with pytest.raises(ValueError):
            gen_concealed_shapes(2, 16, 16, difficulty=1.5)

    def test_mask_to_box(self):
        mask = np.zeros((10, 10), dtype=np.uint8)
        mask[2:4, 5:9] = 1
        np.testing.assert_allclose(mask_to_box(mask), [0.7, 0.3, 0.4, 0.2])


class TestPreprocess:
    """Normalización, padding y ruta de evaluación"""

    def test_mean_normalizes_to_zero(self):
        cfg = PreprocessConfig()
        image = np.broadcast_to(np.array(NORM_MEANS)[:, None, None], (3, 4, 4))
        np.testing.assert_allclose(normalize(image, cfg), 0.0, atol=1e-12)

    def test_denormalize_inverts(self, rng):
        cfg = PreprocessConfig()
        image = rng.uniform(0, 255, (3, 5, 5))
        np.testing.assert_allclose(denormalize(normalize(image, cfg), cfg), image, atol=1e-9)

    def test_pad_to_bottom_right(self):
        out = pad_to(np.ones((3, 2, 3)), 4, 4, PAD_VALUE)
        assert out.shape == (3, 4, 4)
        np.testing.assert_array_equal(out[:, :2, :3], 1.0)
        np.testing.assert_array_equal(out[:, 2:, :], PAD_VALUE)

    def test_shrunk_image_padded_with_constant(self):
        cfg = PreprocessConfig(flip_prob=0.0, ratio_range=(0.5, 0.50001))
        sample = gen_concealed_shapes(1, 16, 16, seed=3)[0]
        out = preprocess(sample, cfg, train=True, seed=0)
        assert out.image.shape == (3, 16, 16)
        expected = (PAD_VALUE - np.array(NORM_MEANS)) / np.array(NORM_STDS)
        np.testing.assert_allclose(out.image[:, 12, 12], expected)

    def test_eval_path_is_identity_geometry(self):
        sample = gen_concealed_shapes(1, 16, 16, seed=3)[0]
        cfg = PreprocessConfig()
        out = preprocess(sample, cfg, train=False)
        np.testing.assert_allclose(out.box, sample.box)
        np.testing.assert_allclose(out.image, normalize(sample.image, cfg))
        assert out.box_valid

    def test_flip_mirrors_box(self):
        sample = gen_concealed_shapes(1, 16, 16, seed=3)[0]
        cfg = PreprocessConfig(flip_prob=1.0, ratio_range=(0.99999, 1.0))
        out = preprocess(sample, cfg, train=True, seed=1)
        assert out.box[0] == pytest.approx(1.0 - sample.box[0])
        assert out.box[1] == pytest.approx(sample.box[1])

    def test_invalid_ratio_range(self):
        with pytest.raises(ValueError):
            PreprocessConfig(ratio_range=(2.0, 1.0))


class TestPersistence:
    """Guardado y carga de splits"""

    def test_round_trip(self, tmp_path, tiny_samples):
        train, test = tiny_samples[:16], tiny_samples[16:]
        save_dataset(tmp_path, train, test)
        loaded_train, loaded_test = load_dataset(tmp_path)
        assert len(loaded_train) == 16 and len(loaded_test) == 8
        for a, b in zip(train, loaded_train):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_allclose(a.box, b.box)
            assert (a.label, a.seed, a.sample_id) == (b.label, b.seed, b.sample_id)
        assert DataLoader(tmp_path).available_splits() == ['test', 'train']

    def test_missing_split(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            DataLoader(tmp_path).load_split('train')

    def test_resaving_replaces_manifest_rows(self, tmp_path, tiny_samples):
        loader = DataLoader(tmp_path)
        loader.save_split(tiny_samples[:4], 'train')
        loader.save_split(tiny_samples[:6], 'train')
        assert len(loader.load_split('train')) == 6


class TestBatches:
    """Lotes función pura de (seed, step) y productor ordenado"""

    def test_indices_depend_only_on_seed_and_step(self):
        np.testing.assert_array_equal(batch_indices(50, 8, 3, 7), batch_indices(50, 8, 3, 7))
        assert not np.array_equal(batch_indices(50, 8, 3, 7), batch_indices(50, 8, 3, 8))

    def test_small_dataset_samples_with_replacement(self):
        assert len(batch_indices(3, 8, 0, 0)) == 8

    def test_make_batch_deterministic(self, tiny_samples):
        cfg = PreprocessConfig()
        a = make_batch(tiny_samples, 4, 6, seed=1, cfg=cfg, augment=True)
        b = make_batch(tiny_samples, 4, 6, seed=1, cfg=cfg, augment=True)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.boxes, b.boxes)
        assert a.images.shape == (6, 3, 16, 16)
        assert a.labels.dtype == np.int64

    def test_producer_order_and_content(self, tiny_samples):
        cfg = PreprocessConfig()
        producer = BatchProducer(tiny_samples, cfg, batch_size=4, seed=2,
                                 start_step=3, end_step=8, prefetch=1)
        batches = list(producer)
        assert [b.step for b in batches] == [3, 4, 5, 6, 7]
        direct = make_batch(tiny_samples, 5, 4, seed=2, cfg=cfg)
        np.testing.assert_array_equal(batches[2].images, direct.images)

    def test_eval_batches_cover_split_in_order(self, tiny_samples):
        batches = list(iterate_eval_batches(tiny_samples, 10, PreprocessConfig()))
        assert [len(b.labels) for b in batches] == [10, 10, 4]
        labels = np.concatenate([b.labels for b in batches])
        assert labels.tolist() == [s.label for s in tiny_samples]
