"""
Pruebas del ViT por etapas: formas, capturas, conteo de parámetros y bloques
"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.config import ModelConfig
from src.exceptions import ShapeError
from src.tensor import Tensor, backward, no_grad, precision
from src.transformer import (
    Block, MultiHeadSelfAttention, VisionTransformer, count_params, mhsa, parameter_table,
)


@pytest.fixture
def images(rng):
    return Tensor(rng.standard_normal((2, 3, 16, 16)))


class TestModelForward:
    """Salidas del modelo completo"""

    @pytest.mark.parametrize("kind", ['baseline', 'enhanced'])
    def test_output_shapes(self, tiny_model_cfg, images, kind):
        cfg = tiny_model_cfg.model_copy(update={'block_kind': kind})
        model = VisionTransformer(cfg, seed=0)
        with no_grad():
            out = model(images, capture=True)
        assert out.logits.shape == (2, 3)
        assert out.boxes.shape == (2, 4)
        assert np.all((out.boxes.data >= 0) & (out.boxes.data <= 1))
        assert len(out.features) == model.num_blocks == 2
        assert out.stage_of_block == [0, 1]
        assert out.features[0].shape == (2, 8, 4, 4)
        assert out.features[1].shape == (2, 16, 2, 2)
        assert out.attentions[0].shape == (2, 2, 16, 16)

    def test_no_capture_by_default(self, tiny_model_cfg, images):
        with no_grad():
            out = VisionTransformer(tiny_model_cfg, seed=0)(images)
        assert out.features == [] and out.attentions == []

    def test_without_detection_head(self, tiny_model_cfg, images):
        cfg = tiny_model_cfg.model_copy(update={'detection_head': False})
        with no_grad():
            out = VisionTransformer(cfg, seed=0)(images)
        assert out.boxes is None

    def test_rejects_non_batched_input(self, tiny_model_cfg):
        with pytest.raises(ShapeError):
            VisionTransformer(tiny_model_cfg, seed=0)(Tensor(np.zeros((3, 16, 16))))

    def test_seed_determines_weights(self, tiny_model_cfg):
        a = VisionTransformer(tiny_model_cfg, seed=5).state_dict()
        b = VisionTransformer(tiny_model_cfg, seed=5).state_dict()
        c = VisionTransformer(tiny_model_cfg, seed=6).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_all_parameters_trainable(self, tiny_model_cfg, images):
        model = VisionTransformer(tiny_model_cfg, seed=0)
        out = model(images)
        backward(out.logits.sum() + out.boxes.sum())
        missing = [name for name, p in model.named_parameters() if p.grad is None]
        assert not missing


class TestParameterCount:
    """Conteos por variante"""

    def test_enhanced_adds_parameters(self, tiny_model_cfg):
        table = dict(parameter_table(tiny_model_cfg))
        assert table['enhanced'] > table['baseline'] > 0

    def test_count_from_config_matches_module(self, tiny_model_cfg):
        model = VisionTransformer(tiny_model_cfg, seed=3)
        assert count_params(tiny_model_cfg) == count_params(model) == model.num_parameters()

    def test_isolation_flags(self, tiny_model_cfg):
        both = count_params(tiny_model_cfg)
        acp_only = count_params(tiny_model_cfg.model_copy(update={'use_cat': False}))
        cat_only = count_params(tiny_model_cfg.model_copy(update={'use_acp': False}))
        baseline = count_params(tiny_model_cfg.model_copy(update={'block_kind': 'baseline'}))
        assert both - baseline == (acp_only - baseline) + (cat_only - baseline)


class TestBlocks:
    """Bloque baseline y enhanced, atención multi-cabeza"""

    def test_enhanced_block_components(self, tiny_model_cfg, rng):
        block = Block(rng, tiny_model_cfg, stage=0, grid=4)
        assert block.use_acp and block.use_cat
        baseline = Block(rng, tiny_model_cfg, stage=0, grid=4, kind='baseline')
        assert not baseline.use_acp and not baseline.use_cat
        with no_grad():
            out, attn = block(Tensor(rng.standard_normal((1, 8, 4, 4))), return_attention=True)
        assert out.shape == (1, 8, 4, 4)
        np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, rtol=1e-5)

    def test_mhsa_matches_single_head_reference(self, rng):
        with precision(64):
            state = MultiHeadSelfAttention(rng, 4, heads=1)
            x = Tensor(rng.standard_normal((1, 4, 2, 3)))
            out = mhsa(x, state).data
        tokens = x.data.reshape(1, 4, 6).transpose(0, 2, 1)[0]
        q = tokens @ state.q.weight.data + state.q.bias.data
        k = tokens @ state.k.weight.data + state.k.bias.data
        v = tokens @ state.v.weight.data + state.v.bias.data
        scores = q @ k.T / 2.0
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        merged = weights @ v @ state.out.weight.data + state.out.bias.data
        np.testing.assert_allclose(out[0], merged.T.reshape(4, 2, 3), atol=1e-10)

    def test_heads_must_divide_dim(self, rng):
        with pytest.raises(ShapeError):
            MultiHeadSelfAttention(rng, 6, heads=4)


class TestModelConfig:
    """Validación de la arquitectura"""

    def test_lpu_bound_enforced(self):
        with pytest.raises(ValidationError):
            ModelConfig(image_size=32, patch_size=4, dims=[16, 32], depths=[1, 1],
                        heads=[2, 2], acp={'n_lpu': 3})

    def test_bound_ignored_without_acp(self):
        cfg = ModelConfig(image_size=32, patch_size=4, dims=[16, 32], depths=[1, 1],
                          heads=[2, 2], acp={'n_lpu': 3}, use_acp=False)
        assert cfg.stage_grids() == [8, 4]

    def test_mismatched_stage_lists(self):
        with pytest.raises(ValidationError):
            ModelConfig(dims=[16, 32], depths=[1], heads=[2, 2])

    def test_patch_must_divide_image(self):
        with pytest.raises(ValidationError):
            ModelConfig(image_size=30, patch_size=4)
