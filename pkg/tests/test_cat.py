"""
Pruebas de Conceptual Attention Transformation
"""

import numpy as np
import pytest

from src.cat import (
    ALPHA_MODES, CONCEPT_MODES, CatState, cat_forward, positional_mix, stochasticity_term,
)
from src.config import CatConfig
from src.exceptions import ShapeError
from src.tensor import Tensor, backward, no_grad, precision

CHANNELS, SIDE, CONCEPTS = 4, 4, 3
MODES = [(c, a) for c in CONCEPT_MODES for a in ALPHA_MODES]
SEEDS = range(20)


def _state(seed: int, concept_mode: str, alpha_mode: str) -> CatState:
    cfg = CatConfig(concept_mode=concept_mode, alpha_mode=alpha_mode)
    return CatState(np.random.default_rng(seed), cfg, CHANNELS, SIDE, SIDE, CONCEPTS)


def _input(seed: int, n: int = 2) -> Tensor:
    return Tensor(np.random.default_rng(seed + 1000).standard_normal((n, CHANNELS, SIDE, SIDE)))


class TestShapes:
    """Formas de la salida y de los intermedios"""

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("concept_mode,alpha_mode", MODES)
    def test_output_shape_and_details(self, concept_mode, alpha_mode, seed):
        state = _state(seed, concept_mode, alpha_mode)
        with no_grad():
            out, attention, tokens = cat_forward(_input(seed), state, return_details=True)
        assert out.shape == (2, CHANNELS, SIDE, SIDE)
        assert attention.attn.shape == (2, CONCEPTS, SIDE * SIDE)
        assert attention.attn_mu.shape == (2, SIDE * SIDE, CONCEPTS)
        assert tokens.t_c.shape == (2, CONCEPTS, CHANNELS)
        assert tokens.num_concepts == CONCEPTS

    def test_concepts_default_to_channels(self):
        state = CatState(np.random.default_rng(0), CatConfig(), CHANNELS, SIDE, SIDE)
        assert state.num_concepts == CHANNELS

    def test_wrong_spatial_size(self):
        state = _state(0, 'input-independent', 'positional-bias')
        with pytest.raises(ShapeError):
            cat_forward(Tensor(np.zeros((1, CHANNELS, SIDE + 1, SIDE))), state)

    def test_feature_alpha_needs_input(self):
        state = _state(0, 'input-independent', 'feature-dependent')
        with pytest.raises(ShapeError):
            stochasticity_term(state)

    def test_missing_geometry(self):
        with pytest.raises(ShapeError):
            CatState(np.random.default_rng(0), CatConfig(), CHANNELS)


class TestConceptAttention:
    """Normalización de la atención y convexidad de los tokens"""

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("concept_mode,alpha_mode", MODES)
    def test_attention_rows_sum_to_one(self, concept_mode, alpha_mode, seed):
        state = _state(seed, concept_mode, alpha_mode)
        with precision(64), no_grad():
            state.cast(np.float64)
            _, attention, _ = cat_forward(_input(seed), state, return_details=True)
        attn = attention.attn.data
        assert np.all(attn >= 0)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("concept_mode,alpha_mode", MODES)
    def test_tokens_are_convex_combinations(self, concept_mode, alpha_mode, seed):
        state = _state(seed, concept_mode, alpha_mode)
        with precision(64), no_grad():
            state.cast(np.float64)
            x = _input(seed)
            _, attention, tokens = cat_forward(x, state, return_details=True)
            x_p = positional_mix(x, state).data
        flat = x_p.reshape(2, CHANNELS, -1)
        t_c = tokens.t_c.data
        lo = flat.min(axis=-1)[:, None, :]
        hi = flat.max(axis=-1)[:, None, :]
        assert np.all(t_c >= lo - 1e-12)
        assert np.all(t_c <= hi + 1e-12)
        np.testing.assert_allclose(t_c, attention.attn.data @ flat.transpose(0, 2, 1), atol=1e-12)


class TestGradients:
    """Todos los parámetros participan en la salida"""

    @pytest.mark.parametrize("concept_mode,alpha_mode", MODES)
    def test_every_parameter_gets_gradient(self, concept_mode, alpha_mode):
        for seed in range(20):
            state = _state(seed, concept_mode, alpha_mode)
            out = cat_forward(_input(seed), state)
            backward((out * out).sum())
            missing = [name for name, p in state.named_parameters()
                       if p.grad is None or not np.any(p.grad)]
            assert not missing, f"seed {seed}: sin gradiente {missing}"
            state.zero_grad()

    @pytest.mark.parametrize("concept_mode,alpha_mode", MODES)
    def test_distant_positions_interact(self, concept_mode, alpha_mode):
        state = _state(3, concept_mode, alpha_mode)
        x = Tensor(_input(3).data, requires_grad=True)
        corner = np.zeros((2, CHANNELS, SIDE, SIDE))
        corner[:, :, 0, 0] = 1.0
        backward((cat_forward(x, state) * Tensor(corner)).sum())
        far = x.grad[:, :, SIDE - 1, SIDE - 1]
        assert np.abs(far).max() > 1e-8
