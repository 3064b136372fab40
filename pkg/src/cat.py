"""
CAT - Conceptual Attention Transformation
=========================================
Agrupa las features en L tokens de concepto mediante atención softmax sobre
las posiciones espaciales y redistribuye la información de los conceptos a
cada posición con un flujo de retorno aprendido.

Formas (por lote N):
    X, X_p, X^g : (N, C, H, W)
    attn_s, attn: (N, L, HW)
    T_c         : (N, L, C)
    attn_mu     : (N, HW, L)
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union
import logging

import numpy as np

from . import ops
from .acp import AcpState
from .config import AcpConfig, CatConfig, max_lpu_iterations
from .exceptions import ShapeError
from .layers import Conv2d, Linear, Module, orthogonal, parameter
from .tensor import Tensor

logger = logging.getLogger(__name__)

CONCEPT_MODES = ('input-independent', 'input-dependent')
ALPHA_MODES = ('positional-bias', 'feature-dependent')


@dataclass
class ConceptAttention:
    """Puntajes y pesos de atención conceptual"""
    attn_s: Tensor
    attn: Tensor
    attn_mu: Optional[Tensor] = None


@dataclass
class ConceptTokens:
    """Matriz T_c (N, L, C) de tokens de concepto"""
    t_c: Tensor

    @property
    def num_concepts(self) -> int:
        return self.t_c.shape[1]


class CatState(Module):
    """
    Parámetros de CAT

    Modos:
        concept_mode: 'input-independent' (W_con fijo por capa) o
            'input-dependent' (extractor conv/pool/linear)
        alpha_mode: 'positional-bias' (alpha (L, HW)) o
            'feature-dependent' (ACP + conv 1x1 C -> L)
    """

    def __init__(self, rng: np.random.Generator, cfg: CatConfig, channels: Optional[int] = None,
                 height: Optional[int] = None, width: Optional[int] = None,
                 num_concepts: Optional[int] = None):
        self.cfg = cfg
        self.channels = channels or cfg.channels
        self.height = height or cfg.height
        self.width = width or cfg.width
        if not (self.channels and self.height and self.width):
            raise ShapeError("CatState requiere canales, alto y ancho")
        c, h, w = self.channels, self.height, self.width
        self.num_concepts = num_concepts or cfg.num_concepts or c
        l = self.num_concepts
        self.concept_mode = cfg.concept_mode
        self.alpha_mode = cfg.alpha_mode

        self.pe = parameter(np.zeros((c, h, w)))
        self.mix = Conv2d(rng, c, c, 3)

        if self.concept_mode == 'input-independent':
            self.w_con = parameter(orthogonal(rng, c, l))
        else:
            self.extractor = [Conv2d(rng, c, c, 3) for _ in range(cfg.extractor_stages)]
            self.concept_proj = Linear(rng, c, c * l)

        if self.alpha_mode == 'positional-bias':
            self.alpha = parameter(np.zeros((l, h * w)))
        else:
            alpha_levels = min(cfg.alpha_n_lpu, max_lpu_iterations(h, w))
            self.alpha_acp = AcpState(rng, AcpConfig(n_lpu=alpha_levels), c)
            self.alpha_proj = Conv2d(rng, c, l, kernel=1, padding=0)

        self.w_flow = parameter(np.eye(l))
        self.w_m = Linear(rng, c, c, bias=False)
        self.w_o = Conv2d(rng, c, c, kernel=1, padding=0)

    def forward(self, x: Tensor) -> Tensor:
        return cat_forward(x, self)


# =============================================================================
# ETAPAS
# =============================================================================

def _flatten(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w)


def positional_mix(x: Tensor, state: CatState) -> Tensor:
    """X_p = Conv3x3(X + PE)"""
    if tuple(x.shape[1:]) != state.pe.shape:
        raise ShapeError(f"positional_mix: entrada {x.shape[1:]} != PE {state.pe.shape}")
    return state.mix(x + state.pe)


def concept_hyperplanes(x_p: Tensor, state: CatState) -> Tensor:
    """Hiperplanos de concepto (N, C, L) para el modo dependiente de la entrada"""
    feat = x_p
    for conv in state.extractor:
        feat = ops.maxpool2d(conv(feat), 2)
    pooled = ops.avgpool_spatial(feat)
    n = x_p.shape[0]
    return state.concept_proj(pooled).reshape(n, state.channels, state.num_concepts)


def compute_concepts(x_p: Tensor, state: CatState,
                     mode: Optional[str] = None) -> Tuple[Tensor, Optional[Tensor]]:
    """
    Puntajes no normalizados attn_s = W_con^T . X_p

    Returns:
        (attn_s (N, L, HW), hiperplanos (N, C, L) o None en modo independiente)
    """
    mode = mode or state.concept_mode
    if mode != state.concept_mode:
        raise ShapeError(f"compute_concepts: modo {mode} con estado {state.concept_mode}")
    flat = _flatten(x_p)
    if mode == 'input-independent':
        return ops.matmul(state.w_con.transpose(), flat), None
    hyper = concept_hyperplanes(x_p, state)
    return ops.matmul(hyper.transpose(0, 2, 1), flat), hyper


def conceptual_attention(attn_s: Tensor) -> Tensor:
    """Softmax sobre las posiciones espaciales por concepto"""
    return ops.softmax(attn_s, axis=-1)


def concept_pool(attn: Tensor, x_p: Tensor) -> ConceptTokens:
    """T_c = attn . X_p'"""
    return ConceptTokens(ops.matmul(attn, _flatten(x_p).transpose(0, 2, 1)))


def stochasticity_term(state: CatState, x: Optional[Tensor] = None) -> Tensor:
    """alpha como (L, HW) o (N, L, HW)"""
    if state.alpha_mode == 'positional-bias':
        return state.alpha
    if x is None:
        raise ShapeError("alpha dependiente de features requiere la entrada x")
    a = state.alpha_proj(state.alpha_acp(x))
    n, l, h, w = a.shape
    return a.reshape(n, l, h * w)


def backward_flow(attn: Tensor, state: CatState, x: Optional[Tensor] = None) -> Tensor:
    """attn_mu = (W . (attn + alpha))^T con W actuando sobre el eje de conceptos"""
    alpha = stochasticity_term(state, x)
    if tuple(alpha.shape[-2:]) != tuple(attn.shape[-2:]):
        raise ShapeError(f"alpha {alpha.shape} incompatible con attn {attn.shape}")
    return ops.matmul(state.w_flow, attn + alpha).transpose(0, 2, 1)


def mix_and_update(x: Tensor, attn_mu: Tensor, t_c: Union[ConceptTokens, Tensor],
                   state: CatState) -> Tensor:
    """phi = GELU(W_m(attn_mu . T_c)); X^g = W_o . X + phi"""
    tokens = t_c.t_c if isinstance(t_c, ConceptTokens) else t_c
    n, c, h, w = x.shape
    phi = ops.gelu(state.w_m(ops.matmul(attn_mu, tokens)))
    phi = phi.transpose(0, 2, 1).reshape(n, c, h, w)
    return state.w_o(x) + phi


def cat_forward(x: Tensor, state: CatState, return_details: bool = False):
    """
    Composición completa de CAT

    Args:
        x: Mapa (N, C, H, W)
        state: Parámetros CatState
        return_details: Si True, retorna también ConceptAttention y ConceptTokens

    Returns:
        X^g con la forma de x
    """
    x_p = positional_mix(x, state)
    attn_s, _ = compute_concepts(x_p, state)
    attn = conceptual_attention(attn_s)
    tokens = concept_pool(attn, x_p)
    attn_mu = backward_flow(attn, state, x)
    out = mix_and_update(x, attn_mu, tokens, state)
    if return_details:
        return out, ConceptAttention(attn_s, attn, attn_mu), tokens
    return out
