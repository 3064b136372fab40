"""
Transformer - ViT baseline y Enhanced Interaction ViT
=====================================================
Patch embedding, self-attention multi-cabeza, MLP y ensamblado de bloques:

    baseline : x + MHSA(LN(x)), luego + MLP(LN(x))
    enhanced : u = CAT(LN(ACP(x))), luego u + MHSA(LN(u)), luego + MLP(LN(u))

El modelo apila etapas con downsampling conv 2x2 stride 2 entre ellas,
promedio espacial, clasificador lineal y regresor de caja opcional.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union
import logging
import math

import numpy as np

from . import ops
from .acp import AcpState
from .cat import CatState
from .config import ModelConfig
from .exceptions import ShapeError
from .layers import Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor

logger = logging.getLogger(__name__)


def to_tokens(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, HW, C)"""
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w).transpose(0, 2, 1)


def from_tokens(t: Tensor, height: int, width: int) -> Tensor:
    """(N, HW, C) -> (N, C, H, W)"""
    n, _, c = t.shape
    return t.transpose(0, 2, 1).reshape(n, c, height, width)


# =============================================================================
# COMPONENTES
# =============================================================================

class PatchEmbed(Module):
    """Convolución ps x ps con stride ps"""

    def __init__(self, rng: np.random.Generator, in_channels: int, dim: int, patch_size: int):
        self.patch_size = patch_size
        self.proj = Conv2d(rng, in_channels, dim, kernel=patch_size, stride=patch_size, padding=0)

    def forward(self, image: Tensor) -> Tensor:
        return patch_embed(image, self)


def patch_embed(image: Tensor, embed: PatchEmbed) -> Tensor:
    h, w = image.shape[2:]
    ps = embed.patch_size
    if h % ps or w % ps:
        raise ShapeError(f"imagen {h}x{w} no divisible por patch_size {ps}")
    return embed.proj(image)


class MultiHeadSelfAttention(Module):
    """Self-attention global con proyecciones Q, K, V separadas"""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, qkv_bias: bool = True):
        if heads < 1 or dim % heads:
            raise ShapeError(f"dimensión {dim} no divisible por {heads} cabezas")
        self.heads = heads
        self.q = Linear(rng, dim, dim, bias=qkv_bias)
        self.k = Linear(rng, dim, dim, bias=qkv_bias)
        self.v = Linear(rng, dim, dim, bias=qkv_bias)
        self.out = Linear(rng, dim, dim)

    def forward(self, x: Tensor, return_attention: bool = False):
        return mhsa(x, self, return_attention=return_attention)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    n, tokens, c = t.shape
    return t.reshape(n, tokens, heads, c // heads).transpose(0, 2, 1, 3)


def mhsa(x: Tensor, state: MultiHeadSelfAttention, heads: Optional[int] = None,
         return_attention: bool = False):
    """
    softmax(Q K^T / sqrt(d_k)) V por cabeza, concatenación y proyección

    Returns:
        Mapa (N, C, H, W); con return_attention también attn (N, heads, HW, HW)
    """
    heads = heads or state.heads
    n, c, h, w = x.shape
    if c % heads:
        raise ShapeError(f"mhsa: {c} canales no divisibles por {heads} cabezas")
    d_k = c // heads
    tokens = to_tokens(x)
    q = _split_heads(state.q(tokens), heads)
    k = _split_heads(state.k(tokens), heads)
    v = _split_heads(state.v(tokens), heads)
    scores = ops.scale(ops.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / math.sqrt(d_k))
    attn = ops.softmax(scores, axis=-1)
    merged = ops.matmul(attn, v).transpose(0, 2, 1, 3).reshape(n, h * w, c)
    out = from_tokens(state.out(merged), h, w)
    if return_attention:
        return out, attn
    return out


class Mlp(Module):
    """Linear C -> ratio*C, GELU, Linear de vuelta"""

    def __init__(self, rng: np.random.Generator, dim: int, ratio: float):
        hidden = max(1, int(round(dim * ratio)))
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return mlp_ffn(x, self)


def mlp_ffn(x: Tensor, state: Mlp, ratio: Optional[float] = None) -> Tensor:
    h, w = x.shape[2:]
    return from_tokens(state.fc2(ops.gelu(state.fc1(to_tokens(x)))), h, w)


class Block(Module):
    """Bloque pre-norm; en modo 'enhanced' ACP y CAT preceden a la atención"""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, stage: int, grid: int,
                 kind: Optional[str] = None):
        dim = cfg.dims[stage]
        self.kind = kind or cfg.block_kind
        self.use_acp = self.kind == 'enhanced' and cfg.use_acp
        self.use_cat = self.kind == 'enhanced' and cfg.use_cat
        if self.use_acp:
            self.acp = AcpState(rng, cfg.acp, dim)
        if self.use_cat:
            self.norm_cat = LayerNorm(dim)
            self.cat = CatState(rng, cfg.cat, dim, grid, grid, cfg.concepts_for_stage(stage))
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(rng, dim, cfg.heads[stage], cfg.qkv_bias)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, cfg.mlp_ratio)

    def forward(self, x: Tensor, return_attention: bool = False):
        return block_forward(x, self, return_attention=return_attention)


def block_forward(x: Tensor, state: Block, kind: Optional[str] = None,
                  return_attention: bool = False):
    """
    Forward de un bloque

    Con ACP sin CAT el resultado de ACP pasa directo a la atención; la
    LayerNorm previa solo alimenta a CAT.
    """
    kind = kind or state.kind
    if kind != state.kind:
        raise ShapeError(f"block_forward: tipo {kind} con estado {state.kind}")
    u = x
    if state.use_acp:
        u = state.acp(u)
    if state.use_cat:
        u = state.cat(state.norm_cat(u))
    attended, attn = state.attn(state.norm1(u), return_attention=True)
    u = u + attended
    u = u + state.mlp(state.norm2(u))
    if return_attention:
        return u, attn
    return u


class Stage(Module):
    """Downsampling opcional seguido de los bloques de una etapa"""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, stage: int, grid: int):
        self.downsample = None
        if stage > 0:
            self.downsample = Conv2d(rng, cfg.dims[stage - 1], cfg.dims[stage],
                                     kernel=2, stride=2, padding=0)
        self.blocks = [Block(rng, cfg, stage, grid) for _ in range(cfg.depths[stage])]


@dataclass
class ModelOutput:
    """Salida del modelo con capturas opcionales por bloque"""
    logits: Tensor
    boxes: Optional[Tensor] = None
    features: List[Tensor] = field(default_factory=list)
    attentions: List[Tensor] = field(default_factory=list)
    stage_of_block: List[int] = field(default_factory=list)


class VisionTransformer(Module):
    """ViT por etapas (baseline o Enhanced Interaction) con cabeza de juguete"""

    def __init__(self, cfg: ModelConfig, rng: Optional[np.random.Generator] = None, seed: int = 0):
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.cfg = cfg
        grids = cfg.stage_grids()
        self.patch_embed = PatchEmbed(rng, cfg.in_channels, cfg.dims[0], cfg.patch_size)
        self.stages = [Stage(rng, cfg, s, grids[s]) for s in range(len(cfg.dims))]
        self.norm = LayerNorm(cfg.dims[-1], axis=-1)
        self.classifier = Linear(rng, cfg.dims[-1], cfg.num_classes)
        self.box_head = Linear(rng, cfg.dims[-1], 4) if cfg.detection_head else None
        logger.debug(f"Modelo {cfg.block_kind}: {self.num_parameters():,} parámetros")

    @property
    def num_blocks(self) -> int:
        return sum(len(s.blocks) for s in self.stages)

    def forward(self, images: Tensor, capture: bool = False) -> ModelOutput:
        return model_forward(images, self, capture=capture)


def model_forward(images: Tensor, model: VisionTransformer, capture: bool = False) -> ModelOutput:
    """
    Imágenes (N, C_in, H, W) -> logits (N, K) y cajas (N, 4) en [0, 1]

    Args:
        images: Lote normalizado
        model: Pesos del modelo
        capture: Si True, guarda salida y atención de cada bloque
    """
    if images.ndim != 4:
        raise ShapeError(f"model_forward espera (N, C, H, W), recibido {images.shape}")
    x = model.patch_embed(images)
    features, attentions, stage_of_block = [], [], []
    for s, stage in enumerate(model.stages):
        if stage.downsample is not None:
            x = stage.downsample(x)
        for block in stage.blocks:
            x, attn = block(x, return_attention=True)
            if capture:
                features.append(x)
                attentions.append(attn)
                stage_of_block.append(s)
    pooled = model.norm(ops.avgpool_spatial(x))
    logits = model.classifier(pooled)
    boxes = ops.sigmoid(model.box_head(pooled)) if model.box_head is not None else None
    return ModelOutput(logits, boxes, features, attentions, stage_of_block)


def count_params(source: Union[Module, ModelConfig]) -> int:
    """Total de parámetros escalares de un módulo o de la arquitectura de un ModelConfig"""
    if isinstance(source, ModelConfig):
        source = VisionTransformer(source, seed=0)
    return source.num_parameters()


def parameter_table(cfg: ModelConfig) -> List[Tuple[str, int]]:
    """Conteo de parámetros de la variante baseline y enhanced del mismo ancho"""
    rows = []
    for kind in ('baseline', 'enhanced'):
        variant = cfg.model_copy(update={'block_kind': kind})
        rows.append((kind, count_params(variant)))
    return rows
