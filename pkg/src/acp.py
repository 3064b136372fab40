"""
ACP - Aggressive Convolutional Pooling
======================================
Pirámide iterativa LPU + downscale. Cada nivel se proyecta de vuelta a la
resolución de entrada y se suma a la proyección 1x1 de la entrada.

    out = f0_proj(x0) + sum_i upscale_i(LPU_i(x^i)) + upscale_n(x^n)
    x^{i+1} = downscale_i(LPU_i(x^i))

El orden del lazo es: LPU, acumular contribución a la resolución actual,
reducir. El último mapa reducido también se proyecta, de modo que ningún
f_cnn queda sin gradiente.
"""

from typing import List, Optional, Tuple
import logging

import numpy as np

from . import ops
from .config import AcpConfig, max_lpu_iterations
from .exceptions import ShapeError
from .layers import Conv2d, DepthwiseConv2d, Module
from .tensor import Tensor, backward, concat, precision, reset_graph

logger = logging.getLogger(__name__)


def level_sizes(height: int, width: int, levels: int) -> List[Tuple[int, int]]:
    """Extensiones espaciales por nivel (semántica ceil del max pooling)"""
    sizes = [(height, width)]
    for _ in range(levels):
        h, w = sizes[-1]
        sizes.append((-(-h // 2), -(-w // 2)))
    return sizes


def check_lpu_bound(n_lpu: int, height: int, width: int) -> None:
    bound = max_lpu_iterations(height, width)
    if n_lpu > bound:
        raise ShapeError(
            f"n_lpu={n_lpu} excede floor(log2(min({height}, {width}))) = {bound}"
        )


# =============================================================================
# BLOQUES
# =============================================================================

class Lpu(Module):
    """Local Perception Unit: DWConv(x) + x"""

    def __init__(self, rng: np.random.Generator, channels: int, kernel: int = 3):
        self.dwconv = DepthwiseConv2d(rng, channels, kernel)

    def forward(self, x: Tensor) -> Tensor:
        return self.dwconv(x) + x


class DownscaleStep(Module):
    """f_cnn: conv3x3 (C -> 2C) -> ReLU -> maxpool 2x2"""

    def __init__(self, rng: np.random.Generator, channels: int, kernel: int = 3, growth: int = 2):
        self.conv = Conv2d(rng, channels, channels * growth, kernel)

    def forward(self, x: Tensor) -> Tensor:
        return ops.maxpool2d(ops.relu(self.conv(x)), 2)


class UpscalePath(Module):
    """
    f_upscale del nivel i

    i bloques (upsample x2 -> conv3x3 -> ReLU) que recorren las resoluciones
    de la pirámide hacia arriba, luego conv 1x1 a C canales y resize al
    tamaño objetivo si aún difiere.
    """

    def __init__(self, rng: np.random.Generator, level: int, channels: int,
                 hidden: Optional[int] = None, kernel: int = 3):
        self.level = level
        self.channels = channels
        self.blocks = []
        c_in = channels * 2 ** level
        for j in range(level):
            c_out = hidden or channels * 2 ** (level - j - 1)
            self.blocks.append(Conv2d(rng, c_in, c_out, kernel))
            c_in = c_out
        self.proj = Conv2d(rng, c_in, channels, kernel=1, padding=0)

    def features(self, x: Tensor, sizes: List[Tuple[int, int]]) -> Tensor:
        """Salida de los bloques de upscaling, previa a la proyección 1x1"""
        for j, conv in enumerate(self.blocks):
            target = sizes[self.level - j - 1]
            x = ops.relu(conv(ops.upsample_nearest2x(x, target)))
        return x

    def forward(self, x: Tensor, target: Tuple[int, int]) -> Tensor:
        sizes = level_sizes(target[0], target[1], self.level)
        if tuple(x.shape[2:]) != sizes[self.level]:
            raise ShapeError(
                f"upscale nivel {self.level}: entrada {x.shape[2:]} != {sizes[self.level]}"
            )
        y = self.proj(self.features(x, sizes))
        if y.shape[1] != self.channels:
            raise ShapeError(f"upscale: {y.shape[1]} canales tras proyección, se esperaban {self.channels}")
        if tuple(y.shape[2:]) != tuple(target):
            y = ops.resize_nearest(y, target)
        return y


class AcpState(Module):
    """Pesos de ACP: LPU y f_cnn por nivel, f_upscale por nivel y f0_proj"""

    def __init__(self, rng: np.random.Generator, cfg: AcpConfig, channels: Optional[int] = None):
        self.cfg = cfg
        self.channels = channels or cfg.c0
        if self.channels is None:
            raise ShapeError("AcpState requiere el número de canales (c0)")
        c = self.channels
        n = cfg.n_lpu
        self.f0_proj = Conv2d(rng, c, c, kernel=1, padding=0)
        self.lpus = [Lpu(rng, c * 2 ** i, cfg.kernel) for i in range(n)]
        self.downscales = [DownscaleStep(rng, c * 2 ** i, cfg.kernel, cfg.channel_growth) for i in range(n)]
        self.upscales = [UpscalePath(rng, i, c, cfg.upscale_hidden, cfg.kernel) for i in range(n + 1)] if n else []

    @property
    def n_lpu(self) -> int:
        return self.cfg.n_lpu

    def forward(self, x0: Tensor) -> Tensor:
        return acp_forward(x0, self)


# =============================================================================
# OPERACIONES
# =============================================================================

def lpu(x: Tensor, unit: Lpu) -> Tensor:
    return unit(x)


def downscale_step(x: Tensor, step: DownscaleStep) -> Tensor:
    return step(x)


def upscale_path(x_i: Tensor, i: int, target: Tuple[int, int, int], path: UpscalePath) -> Tensor:
    """Proyecta el mapa del nivel i a (C, H, W)"""
    c, h, w = target
    if path.level != i or path.channels != c:
        raise ShapeError(f"upscale_path: ruta de nivel {path.level}/{path.channels} para nivel {i}/{c}")
    return path(x_i, (h, w))


def acp_forward(x0: Tensor, state: AcpState) -> Tensor:
    """
    Forward de ACP

    Args:
        x0: Mapa (N, C, H, W)
        state: Pesos AcpState con C canales

    Returns:
        Mapa (N, C, H, W)
    """
    n, c, h, w = x0.shape
    if c != state.channels:
        raise ShapeError(f"acp_forward: {c} canales, el estado espera {state.channels}")
    check_lpu_bound(state.n_lpu, h, w)

    out = state.f0_proj(x0)
    x = x0
    for i in range(state.n_lpu):
        x = state.lpus[i](x)
        out = out + state.upscales[i](x, (h, w))
        x = state.downscales[i](x)
    if state.n_lpu:
        out = out + state.upscales[state.n_lpu](x, (h, w))
    return out


def acp_forward_concat(x0: Tensor, state: AcpState) -> Tensor:
    """
    Agregación ingenua: concatena las features de todos los niveles y aplica
    una sola proyección 1x1 cuyo kernel es el apilado por bloques de las
    proyecciones por nivel. Debe coincidir con acp_forward.
    """
    n, c, h, w = x0.shape
    check_lpu_bound(state.n_lpu, h, w)
    sizes = level_sizes(h, w, state.n_lpu)

    feats = [x0]
    projs = [state.f0_proj]
    x = x0
    for i in range(state.n_lpu + (1 if state.n_lpu else 0)):
        if i < state.n_lpu:
            x = state.lpus[i](x)
        path = state.upscales[i]
        f = path.features(x, sizes)
        if tuple(f.shape[2:]) != (h, w):
            f = ops.resize_nearest(f, (h, w))
        feats.append(f)
        projs.append(path.proj)
        if i < state.n_lpu:
            x = state.downscales[i](x)

    weight = concat([p.weight for p in projs], axis=1)
    bias = projs[0].bias
    for p in projs[1:]:
        bias = bias + p.bias
    return ops.conv2d(concat(feats, axis=1), weight, bias, padding=0)


def receptive_field_probe(cfg: AcpConfig, height: int, width: int, channels: int = 8,
                          site: Optional[Tuple[int, int]] = None, seed: int = 0) -> np.ndarray:
    """
    Máscara booleana (H, W) de los píxeles de entrada con influencia no nula
    sobre la salida de ACP en un sitio espacial

    Args:
        cfg: Configuración ACP
        height: Alto del mapa
        width: Ancho del mapa
        channels: Canales del mapa de prueba
        site: (fila, columna) observada; por defecto el centro
        seed: Semilla de pesos y entrada
    """
    row, col = site if site is not None else (height // 2, width // 2)
    rng = np.random.default_rng(seed)
    with precision(64):
        reset_graph()
        state = AcpState(rng, cfg, channels)
        x = Tensor(rng.standard_normal((1, channels, height, width)), requires_grad=True)
        out = acp_forward(x, state)
        mask = np.zeros(out.shape)
        mask[:, :, row, col] = 1.0
        backward((out * Tensor(mask)).sum())
    influence = np.abs(x.grad[0]).sum(axis=0) > 0
    logger.debug(f"Campo receptivo n_lpu={cfg.n_lpu}: {int(influence.sum())}/{height * width} píxeles")
    return influence
