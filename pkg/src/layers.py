"""
Layers - Módulos con Parámetros
===============================
Clase base Module (registro de parámetros por atributos, state_dict) y las
capas básicas: Conv2d, DepthwiseConv2d, Linear y LayerNorm.
"""

from typing import Dict, Iterator, List, Optional, Tuple
import logging
import math

import numpy as np

from . import ops
from .exceptions import ShapeError
from .tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)


# =============================================================================
# INICIALIZACIÓN
# =============================================================================

def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Kaiming-uniforme para pilas ReLU: U(-b, b) con b = sqrt(6 / fan_in)"""
    bound = math.sqrt(6.0 / max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / max(1, fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Matriz con columnas (o filas, si rows < cols) ortonormales vía QR"""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def parameter(data: np.ndarray, name: Optional[str] = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)


# =============================================================================
# MÓDULO BASE
# =============================================================================

class Module:
    """
    Contenedor de parámetros

    Los parámetros son atributos Tensor con requires_grad; los submódulos son
    atributos Module o listas de Module. El orden de registro es el orden de
    asignación, de modo que state_dict es determinista.
    """

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            full = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Copia arreglos sobre los parámetros existentes (la forma debe coincidir)"""
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ShapeError(f"state_dict incompatible: faltan {missing}, sobran {unexpected}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: forma {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def cast(self, dtype) -> 'Module':
        """Convierte todos los parámetros a `dtype`"""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# =============================================================================
# CAPAS
# =============================================================================

class Conv2d(Module):
    """Convolución 2D con pesos (C_out, C_in, k, k)"""

    def __init__(self, rng: np.random.Generator, in_channels: int, out_channels: int,
                 kernel: int = 3, stride: int = 1, padding='same', bias: bool = True):
        fan_in = in_channels * kernel * kernel
        self.weight = parameter(kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    """Convolución por canal, padding 'same'"""

    def __init__(self, rng: np.random.Generator, channels: int, kernel: int = 3, bias: bool = True):
        self.weight = parameter(kaiming_uniform(rng, (channels, 1, kernel, kernel), kernel * kernel))
        self.bias = parameter(np.zeros(channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.depthwise_conv2d(x, self.weight, self.bias)


class Linear(Module):
    """Mapa afín sobre el último eje, pesos (C_in, C_out)"""

    def __init__(self, rng: np.random.Generator, in_features: int, out_features: int, bias: bool = True):
        self.weight = parameter(xavier_uniform(rng, (in_features, out_features), in_features, out_features))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    """LayerNorm sobre el eje de canales (axis=1 para mapas N, C, H, W)"""

    def __init__(self, channels: int, axis: int = 1):
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.axis = axis

    def forward(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, axis=self.axis)
