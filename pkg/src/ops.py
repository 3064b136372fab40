"""
Ops - Operaciones de Red Neuronal
=================================
Kernels CPU (numpy) con forward y backward para convoluciones, pooling,
activaciones, normalización, interpolación y pérdidas.

Convenciones:
    - Mapas de features en formato (N, C, H, W).
    - Convolución como correlación cruzada (sin voltear el kernel).
    - Max pooling con semántica ceil; empates van al primer argmax.
"""

from typing import Optional, Tuple, Union
import logging

import numpy as np

from .config import GELU_COEF, GELU_SQRT_2_OVER_PI, LAYERNORM_EPS
from .exceptions import ShapeError
from .tensor import Tensor, as_tensor, make_result, matmul

logger = logging.getLogger(__name__)

__all__ = [
    'matmul', 'linear', 'conv2d', 'depthwise_conv2d', 'maxpool2d', 'avgpool_spatial',
    'softmax', 'relu', 'gelu', 'sigmoid', 'layernorm', 'resize_nearest',
    'upsample_nearest2x', 'cross_entropy', 'l1_loss',
]


# =============================================================================
# IM2COL
# =============================================================================

def _pad_spatial(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*kh*kw, Ho*Wo)"""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return patches.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, padded_shape: Tuple[int, ...], kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Inversa acumulativa de _im2col"""
    n, c = padded_shape[:2]
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def _resolve_padding(padding: Union[int, str], kh: int, kw: int, stride: int) -> Tuple[int, int]:
    if padding == 'same':
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"padding 'same' requiere kernel impar, recibido {kh}x{kw}")
        if stride != 1:
            raise ShapeError("padding 'same' solo está definido con stride 1")
        return kh // 2, kw // 2
    return int(padding), int(padding)


def _output_extent(size: int, kernel: int, pad: int, stride: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"extensión de salida no entera: (size={size} + 2*{pad} - {kernel}) / {stride}"
        )
    return span // stride + 1


# =============================================================================
# CAPAS LINEALES Y CONVOLUCIONES
# =============================================================================

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Mapa afín sobre el último eje: x @ w + b, w con forma (C_in, C_out)"""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: última dimensión {x.shape[-1]} != C_in {w.shape[0]}")
    out = np.matmul(x.data, w.data)
    if b is not None:
        out = out + b.data

    def _backward(g):
        gx = np.matmul(g, w.data.T)
        gw = np.matmul(x.data.reshape(-1, x.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)
    inputs = (x, w) if b is None else (x, w, b)
    return make_result('linear', out, inputs, _backward)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: Union[int, str] = 0) -> Tensor:
    """
    Convolución 2D (correlación cruzada)

    Args:
        x: (N, C_in, H, W)
        w: (C_out, C_in, kh, kw)
        b: (C_out,) opcional
        stride: Paso espacial
        padding: Entero o 'same' (kernel impar, stride 1)

    Returns:
        (N, C_out, H', W') con H' = (H + 2p - kh) / stride + 1
    """
    n, c, h, wd = x.shape
    c_out, c_in, kh, kw = w.shape
    if c_in != c:
        raise ShapeError(f"conv2d: canales de entrada {c} != {c_in} del kernel")
    ph, pw = _resolve_padding(padding, kh, kw, stride)
    ho = _output_extent(h, kh, ph, stride)
    wo = _output_extent(wd, kw, pw, stride)

    xp = _pad_spatial(x.data, ph, pw)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.reshape(c_out, -1)
    out = np.matmul(wmat, cols)
    if b is not None:
        out = out + b.data[None, :, None]
    out = out.reshape(n, c_out, ho, wo)

    def _backward(g):
        g2 = g.reshape(n, c_out, ho * wo)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gcols = np.matmul(wmat.T, g2)
        gx = _col2im(gcols, xp.shape, kh, kw, stride, ho, wo)[:, :, ph:ph + h, pw:pw + wd]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    inputs = (x, w) if b is None else (x, w, b)
    return make_result('conv2d', out, inputs, _backward)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Convolución por canal con padding 'same': el canal c solo ve el canal c"""
    n, c, h, wd = x.shape
    if w.shape[0] != c or w.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d: kernel {w.shape} incompatible con {c} canales")
    kh, kw = w.shape[2:]
    ph, pw = _resolve_padding('same', kh, kw, 1)

    xp = _pad_spatial(x.data, ph, pw)
    cols = _im2col(xp, kh, kw, 1, h, wd).reshape(n, c, kh * kw, h * wd)
    wk = w.data.reshape(c, kh * kw)
    out = np.einsum('nckl,ck->ncl', cols, wk)
    if b is not None:
        out = out + b.data[None, :, None]
    out = out.reshape(n, c, h, wd)

    def _backward(g):
        g2 = g.reshape(n, c, h * wd)
        gw = np.einsum('nckl,ncl->ck', cols, g2).reshape(w.shape)
        gcols = np.einsum('ck,ncl->nckl', wk, g2).reshape(n, c * kh * kw, h * wd)
        gx = _col2im(gcols, xp.shape, kh, kw, 1, h, wd)[:, :, ph:ph + h, pw:pw + wd]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    inputs = (x, w) if b is None else (x, w, b)
    return make_result('depthwise_conv2d', out, inputs, _backward)


# =============================================================================
# POOLING
# =============================================================================

def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """Max pooling k x k, stride k, con ventanas finales truncadas (ceil)"""
    n, c, h, wd = x.shape
    ho, wo = -(-h // k), -(-wd // k)
    hp, wp = ho * k, wo * k
    if (hp, wp) != (h, wd):
        xp = np.full((n, c, hp, wp), -np.inf, dtype=x.dtype)
        xp[:, :, :h, :wd] = x.data
    else:
        xp = x.data
    windows = xp.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, idx, axis=-1)[..., 0]

    def _backward(g):
        gwin = np.zeros((n, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(gwin, idx, g[..., None], axis=-1)
        gxp = gwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hp, wp)
        return (gxp[:, :, :h, :wd],)
    return make_result('maxpool2d', out, (x,), _backward)


def avgpool_spatial(x: Tensor) -> Tensor:
    """Promedio sobre H*W por canal: (N, C, H, W) -> (N, C)"""
    n, c, h, wd = x.shape
    if h < 1 or wd < 1:
        raise ShapeError("avgpool_spatial requiere H, W >= 1")

    def _backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * wd), x.shape).copy(),)
    return make_result('avgpool_spatial', x.data.mean(axis=(2, 3)), (x,), _backward)


# =============================================================================
# ACTIVACIONES Y NORMALIZACIÓN
# =============================================================================

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax estable (resta del máximo)"""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return make_result('softmax', y, (x,), _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result('relu', np.where(mask, x.data, 0).astype(x.dtype), (x,),
                       lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """GELU con aproximación tanh"""
    v = x.data
    inner = GELU_SQRT_2_OVER_PI * (v + GELU_COEF * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def _backward(g):
        dinner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)
    return make_result('gelu', out.astype(x.dtype), (x,), _backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result('sigmoid', y.astype(x.dtype), (x,), lambda g: (g * y * (1.0 - y),))


def layernorm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
              axis: int = -1, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normaliza sobre `axis` (eje de canales) con afinidad aprendida opcional"""
    axis = axis % x.ndim
    d = x.shape[axis]
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    bshape = [1] * x.ndim
    bshape[axis] = d
    gam = gamma.data.reshape(bshape) if gamma is not None else None
    out = xhat * gam if gam is not None else xhat
    if beta is not None:
        out = out + beta.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != axis)

    def _backward(g):
        dxhat = g * gam if gam is not None else g
        gx = inv / d * (d * dxhat - dxhat.sum(axis=axis, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=axis, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=other))
        if beta is not None:
            grads.append(g.sum(axis=other))
        return tuple(grads)
    inputs = (x,) + tuple(t for t in (gamma, beta) if t is not None)
    return make_result('layernorm', out.astype(x.dtype), inputs, _backward)


# =============================================================================
# INTERPOLACIÓN
# =============================================================================

def nearest_index_map(source: int, target: int) -> np.ndarray:
    """Índice de origen para cada posición destino: floor(i * source / target)"""
    return (np.arange(target) * source) // target


def resize_nearest(x: Tensor, size: Tuple[int, int]) -> Tensor:
    """Redimensiona (N, C, H, W) a (N, C, H', W') por vecino más cercano"""
    n, c, h, wd = x.shape
    th, tw = size
    ih = nearest_index_map(h, th)
    iw = nearest_index_map(wd, tw)
    out = x.data[:, :, ih[:, None], iw[None, :]]
    rh = np.zeros((th, h), dtype=x.dtype)
    rh[np.arange(th), ih] = 1
    rw = np.zeros((tw, wd), dtype=x.dtype)
    rw[np.arange(tw), iw] = 1

    def _backward(g):
        return (np.matmul(np.matmul(rh.T, g), rw),)
    return make_result('resize_nearest', out, (x,), _backward)


def upsample_nearest2x(x: Tensor, target_hw: Optional[Tuple[int, int]] = None) -> Tensor:
    """Replica cada píxel 2x2; con target_hw usa el mapa de índices más cercano"""
    h, wd = x.shape[2:]
    return resize_nearest(x, target_hw or (2 * h, 2 * wd))


# =============================================================================
# PÉRDIDAS
# =============================================================================

def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Entropía cruzada media sobre el lote; logits (N, K), labels (N,)"""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: etiquetas {labels.shape} para logits {logits.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), labels].mean()
    probs = np.exp(log_probs)

    def _backward(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)
    return make_result('cross_entropy', np.asarray(loss, dtype=logits.dtype), (logits,), _backward)


def l1_loss(pred: Tensor, target: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Pérdida L1 media sobre las filas válidas

    Args:
        pred: (N, D)
        target: (N, D)
        mask: (N,) booleano; filas con False no contribuyen
    """
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"l1_loss: objetivo {target.shape} != predicción {pred.shape}")
    weights = np.ones(pred.shape[0], dtype=pred.dtype) if mask is None else np.asarray(mask, dtype=pred.dtype)
    denom = max(1.0, float(weights.sum()) * pred.shape[1])
    diff = pred.data - target
    loss = (np.abs(diff) * weights[:, None]).sum() / denom

    def _backward(g):
        return (np.sign(diff) * weights[:, None] * (g / denom),)
    return make_result('l1_loss', np.asarray(loss, dtype=pred.dtype), (pred,), _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiplica por un escalar constante"""
    return x * as_tensor(float(factor), x)

