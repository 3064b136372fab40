"""
Image IO - Escritura de imágenes Netpbm
=======================================
PPM (RGB) y PGM (escala de grises) binarios para las figuras de PCA y los
mapas de atención.
"""

from pathlib import Path
from typing import Union
import logging

import cv2
import numpy as np

from .exceptions import ShapeError

logger = logging.getLogger(__name__)

PXM_BINARY = [cv2.IMWRITE_PXM_BINARY, 1]


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Escala min-max a [0, 255]; un arreglo constante queda en 0"""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_ppm(path: Union[str, Path], image: np.ndarray) -> Path:
    """
    Escribe una imagen (3, H, W) como PPM binario (P6)

    Valores en [0, 1] se escalan a 8 bits; uint8 se escribe tal cual.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"write_ppm espera (3, H, W), recibido {image.shape}")
    pixels = image if image.dtype == np.uint8 else np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    bgr = np.ascontiguousarray(pixels.transpose(1, 2, 0)[:, :, ::-1])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path.with_suffix('.ppm')), bgr, PXM_BINARY)
    return path.with_suffix('.ppm')


def write_pgm(path: Union[str, Path], image: np.ndarray, rescale: bool = True) -> Path:
    """Escribe un mapa (H, W) como PGM binario (P5)"""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"write_pgm espera (H, W), recibido {image.shape}")
    pixels = to_uint8(image) if rescale else np.clip(image, 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path.with_suffix('.pgm')), np.ascontiguousarray(pixels), PXM_BINARY)
    return path.with_suffix('.pgm')


def read_netpbm(path: Union[str, Path]) -> np.ndarray:
    """Lee PPM como (3, H, W) RGB o PGM como (H, W)"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Imagen no encontrada: {path}")
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ShapeError(f"No se pudo decodificar la imagen: {path}")
    if data.ndim == 3:
        return data[:, :, ::-1].transpose(2, 0, 1).copy()
    return data
