"""
Preprocess - Aumentación y Normalización
========================================
Ruta de entrenamiento: flip horizontal, resize aleatorio preservando aspecto,
crop aleatorio, descarte de cajas demasiado pequeñas, normalización por canal
y padding (abajo/derecha) con 114 hasta el tamaño objetivo.
Ruta de evaluación: solo normalización y padding.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import cv2
import numpy as np

from .config import PreprocessConfig
from .data_generator import Sample
from .exceptions import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Preprocessed:
    """Imagen normalizada (3, h, w), caja en coordenadas del lienzo y validez"""
    image: np.ndarray
    box: np.ndarray
    box_valid: bool


def _channel_stats(cfg: PreprocessConfig) -> Tuple[np.ndarray, np.ndarray]:
    means = np.asarray(cfg.means, dtype=np.float64)[:, None, None]
    stds = np.asarray(cfg.stds, dtype=np.float64)[:, None, None]
    return means, stds


def normalize(image: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """(x - mean_c) / std_c"""
    means, stds = _channel_stats(cfg)
    return (np.asarray(image, dtype=np.float64) - means) / stds


def denormalize(image: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    means, stds = _channel_stats(cfg)
    return np.asarray(image, dtype=np.float64) * stds + means


def pad_to(image: np.ndarray, height: int, width: int, value: float) -> np.ndarray:
    """Padding abajo/derecha hasta (height, width)"""
    c, h, w = image.shape
    if h > height or w > width:
        raise ShapeError(f"imagen {h}x{w} mayor que el lienzo {height}x{width}")
    out = np.full((c, height, width), value, dtype=image.dtype)
    out[:, :h, :w] = image
    return out


def _box_to_pixels(box: np.ndarray, height: int, width: int) -> np.ndarray:
    cx, cy, w, h = box
    return np.array([(cx - w / 2) * width, (cy - h / 2) * height,
                     (cx + w / 2) * width, (cy + h / 2) * height])


def _pixels_to_box(corners: np.ndarray, height: int, width: int) -> np.ndarray:
    x0, y0, x1, y1 = corners
    return np.array([(x0 + x1) / 2 / width, (y0 + y1) / 2 / height,
                     (x1 - x0) / width, (y1 - y0) / height])


def preprocess(sample: Sample, cfg: PreprocessConfig, train: bool, seed: int = 0) -> Preprocessed:
    """
    Preprocesa una muestra

    Args:
        sample: Muestra cruda con imagen en [0, 255]
        cfg: Parámetros de aumentación/normalización
        train: True aplica la ruta aleatoria de entrenamiento
        seed: Semilla explícita de la muestra (solo ruta train)

    Returns:
        Preprocessed con la imagen en el lienzo objetivo
    """
    image = np.asarray(sample.image, dtype=np.float64)
    _, height, width = image.shape
    crop = cfg.crop_size or height
    target = cfg.target_size or crop
    corners = _box_to_pixels(np.asarray(sample.box, dtype=np.float64), height, width)

    if train:
        rng = np.random.default_rng(seed)
        if rng.random() < cfg.flip_prob:
            image = image[:, :, ::-1]
            corners = np.array([width - corners[2], corners[1], width - corners[0], corners[3]])

        ratio = rng.uniform(*cfg.ratio_range)
        new_h = max(1, int(round(height * ratio)))
        new_w = max(1, int(round(width * ratio)))
        hwc = np.ascontiguousarray(image.transpose(1, 2, 0)).astype(np.float32)
        image = cv2.resize(hwc, (new_w, new_h), interpolation=cv2.INTER_LINEAR).reshape(new_h, new_w, -1)
        image = image.transpose(2, 0, 1).astype(np.float64)
        corners = corners * np.array([new_w / width, new_h / height, new_w / width, new_h / height])
        height, width = new_h, new_w

        crop_h, crop_w = min(height, crop), min(width, crop)
        top = int(rng.integers(0, height - crop_h + 1))
        left = int(rng.integers(0, width - crop_w + 1))
        image = image[:, top:top + crop_h, left:left + crop_w]
        corners = corners - np.array([left, top, left, top])
        corners = np.clip(corners, 0, [crop_w, crop_h, crop_w, crop_h])
        height, width = crop_h, crop_w

    if height > target or width > target:
        raise ShapeError(f"imagen {height}x{width} mayor que el tamaño objetivo {target}")
    canvas = pad_to(image, target, target, cfg.pad_value)
    box = _pixels_to_box(corners, target, target)
    valid = bool(box[2] >= cfg.min_box_extent and box[3] >= cfg.min_box_extent)
    return Preprocessed(image=normalize(canvas, cfg), box=box, box_valid=valid)
