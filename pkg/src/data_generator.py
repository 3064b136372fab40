"""
Data Generator - Dataset Sintético de Formas Camufladas
=======================================================
Cada muestra tiene un fondo texturizado y una única forma (disco, cuadrado o
triángulo) rellena con una textura de la MISMA distribución que el fondo.
La dificultad escala el contraste del objeto: con difficulty=0 el objeto es
el propio fondo desplazado y solo se distingue por la discontinuidad del borde.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple
import logging

import cv2
import numpy as np

from .config import SHAPE_CLASSES
from .exceptions import ShapeError

logger = logging.getLogger(__name__)

MIN_IMAGE_SIDE = 8
CONTRAST_RANGE = (40.0, 80.0)


@dataclass
class Sample:
    """Imagen (3, H, W) en [0, 255], clase, caja normalizada (cx, cy, w, h) y semilla"""
    image: np.ndarray
    label: int
    box: np.ndarray
    seed: int
    sample_id: int = 0

    @property
    def class_name(self) -> str:
        return SHAPE_CLASSES[self.label]


def sample_seed(seed: int, index: int) -> int:
    """Semilla derivada por índice; independiente del orden de ejecución"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def background_texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Ruido suavizado + patrón de baja frecuencia sobre un color base, (3, H, W)"""
    base = rng.uniform(70.0, 185.0, size=3)
    noise = rng.normal(0.0, 1.0, size=(height, width, 3)).astype(np.float32)
    noise = cv2.GaussianBlur(noise, (3, 3), 0.8)

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    freq = rng.uniform(0.15, 0.45, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    pattern = np.sin(freq[0] * xx + phase[0]) * np.cos(freq[1] * yy + phase[1])

    tex = base[None, None, :] + 22.0 * pattern[:, :, None] + 18.0 * noise
    return np.clip(tex, 0.0, 255.0).transpose(2, 0, 1)


def shape_mask(label: int, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Máscara uint8 (H, W) de la forma de la clase `label`"""
    if min(height, width) < MIN_IMAGE_SIDE:
        raise ShapeError(f"la forma no cabe en una imagen de {height}x{width}")
    side = min(height, width)
    size = int(rng.integers(max(3, side // 5), side // 2 + 1))
    half = size // 2
    cy = int(rng.integers(half + 1, height - half - 1))
    cx = int(rng.integers(half + 1, width - half - 1))

    mask = np.zeros((height, width), dtype=np.uint8)
    name = SHAPE_CLASSES[label]
    if name == 'disc':
        cv2.circle(mask, (cx, cy), half, 1, thickness=-1)
    elif name == 'square':
        cv2.rectangle(mask, (cx - half, cy - half), (cx + half, cy + half), 1, thickness=-1)
    else:
        pts = np.array([[cx, cy - half], [cx - half, cy + half], [cx + half, cy + half]], dtype=np.int32)
        cv2.fillPoly(mask, [pts], 1)
    return mask


def mask_to_box(mask: np.ndarray) -> np.ndarray:
    """Caja ajustada (cx, cy, w, h) normalizada a [0, 1]"""
    height, width = mask.shape
    ys, xs = np.nonzero(mask)
    x0, x1 = xs.min(), xs.max() + 1
    y0, y1 = ys.min(), ys.max() + 1
    return np.array([
        (x0 + x1) / 2.0 / width,
        (y0 + y1) / 2.0 / height,
        (x1 - x0) / width,
        (y1 - y0) / height,
    ])


def generate_sample(index: int, height: int, width: int, difficulty: float, seed: int) -> Sample:
    """Genera la muestra `index`; determinista dado (index, seed)"""
    s = sample_seed(seed, index)
    rng = np.random.default_rng(s)
    label = index % len(SHAPE_CLASSES)

    background = background_texture(rng, height, width)
    mask = shape_mask(label, height, width, rng)
    shift = (int(rng.integers(height // 4, height - height // 4)),
             int(rng.integers(width // 4, width - width // 4)))
    foreground = np.roll(background, shift, axis=(1, 2))
    if difficulty > 0:
        offset = rng.choice([-1.0, 1.0], size=3) * rng.uniform(*CONTRAST_RANGE, size=3)
        foreground = foreground + difficulty * offset[:, None, None]

    image = np.where(mask[None].astype(bool), foreground, background)
    image = np.clip(image, 0.0, 255.0).astype(np.float32)
    return Sample(image=image, label=label, box=mask_to_box(mask), seed=s, sample_id=index)


def gen_concealed_shapes(n: int, height: int = 32, width: int = 32, difficulty: float = 0.3,
                         seed: int = 7, workers: int = 1, offset: int = 0) -> List[Sample]:
    """
    Genera n muestras con clases asignadas round-robin

    Args:
        n: Cantidad de muestras
        height: Alto
        width: Ancho
        difficulty: 0 = objeto idéntico al fondo (más difícil), 1 = máximo contraste
        seed: Semilla del dataset
        workers: Hilos de generación (el resultado no depende de este valor)
        offset: Índice inicial (separa splits con la misma semilla)

    Returns:
        Lista de Sample ordenada por índice
    """
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError(f"difficulty fuera de [0, 1]: {difficulty}")
    indices = range(offset, offset + n)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda i: generate_sample(i, height, width, difficulty, seed), indices))
    else:
        samples = [generate_sample(i, height, width, difficulty, seed) for i in indices]
    logger.info(f"Generadas {n} muestras {height}x{width} (difficulty={difficulty}, seed={seed})")
    return samples


def generate_splits(n_train: int, n_test: int, image_size: int, difficulty: float,
                    seed: int, workers: int = 1) -> Tuple[List[Sample], List[Sample]]:
    """Splits train/test disjuntos: test usa los índices a continuación de train"""
    train = gen_concealed_shapes(n_train, image_size, image_size, difficulty, seed, workers)
    test = gen_concealed_shapes(n_test, image_size, image_size, difficulty, seed, workers, offset=n_train)
    return train, test
