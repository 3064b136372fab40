"""
Analysis - Análisis de Features y Atención
==========================================
Proyección PCA de mapas de features, similitud CKA (lineal y kernel RBF),
umbral de Otsu sobre histogramas de 256 bins, realce de mapas de atención y
rollout de atención entre bloques.

Todas las funciones son lectoras puras: nunca modifican los arreglos recibidos.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd

from .exceptions import DegenerateHistogramError, NumericError, ShapeError

logger = logging.getLogger(__name__)

OTSU_BINS = 256


@dataclass
class FeatureDump:
    """Features (n, C, H, W) de un bloque de un modelo"""
    model_id: str
    block: int
    stage: int
    features: np.ndarray
    sample_ids: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.features.ndim != 4:
            raise ShapeError(f"FeatureDump espera (n, C, H, W), recibido {self.features.shape}")
        if not self.sample_ids:
            self.sample_ids = list(range(self.features.shape[0]))

    def tokens(self, index: int) -> np.ndarray:
        """Matriz (HW, C) de la muestra `index`"""
        f = self.features[index]
        return f.reshape(f.shape[0], -1).T


@dataclass
class CkaReport:
    """Resumen de CKA por etapa"""
    stage: int
    variant: str
    mean: float
    median: float
    std: float
    n: int

    def to_dict(self) -> dict:
        return {
            'Etapa': self.stage,
            'Variante': self.variant,
            'Media': self.mean,
            'Mediana': self.median,
            'Desv_Std': self.std,
            'Muestras': self.n,
        }


# =============================================================================
# PCA
# =============================================================================

@dataclass
class PcaResult:
    components: np.ndarray          # (k, C), filas ortonormales
    explained_variance: np.ndarray  # (k,)
    explained_ratio: np.ndarray     # (k,)
    image: np.ndarray               # (k, H, W) en [0, 1]


def _as_map(f: Union[FeatureDump, np.ndarray], index: int = 0) -> np.ndarray:
    if isinstance(f, FeatureDump):
        return f.features[index]
    arr = np.asarray(f)
    if arr.ndim == 4:
        arr = arr[index]
    if arr.ndim != 3:
        raise ShapeError(f"se esperaba un mapa (C, H, W), recibido {arr.shape}")
    return arr


def pca_decompose(f: Union[FeatureDump, np.ndarray], k: int = 3, index: int = 0) -> PcaResult:
    """
    PCA de un mapa (C, H, W) tratando las H*W posiciones como muestras

    Los componentes salen de la descomposición espectral de la covarianza
    C x C; el signo se fija para que la entrada de mayor magnitud sea positiva.
    """
    fmap = _as_map(f, index).astype(np.float64)
    c, h, w = fmap.shape
    if k > c:
        raise ShapeError(f"k={k} componentes para un mapa de {c} canales")
    samples = fmap.reshape(c, h * w).T
    centered = samples - samples.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / max(1, h * w - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]

    components = eigvecs[:, :k].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1

    total = eigvals.sum()
    ratio = eigvals[:k] / total if total > 0 else np.zeros(k)
    proj = centered @ components.T
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scaled = (proj - lo) / span
    image = scaled.T.reshape(k, h, w)
    return PcaResult(components, eigvals[:k], ratio, image)


def pca_project(f: Union[FeatureDump, np.ndarray], k: int = 3, index: int = 0) -> np.ndarray:
    """Imagen (k, H, W) con los k componentes principales escalados a [0, 1]"""
    return pca_decompose(f, k, index).image


# =============================================================================
# CKA
# =============================================================================

def _check_pair(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError("CKA requiere matrices (n, p) y (n, q)")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"CKA: distinto número de filas {x.shape[0]} != {y.shape[0]}")
    if x.shape[0] < 2:
        raise ShapeError("CKA requiere n >= 2")
    return x, y


def centering_matrix(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) sobre columnas centradas"""
    x, y = _check_pair(x, y)
    x = x - x.mean(axis=0, keepdims=True)
    y = y - y.mean(axis=0, keepdims=True)
    norm_x = np.linalg.norm(x.T @ x)
    norm_y = np.linalg.norm(y.T @ y)
    if norm_x == 0 or norm_y == 0:
        raise NumericError("CKA lineal indefinido: entrada sin varianza")
    return float(np.linalg.norm(y.T @ x) ** 2 / (norm_x * norm_y))


def rbf_gram(x: np.ndarray, bandwidth: Optional[float] = None) -> np.ndarray:
    """Gram RBF exp(-d^2 / 2 sigma^2); sigma = mediana de distancias no nulas"""
    gram = x @ x.T
    diag = np.diag(gram)
    sq = np.clip(diag[:, None] + diag[None, :] - 2.0 * gram, 0.0, None)
    if bandwidth is None:
        nonzero = sq[sq > 0]
        if nonzero.size == 0:
            raise NumericError("CKA kernel indefinido: todas las filas son iguales")
        bandwidth = float(np.sqrt(np.median(nonzero)))
    return np.exp(-sq / (2.0 * bandwidth * bandwidth))


def hsic(k: np.ndarray, l: np.ndarray) -> float:
    """HSIC sin normalizar: tr(K H L H)"""
    h = centering_matrix(k.shape[0])
    return float(np.sum((h @ k @ h) * (h @ l @ h)))


def kernel_cka(x: np.ndarray, y: np.ndarray, bandwidth: Optional[float] = None) -> float:
    """HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L)) con kernels RBF"""
    x, y = _check_pair(x, y)
    k = rbf_gram(x, bandwidth)
    l = rbf_gram(y, bandwidth)
    denom = np.sqrt(hsic(k, k) * hsic(l, l))
    if denom == 0:
        raise NumericError("CKA kernel indefinido: Gram centrado nulo")
    return hsic(k, l) / denom


def cka_by_stage(dumps_a: Sequence[FeatureDump], dumps_b: Sequence[FeatureDump],
                 variant: str = 'linear') -> List[CkaReport]:
    """
    CKA por muestra entre bloques emparejados de dos modelos, agregado por etapa

    Args:
        dumps_a: Dumps del primer modelo (uno por bloque)
        dumps_b: Dumps del segundo modelo, mismo orden de bloques
        variant: 'linear' o 'kernel'
    """
    if len(dumps_a) != len(dumps_b):
        raise ShapeError(f"cantidad de bloques distinta: {len(dumps_a)} != {len(dumps_b)}")
    fn = linear_cka if variant == 'linear' else kernel_cka
    per_stage: Dict[int, List[float]] = {}
    for da, db in zip(dumps_a, dumps_b):
        n = min(da.features.shape[0], db.features.shape[0])
        for i in range(n):
            per_stage.setdefault(da.stage, []).append(fn(da.tokens(i), db.tokens(i)))

    reports = []
    for stage in sorted(per_stage):
        values = np.asarray(per_stage[stage])
        reports.append(CkaReport(
            stage=stage,
            variant=variant,
            mean=float(values.mean()),
            median=float(np.median(values)),
            std=float(values.std()),
            n=int(values.size),
        ))
        logger.info(f"CKA {variant} etapa {stage}: {values.mean():.4f} ± {values.std():.4f}")
    return reports


def cka_reports_frame(reports: Sequence[CkaReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in reports])


# =============================================================================
# OTSU Y MAPAS DE ATENCIÓN
# =============================================================================

def otsu_histogram(values: np.ndarray, bins: int = OTSU_BINS) -> Tuple[np.ndarray, np.ndarray]:
    """Histograma de `bins` bins sobre [min, max]; error si no hay varianza"""
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    lo, hi = float(flat.min()), float(flat.max())
    if not hi > lo:
        raise DegenerateHistogramError()
    return np.histogram(flat, bins=bins, range=(lo, hi))


def between_class_variance(hist: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """
    Varianza entre clases para cada corte i en 1..bins-1 (clase 0 = bins < i)

    Returns:
        Arreglo de largo bins-1; cortes con una clase vacía valen 0
    """
    p = hist.astype(np.float64) / hist.sum()
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * centers)[:-1]
    w1 = 1.0 - w0
    total_mean = float((p * centers).sum())
    m1 = total_mean - m0
    valid = (w0 > 0) & (w1 > 0)
    out = np.zeros_like(w0)
    mu0 = m0[valid] / w0[valid]
    mu1 = m1[valid] / w1[valid]
    out[valid] = w0[valid] * w1[valid] * (mu0 - mu1) ** 2
    return out


def otsu_threshold(values: np.ndarray, bins: int = OTSU_BINS) -> float:
    """
    Umbral de Otsu: borde de bin que maximiza la varianza entre clases

    Los empates se resuelven hacia el umbral más bajo. Valores >= umbral
    pertenecen a la clase alta.
    """
    hist, edges = otsu_histogram(values, bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    variance = between_class_variance(hist, centers)
    split = int(np.argmax(variance)) + 1
    return float(edges[split])


def attention_map_enhance(attn: np.ndarray) -> np.ndarray:
    """Conserva la magnitud de los valores >= umbral de Otsu y anula el resto"""
    attn = np.asarray(attn)
    threshold = otsu_threshold(attn)
    return np.where(attn >= threshold, attn, 0.0).astype(attn.dtype)


def head_average(attn: np.ndarray) -> np.ndarray:
    """(heads, T, T) o (n, heads, T, T) -> (T, T) promediando cabezas y muestras"""
    attn = np.asarray(attn, dtype=np.float64)
    while attn.ndim > 2:
        attn = attn.mean(axis=0)
    return attn


def attention_rollout(attn_list: Sequence[np.ndarray], residual: float = 0.5) -> np.ndarray:
    """
    Mapa de atención proyectado a través de varios bloques

    Cada matriz se promedia por cabezas, se mezcla con la identidad (camino
    residual), se renormaliza por filas y se compone: R = A_L ... A_1.
    """
    if not attn_list:
        raise ShapeError("attention_rollout requiere al menos una matriz")
    rollout = None
    for attn in attn_list:
        a = head_average(attn)
        if a.shape[0] != a.shape[1]:
            raise ShapeError(f"matriz de atención no cuadrada: {a.shape}")
        a = residual * np.eye(a.shape[0]) + (1.0 - residual) * a
        a = a / a.sum(axis=1, keepdims=True)
        if rollout is None:
            rollout = a
        elif rollout.shape != a.shape:
            raise ShapeError(f"rollout: bloques con distinta cantidad de tokens {rollout.shape} != {a.shape}")
        else:
            rollout = a @ rollout
    return rollout
