"""
Metrics - Métricas de Clasificación y Detección de Juguete
==========================================================
Una caja por imagen:
    AP@tau = fracción de muestras con clase correcta Y IoU >= tau
    AR     = promedio sobre tau en {0.50, 0.55, ..., 0.95} de la fracción
             de muestras con IoU >= tau (sin considerar la clase)
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence
import logging

import numpy as np
import pandas as pd

from .config import AR_IOU_THRESHOLDS, SHAPE_CLASSES

logger = logging.getLogger(__name__)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    IoU por fila entre cajas (cx, cy, w, h)

    Args:
        a: (N, 4)
        b: (N, 4)

    Returns:
        (N,) en [0, 1]
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    ax0, ay0 = a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2
    ax1, ay1 = a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2
    bx0, by0 = b[:, 0] - b[:, 2] / 2, b[:, 1] - b[:, 3] / 2
    bx1, by1 = b[:, 0] + b[:, 2] / 2, b[:, 1] + b[:, 3] / 2
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None)
    inter = iw * ih
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@dataclass
class MetricsRecord:
    """Métricas de un paso de evaluación"""
    step: int
    loss: float
    accuracy: float
    mean_iou: float
    ap50: float
    ap75: float
    ar: float

    def to_dict(self) -> dict:
        return {
            'step': self.step,
            'loss': self.loss,
            'accuracy': self.accuracy,
            'mean_iou': self.mean_iou,
            'mAP50': self.ap50,
            'mAP75': self.ap75,
            'AR': self.ar,
        }


class MetricsCalculator:
    """Calcula métricas a partir de un DataFrame de predicciones"""

    def __init__(self, df: pd.DataFrame):
        """
        Inicializa el calculador

        Args:
            df: Columnas label, pred_label, iou
        """
        self.df = df.copy()
        self._prepare_data()

    @classmethod
    def from_predictions(cls, labels: np.ndarray, logits: np.ndarray,
                         boxes: np.ndarray, pred_boxes: Optional[np.ndarray]) -> 'MetricsCalculator':
        labels = np.asarray(labels)
        pred_labels = np.asarray(logits).argmax(axis=1)
        if pred_boxes is None:
            iou = np.zeros(len(labels))
        else:
            iou = box_iou(pred_boxes, boxes)
        return cls(pd.DataFrame({'label': labels, 'pred_label': pred_labels, 'iou': iou}))

    def _prepare_data(self):
        self.df['_correct'] = self.df['label'] == self.df['pred_label']

    def accuracy(self) -> float:
        return float(self.df['_correct'].mean()) if len(self.df) else 0.0

    def mean_iou(self) -> float:
        return float(self.df['iou'].mean()) if len(self.df) else 0.0

    def average_precision(self, threshold: float) -> float:
        if not len(self.df):
            return 0.0
        return float((self.df['_correct'] & (self.df['iou'] >= threshold)).mean())

    def average_recall(self, thresholds: Sequence[float] = AR_IOU_THRESHOLDS) -> float:
        if not len(self.df):
            return 0.0
        return float(np.mean([(self.df['iou'] >= t).mean() for t in thresholds]))

    def get_record(self, step: int = 0, loss: float = math.nan) -> MetricsRecord:
        return MetricsRecord(
            step=step,
            loss=loss,
            accuracy=self.accuracy(),
            mean_iou=self.mean_iou(),
            ap50=self.average_precision(0.5),
            ap75=self.average_precision(0.75),
            ar=self.average_recall(),
        )

    def get_class_summary_df(self) -> pd.DataFrame:
        """Exactitud e IoU medio por clase"""
        summary = self.df.groupby('label').agg(
            Muestras=('label', 'size'),
            Exactitud=('_correct', 'mean'),
            IoU_Medio=('iou', 'mean'),
        ).reset_index()
        summary['Clase'] = summary['label'].map(
            lambda i: SHAPE_CLASSES[i] if 0 <= i < len(SHAPE_CLASSES) else str(i)
        )
        return summary[['Clase', 'Muestras', 'Exactitud', 'IoU_Medio']]
