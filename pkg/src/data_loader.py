"""
Data Loader - Persistencia del Dataset y Productor de Lotes
===========================================================
Guarda/carga splits como `<split>.npy` (n, 3, H, W) float32 más un
`manifest.csv` compartido (split, sample_id, label, cx, cy, w, h, seed), y
entrega lotes preprocesados desde un hilo productor en orden de paso.
"""

import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from .config import DATA_DIR, PreprocessConfig
from .data_generator import Sample
from .preprocess import preprocess

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ['split', 'sample_id', 'label', 'cx', 'cy', 'w', 'h', 'seed']


class DataLoader:
    """Lectura y escritura de splits del dataset en un directorio"""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory is not None else DATA_DIR

    @property
    def manifest_path(self) -> Path:
        return self.directory / MANIFEST_NAME

    def save_split(self, samples: Sequence[Sample], split: str) -> Path:
        """
        Escribe las imágenes del split y reemplaza sus filas del manifiesto

        Args:
            samples: Muestras del split
            split: Nombre del split ('train', 'test', ...)

        Returns:
            Ruta del archivo .npy
        """
        self.directory.mkdir(parents=True, exist_ok=True)
        images = np.stack([s.image for s in samples]).astype('<f4')
        array_path = self.directory / f"{split}.npy"
        np.save(array_path, images)

        rows = pd.DataFrame([{
            'split': split,
            'sample_id': s.sample_id,
            'label': s.label,
            'cx': float(s.box[0]),
            'cy': float(s.box[1]),
            'w': float(s.box[2]),
            'h': float(s.box[3]),
            'seed': s.seed,
        } for s in samples], columns=MANIFEST_COLUMNS)

        if self.manifest_path.exists():
            existing = pd.read_csv(self.manifest_path)
            rows = pd.concat([existing[existing['split'] != split], rows], ignore_index=True)
        rows.to_csv(self.manifest_path, index=False)
        logger.info(f"Split '{split}' guardado: {len(samples)} muestras en {array_path}")
        return array_path

    def load_split(self, split: str) -> List[Sample]:
        """Reconstruye las muestras de un split"""
        array_path = self.directory / f"{split}.npy"
        if not array_path.exists():
            raise FileNotFoundError(f"Split no encontrado: {array_path}")
        if not self.manifest_path.exists():
            raise FileNotFoundError(f"Manifiesto no encontrado: {self.manifest_path}")

        images = np.load(array_path)
        manifest = pd.read_csv(self.manifest_path)
        manifest = manifest[manifest['split'] == split].reset_index(drop=True)
        if len(manifest) != len(images):
            raise ValueError(
                f"Manifiesto inconsistente para '{split}': {len(manifest)} filas, {len(images)} imágenes"
            )

        samples = [
            Sample(
                image=images[i].astype(np.float32),
                label=int(row['label']),
                box=row[['cx', 'cy', 'w', 'h']].to_numpy(dtype=np.float64),
                seed=int(row['seed']),
                sample_id=int(row['sample_id']),
            )
            for i, row in manifest.iterrows()
        ]
        logger.info(f"Split '{split}' cargado: {len(samples)} muestras")
        return samples

    def available_splits(self) -> List[str]:
        return sorted(p.stem for p in self.directory.glob("*.npy"))


def save_dataset(directory: Path, train: Sequence[Sample], test: Sequence[Sample]) -> DataLoader:
    """Función de conveniencia para persistir ambos splits"""
    loader = DataLoader(directory)
    loader.save_split(train, 'train')
    loader.save_split(test, 'test')
    return loader


def load_dataset(directory: Path) -> tuple:
    """Retorna (train, test)"""
    loader = DataLoader(directory)
    return loader.load_split('train'), loader.load_split('test')


# =============================================================================
# LOTES
# =============================================================================

@dataclass
class Batch:
    """Lote preprocesado del paso `step`"""
    step: int
    images: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray
    box_mask: np.ndarray
    indices: np.ndarray


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Índices del lote de un paso, función pura de (seed, step)"""
    rng = np.random.default_rng([seed, step])
    return rng.choice(n, size=batch_size, replace=batch_size > n)


def assemble_batch(samples: Sequence[Sample], indices: Sequence[int], cfg: PreprocessConfig,
                   train: bool, seed: int = 0, step: int = 0) -> Batch:
    """Preprocesa y apila las muestras indicadas"""
    items = []
    for j, idx in enumerate(indices):
        item_seed = int(np.random.SeedSequence([seed, step, j]).generate_state(1)[0])
        items.append(preprocess(samples[int(idx)], cfg, train=train, seed=item_seed))
    return Batch(
        step=step,
        images=np.stack([it.image for it in items]),
        labels=np.array([samples[int(i)].label for i in indices], dtype=np.int64),
        boxes=np.stack([it.box for it in items]),
        box_mask=np.array([it.box_valid for it in items], dtype=bool),
        indices=np.asarray(indices),
    )


def make_batch(samples: Sequence[Sample], step: int, batch_size: int, seed: int,
               cfg: PreprocessConfig, augment: bool = False) -> Batch:
    return assemble_batch(samples, batch_indices(len(samples), batch_size, seed, step),
                          cfg, train=augment, seed=seed, step=step)


def iterate_eval_batches(samples: Sequence[Sample], batch_size: int,
                         cfg: PreprocessConfig) -> Iterator[Batch]:
    """Lotes secuenciales sin aumentación"""
    for start in range(0, len(samples), batch_size):
        idx = np.arange(start, min(start + batch_size, len(samples)))
        yield assemble_batch(samples, idx, cfg, train=False, step=start)


_END = object()


class BatchProducer:
    """
    Hilo productor que prepara los lotes [start_step, end_step) en una cola
    acotada. Un solo productor garantiza el orden por índice de lote.
    """

    def __init__(self, samples: Sequence[Sample], cfg: PreprocessConfig, batch_size: int,
                 seed: int, start_step: int, end_step: int, augment: bool = False,
                 prefetch: int = 2):
        self.samples = samples
        self.cfg = cfg
        self.batch_size = batch_size
        self.seed = seed
        self.start_step = start_step
        self.end_step = end_step
        self.augment = augment
        self._queue: queue.Queue = queue.Queue(maxsize=prefetch)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="batch-producer", daemon=True)

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self) -> None:
        try:
            for step in range(self.start_step, self.end_step):
                batch = make_batch(self.samples, step, self.batch_size, self.seed,
                                   self.cfg, self.augment)
                if not self._put(batch):
                    return
        except Exception as e:
            logger.error(f"Error en el productor de lotes: {e}")
            self._put(e)
            return
        self._put(_END)

    def __iter__(self) -> Iterator[Batch]:
        if not self._thread.is_alive():
            self._thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is _END:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.close()

    def close(self) -> None:
        self._stop.set()
