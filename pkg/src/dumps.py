"""
Dumps - Volcado de Features y Atención por Bloque
=================================================
Ejecuta un checkpoint sobre un split y guarda, para los bloques pedidos, las
salidas (n, C, H, W) y las matrices de atención por cabeza (n, heads, T, T)
en archivos .npz que consume el módulo de análisis.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .analysis import FeatureDump
from .config import DUMPS_DIR
from .data_generator import Sample
from .data_loader import iterate_eval_batches
from .exceptions import ShapeError
from .tensor import Tensor, no_grad, precision
from .trainer import model_from_checkpoint
from .transformer import VisionTransformer

logger = logging.getLogger(__name__)


def _block_key(block: int) -> str:
    return f"block_{block:03d}"


def capture_blocks(model: VisionTransformer, samples: Sequence[Sample], preprocess_cfg,
                   blocks: Optional[Sequence[int]] = None, batch_size: int = 16,
                   bits: int = 32) -> Tuple[Dict[int, np.ndarray], Dict[int, np.ndarray], List[int]]:
    """
    Corre el modelo con captura y concatena por bloque

    Returns:
        (features por bloque, atención por bloque, etapa de cada bloque)
    """
    total = model.num_blocks
    blocks = list(range(total)) if blocks is None else list(blocks)
    for b in blocks:
        if not 0 <= b < total:
            raise ShapeError(f"bloque {b} fuera de rango (el modelo tiene {total})")

    features: Dict[int, List[np.ndarray]] = {b: [] for b in blocks}
    attentions: Dict[int, List[np.ndarray]] = {b: [] for b in blocks}
    stage_of_block: List[int] = []
    with precision(bits), no_grad():
        for batch in iterate_eval_batches(samples, batch_size, preprocess_cfg):
            output = model(Tensor(batch.images), capture=True)
            stage_of_block = output.stage_of_block
            for b in blocks:
                features[b].append(output.features[b].data.astype(np.float32))
                attentions[b].append(output.attentions[b].data.astype(np.float32))
    return (
        {b: np.concatenate(v) for b, v in features.items()},
        {b: np.concatenate(v) for b, v in attentions.items()},
        stage_of_block,
    )


def dump_model(checkpoint: Union[str, Path], samples: Sequence[Sample],
               blocks: Optional[Sequence[int]] = None, out_dir: Optional[Union[str, Path]] = None,
               model_id: Optional[str] = None, batch_size: int = 16) -> Tuple[Path, Path]:
    """
    Escribe `<model_id>_features.npz` y `<model_id>_attention.npz`

    Args:
        checkpoint: Checkpoint entrenado
        samples: Muestras a volcar (ruta de evaluación)
        blocks: Índices de bloque (base 0); None = todos
        out_dir: Directorio de salida
        model_id: Prefijo de archivos (default: nombre del checkpoint)

    Returns:
        (ruta de features, ruta de atención)
    """
    checkpoint = Path(checkpoint)
    out_dir = Path(out_dir) if out_dir else DUMPS_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    model_id = model_id or checkpoint.stem

    model, config, _ = model_from_checkpoint(checkpoint)
    features, attentions, stage_of_block = capture_blocks(
        model, samples, config.preprocess, blocks, batch_size,
    )
    meta = {
        'model_id': np.array(model_id),
        'blocks': np.array(sorted(features), dtype=np.int64),
        'stages': np.array([stage_of_block[b] for b in sorted(features)], dtype=np.int64),
        'sample_ids': np.array([s.sample_id for s in samples], dtype=np.int64),
    }
    features_path = dump_features(out_dir / f"{model_id}_features.npz", features, meta)
    attention_path = dump_attention(out_dir / f"{model_id}_attention.npz", attentions, meta)
    return features_path, attention_path


def dump_features(path: Union[str, Path], features: Dict[int, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    np.savez(path, **meta, **{_block_key(b): f for b, f in features.items()})
    logger.info(f"Features volcadas: {path} ({len(features)} bloques)")
    return path


def dump_attention(path: Union[str, Path], attentions: Dict[int, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    np.savez(path, **meta, **{_block_key(b): a for b, a in attentions.items()})
    logger.info(f"Atención volcada: {path} ({len(attentions)} bloques)")
    return path


def load_feature_dumps(path: Union[str, Path]) -> List[FeatureDump]:
    """Lee un .npz de features como una lista de FeatureDump ordenada por bloque"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dump no encontrado: {path}")
    with np.load(path) as data:
        model_id = str(data['model_id'])
        sample_ids = data['sample_ids'].tolist()
        return [
            FeatureDump(model_id, int(b), int(s), data[_block_key(int(b))], list(sample_ids))
            for b, s in zip(data['blocks'], data['stages'])
        ]


def load_attention_dumps(path: Union[str, Path]) -> Dict[int, Tuple[int, np.ndarray]]:
    """Bloque -> (etapa, atención (n, heads, T, T))"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dump no encontrado: {path}")
    with np.load(path) as data:
        return {
            int(b): (int(s), data[_block_key(int(b))])
            for b, s in zip(data['blocks'], data['stages'])
        }
