"""
Checkpoint - Formato Binario de Tensores Nombrados
==================================================
Disposición del archivo:

    magic   8 bytes  b"EIVTCKPT"
    version u32 LE
    hlen    u32 LE   largo del header JSON
    header  JSON utf-8: step, t_optim, config, tensors [{name, shape, offset}]
    payload float32 little-endian, tensores concatenados en orden del header

Los offsets son en bytes desde el inicio del payload.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union
import logging

import numpy as np

from .config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

PAYLOAD_DTYPE = np.dtype('<f4')


@dataclass
class Checkpoint:
    """Contenido de un checkpoint"""
    step: int
    tensors: Dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    optim_step: int = 0

    def model_state(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith('optim.')}

    def optim_state(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith('optim.')}


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray], step: int,
                    config: Optional[dict] = None, optim_step: int = 0) -> Path:
    """
    Escribe un checkpoint

    Args:
        path: Archivo destino
        tensors: Nombre -> arreglo (se almacena como float32 LE)
        step: Paso de entrenamiento
        config: Eco de la configuración (serializable a JSON)
        optim_step: Contador interno del optimizador

    Returns:
        Ruta escrita
    """
    path = Path(path)
    table = []
    chunks = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(np.asarray(array), dtype=PAYLOAD_DTYPE)
        table.append({'name': name, 'shape': list(data.shape), 'offset': offset})
        chunks.append(data.tobytes())
        offset += data.nbytes

    header = json.dumps({
        'step': int(step),
        'optim_step': int(optim_step),
        'config': config or {},
        'tensors': table,
    }, sort_keys=True).encode('utf-8')

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<II', CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for chunk in chunks:
            f.write(chunk)
    logger.info(f"Checkpoint guardado: {path} (paso {step}, {len(table)} tensores)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Lee y valida un checkpoint"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint no encontrado: {path}")
    raw = path.read_bytes()
    magic_len = len(CHECKPOINT_MAGIC)
    if raw[:magic_len] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: no es un checkpoint (magic inválido)")
    if len(raw) < magic_len + 8:
        raise CheckpointError(f"{path}: archivo truncado")
    version, header_len = struct.unpack('<II', raw[magic_len:magic_len + 8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: versión {version} no soportada")

    start = magic_len + 8
    try:
        header = json.loads(raw[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: header corrupto ({e})") from e

    payload = memoryview(raw)[start + header_len:]
    tensors = {}
    try:
        for entry in header['tensors']:
            name = entry['name']
            if name in tensors:
                raise CheckpointError(f"{path}: nombre duplicado {name}")
            shape = tuple(entry['shape'])
            count = int(np.prod(shape)) if shape else 1
            end = entry['offset'] + count * PAYLOAD_DTYPE.itemsize
            if end > len(payload):
                raise CheckpointError(f"{path}: payload truncado en {name}")
            tensors[name] = np.frombuffer(payload[entry['offset']:end], dtype=PAYLOAD_DTYPE).reshape(shape).copy()
        step = int(header['step'])
        optim_step = int(header.get('optim_step', 0))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise CheckpointError(f"{path}: header incompleto ({type(e).__name__}: {e})") from e

    return Checkpoint(
        step=step,
        tensors=tensors,
        config=header.get('config', {}),
        optim_step=optim_step,
    )
