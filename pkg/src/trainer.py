"""
Trainer - Entrenamiento, Evaluación y Reanudación
=================================================
Lazo de entrenamiento determinista: inicialización con la semilla del
experimento, lotes función pura de (seed, step), pérdida entropía cruzada +
lambda * L1 de caja, Adam, evaluación periódica y checkpoints.

Al guardar un checkpoint el estado vivo se re-sincroniza con los valores
float32 almacenados, de modo que una corrida reanudada y una que continúa
producen la misma pérdida en el paso siguiente.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd

from . import ops
from .checkpoint import PAYLOAD_DTYPE, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, ModelConfig, PreprocessConfig
from .data_generator import Sample
from .data_loader import Batch, BatchProducer, assemble_batch, iterate_eval_batches
from .exceptions import CheckpointError, NumericError
from .metrics import MetricsCalculator, MetricsRecord
from .optim import Adam
from .tensor import Tensor, backward, no_grad, precision, reset_graph
from .transformer import ModelOutput, VisionTransformer

logger = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = ".eivt"


def compute_loss(output: ModelOutput, labels: np.ndarray, boxes: np.ndarray,
                 box_mask: np.ndarray, box_weight: float = 1.0) -> Tensor:
    """Entropía cruzada + box_weight * L1 sobre las cajas válidas"""
    loss = ops.cross_entropy(output.logits, labels)
    if output.boxes is not None and box_weight > 0:
        loss = loss + ops.scale(ops.l1_loss(output.boxes, boxes, box_mask), box_weight)
    return loss


@dataclass
class TrainResult:
    """Resultado de una corrida"""
    history: pd.DataFrame
    evaluations: List[MetricsRecord] = field(default_factory=list)
    final: Optional[MetricsRecord] = None
    checkpoint_path: Optional[Path] = None

    def evaluations_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.evaluations])


class Trainer:
    """Dueño único del modelo y del optimizador de una corrida"""

    def __init__(self, config: ExperimentConfig, train_samples: Sequence[Sample],
                 test_samples: Optional[Sequence[Sample]] = None,
                 out_dir: Optional[Union[str, Path]] = None):
        """
        Inicializa el entrenador

        Args:
            config: Experimento completo (modelo, datos, entrenamiento, preprocesamiento)
            train_samples: Split de entrenamiento
            test_samples: Split de evaluación (opcional)
            out_dir: Directorio de salida (default: config.train.out_dir)
        """
        self.config = config
        self.train_cfg = config.train
        self.train_samples = train_samples
        self.test_samples = test_samples
        self.out_dir = Path(out_dir or config.train.out_dir)
        self.bits = config.train.precision
        self.step = 0
        with precision(self.bits):
            self.model = VisionTransformer(config.model, seed=config.train.seed)
            self.optimizer = Adam(
                self.model.named_parameters(),
                lr=self.train_cfg.lr,
                betas=self.train_cfg.betas,
                eps=self.train_cfg.eps,
                weight_decay=self.train_cfg.weight_decay,
                schedule=self.train_cfg.schedule,
                total_steps=self.train_cfg.steps,
            )
        logger.info(
            f"Trainer listo: {config.model.block_kind}, {self.model.num_parameters():,} parámetros, "
            f"{self.bits} bits"
        )

    # -------------------------------------------------------------------------
    # Pasos
    # -------------------------------------------------------------------------

    def train_step(self, batch: Batch) -> float:
        """Forward, backward y actualización sobre un lote; retorna la pérdida"""
        with precision(self.bits):
            reset_graph()
            try:
                output = self.model(Tensor(batch.images))
                loss = compute_loss(output, batch.labels, batch.boxes, batch.box_mask,
                                    self.train_cfg.box_loss_weight)
            except NumericError as e:
                logger.error(f"Valores no finitos en el paso {batch.step}: {e}")
                raise NumericError(f"pérdida no finita en el paso {batch.step}: {e}", step=batch.step) from e
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"pérdida no finita en el paso {batch.step}", step=batch.step)
            backward(loss)
            self.optimizer.step()
            self.optimizer.zero_grad()
        return value

    def train(self, resume_from: Optional[Union[str, Path]] = None,
              steps: Optional[int] = None) -> TrainResult:
        """
        Entrena hasta `steps` (default: config.train.steps)

        Args:
            resume_from: Checkpoint desde el que continuar
            steps: Paso final exclusivo

        Returns:
            TrainResult con historial de pérdidas y evaluaciones
        """
        end = steps if steps is not None else self.train_cfg.steps
        if resume_from is not None:
            self.restore(resume_from)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        history = []
        evaluations: List[MetricsRecord] = []
        producer = BatchProducer(
            self.train_samples, self.config.preprocess, self.train_cfg.batch_size,
            self.train_cfg.seed, self.step, end, augment=self.train_cfg.augment,
            prefetch=self.train_cfg.prefetch,
        )
        for batch in producer:
            loss = self.train_step(batch)
            self.step = batch.step + 1
            history.append({'step': batch.step, 'loss': loss, 'lr': self.optimizer.current_lr()})

            if self.test_samples and self.train_cfg.eval_every and self.step % self.train_cfg.eval_every == 0:
                record = self.evaluate(self.test_samples)
                evaluations.append(record)
                logger.info(
                    f"Paso {self.step}: loss={loss:.4f} acc={record.accuracy:.3f} "
                    f"IoU={record.mean_iou:.3f} AP50={record.ap50:.3f}"
                )
            if self.train_cfg.checkpoint_every and self.step % self.train_cfg.checkpoint_every == 0:
                self.save(self.out_dir / f"step_{self.step:06d}{CHECKPOINT_SUFFIX}")

        final = self.evaluate(self.test_samples) if self.test_samples else None
        if final is not None and (not evaluations or evaluations[-1].step != final.step):
            evaluations.append(final)
        checkpoint_path = self.save(self.out_dir / f"final{CHECKPOINT_SUFFIX}")

        result = TrainResult(pd.DataFrame(history, columns=['step', 'loss', 'lr']),
                             evaluations, final, checkpoint_path)
        result.history.to_csv(self.out_dir / "train_log.csv", index=False)
        if evaluations:
            result.evaluations_frame().to_csv(self.out_dir / "metrics.csv", index=False)
        return result

    def evaluate(self, samples: Sequence[Sample], batch_size: Optional[int] = None) -> MetricsRecord:
        """Métricas sobre un split con la ruta de preprocesamiento de evaluación"""
        return evaluate_model(self.model, samples, self.config.preprocess,
                              batch_size or self.train_cfg.batch_size, self.bits,
                              self.train_cfg.box_loss_weight, self.step)

    # -------------------------------------------------------------------------
    # Persistencia
    # -------------------------------------------------------------------------

    def save(self, path: Union[str, Path]) -> Path:
        """Guarda modelo + momentos y re-sincroniza el estado vivo a float32"""
        tensors = dict(self.model.state_dict())
        tensors.update(self.optimizer.state_arrays())
        path = save_checkpoint(path, tensors, self.step,
                               self.config.model_dump(mode='json'), self.optimizer.t)
        self._resync()
        return path

    def _resync(self) -> None:
        for _, p in self.model.named_parameters():
            p.data = p.data.astype(PAYLOAD_DTYPE).astype(p.dtype)
        for store in (self.optimizer.m, self.optimizer.v):
            for name, arr in store.items():
                store[name] = arr.astype(PAYLOAD_DTYPE).astype(arr.dtype)

    def restore(self, path: Union[str, Path]) -> int:
        """Carga pesos, momentos y paso desde un checkpoint"""
        ckpt = load_checkpoint(path)
        self.model.load_state_dict(ckpt.model_state())
        self.optimizer.load_state_arrays(ckpt.optim_state(), ckpt.optim_step)
        self.step = ckpt.step
        logger.info(f"Reanudando desde {path} en el paso {self.step}")
        return self.step


def evaluate_model(model: VisionTransformer, samples: Sequence[Sample], cfg: PreprocessConfig,
                   batch_size: int = 32, bits: int = 32, box_weight: float = 1.0,
                   step: int = 0) -> MetricsRecord:
    """Evalúa un modelo sin grafo de gradiente"""
    labels, logits, boxes, pred_boxes = [], [], [], []
    total_loss = 0.0
    with precision(bits), no_grad():
        for batch in iterate_eval_batches(samples, batch_size, cfg):
            output = model(Tensor(batch.images))
            loss = compute_loss(output, batch.labels, batch.boxes, batch.box_mask, box_weight)
            total_loss += loss.item() * len(batch.labels)
            labels.append(batch.labels)
            logits.append(output.logits.data)
            boxes.append(batch.boxes)
            if output.boxes is not None:
                pred_boxes.append(output.boxes.data)
    calc = MetricsCalculator.from_predictions(
        np.concatenate(labels), np.concatenate(logits), np.concatenate(boxes),
        np.concatenate(pred_boxes) if pred_boxes else None,
    )
    return calc.get_record(step=step, loss=total_loss / max(1, len(samples)))


def model_from_checkpoint(path: Union[str, Path], bits: int = 32) -> Tuple[VisionTransformer, ExperimentConfig, int]:
    """Reconstruye el modelo a partir del eco de configuración del checkpoint"""
    ckpt = load_checkpoint(path)
    if 'model' not in ckpt.config:
        raise CheckpointError(f"{path}: el checkpoint no contiene la configuración del modelo")
    config = ExperimentConfig.model_validate(ckpt.config)
    with precision(bits):
        model = VisionTransformer(config.model, seed=config.train.seed)
        model.load_state_dict(ckpt.model_state())
    return model, config, ckpt.step


def evaluate_checkpoint(path: Union[str, Path], samples: Sequence[Sample],
                        batch_size: int = 32) -> MetricsRecord:
    model, config, step = model_from_checkpoint(path, bits=32)
    return evaluate_model(model, samples, config.preprocess, batch_size, 32,
                          config.train.box_loss_weight, step)


def overfit_single_batch(model_cfg: ModelConfig, samples: Sequence[Sample], steps: int = 50,
                         lr: float = 3e-3, seed: int = 0, bits: int = 32,
                         batch_size: int = 8) -> List[float]:
    """Entrena repetidamente sobre un único lote fijo; retorna las pérdidas por paso"""
    cfg = ExperimentConfig.model_validate({
        'model': model_cfg.model_dump(),
        'train': {'seed': seed, 'steps': steps, 'lr': lr, 'precision': bits, 'batch_size': batch_size},
    })
    trainer = Trainer(cfg, samples)
    batch = assemble_batch(samples, np.arange(min(batch_size, len(samples))), cfg.preprocess, train=False)
    return [trainer.train_step(batch) for _ in range(steps)]
