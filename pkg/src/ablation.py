"""
Ablation - Barridos de Ablación
===============================
Entrena un modelo por valor barrido con semillas fijas y emite una tabla con
una fila por valor solicitado, incluso si alguna corrida falla.

    ablate-acp        n_lpu en 1..7
    ablate-cat        L en 32..512 (dividido a escala de juguete si L > C)
    ablate-isolation  baseline, +ACP, +CAT, ambos
    compare           baseline vs EI-ViT sobre varias semillas
"""

from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union
import logging

import pandas as pd
from pydantic import ValidationError

from .config import (
    ABLATION_REPORTS_DIR, ACP_ABLATION_VALUES, CAT_ABLATION_VALUES,
    CAT_TOY_DIVISOR, COMPARISON_SEEDS, ISOLATION_VARIANTS, ExperimentConfig,
)
from .data_generator import Sample
from .exceptions import EIVitError
from .trainer import Trainer

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['mAP50', 'mAP75', 'AR', 'accuracy', 'mean_iou']
ACP_COLUMNS = ['value'] + METRIC_COLUMNS + ['params', 'status']
CAT_COLUMNS = ['value', 'L_used'] + METRIC_COLUMNS + ['params', 'status']
ISOLATION_COLUMNS = ['variant', 'name', 'use_acp', 'use_cat'] + METRIC_COLUMNS + ['params', 'status']
COMPARISON_COLUMNS = ['seed', 'variant'] + METRIC_COLUMNS + ['params', 'status']
COMPARISON_VARIANTS = ('baseline', 'enhanced')


def with_model_overrides(base: ExperimentConfig, out_dir: Path, **updates) -> ExperimentConfig:
    """Copia validada del experimento con campos de ModelConfig reemplazados"""
    raw = base.model_dump()
    model = raw['model']
    for key, value in updates.items():
        if isinstance(value, dict):
            model[key] = {**model.get(key, {}), **value}
        else:
            model[key] = value
    raw['train']['out_dir'] = str(out_dir)
    return ExperimentConfig.model_validate(raw)


def toy_concepts(value: int, channels: int, divisor: int = CAT_TOY_DIVISOR) -> int:
    """L usado a escala de juguete: value / divisor cuando value supera el ancho"""
    if value > channels:
        return max(1, value // divisor)
    return value


def _empty_metrics() -> Dict[str, float]:
    return {col: float('nan') for col in METRIC_COLUMNS}


def _run_row(build: Callable[[], ExperimentConfig], train: Sequence[Sample],
             test: Sequence[Sample], label: str) -> Dict[str, object]:
    """Entrena y evalúa una fila; los fallos quedan marcados en `status`"""
    row: Dict[str, object] = {**_empty_metrics(), 'params': 0, 'status': 'ok'}
    try:
        cfg = build()
        trainer = Trainer(cfg, train, test)
        row['params'] = trainer.model.num_parameters()
        result = trainer.train()
        record = result.final or trainer.evaluate(test)
        metrics = record.to_dict()
        row.update({col: metrics[col] for col in METRIC_COLUMNS})
        logger.info(f"Ablación {label}: AP50={record.ap50:.3f} acc={record.accuracy:.3f}")
    except (EIVitError, ValidationError, ValueError) as e:
        reason = str(e).splitlines()[0]
        logger.warning(f"Ablación {label} falló: {reason}")
        row['status'] = f"failed: {reason}"
    return row


def _write(df: pd.DataFrame, out_dir: Path, name: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    df.to_csv(path, index=False)
    logger.info(f"Tabla de ablación guardada: {path}")
    return path


def run_acp_ablation(base: ExperimentConfig, train: Sequence[Sample], test: Sequence[Sample],
                     values: Sequence[int] = ACP_ABLATION_VALUES,
                     out_dir: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """
    Barrido del número de iteraciones LPU

    Args:
        base: Experimento base (se fuerza block_kind='enhanced')
        train: Split de entrenamiento
        test: Split de evaluación
        values: Valores de n_lpu
        out_dir: Directorio de salida

    Returns:
        DataFrame con una fila por valor
    """
    out_dir = Path(out_dir) if out_dir else ABLATION_REPORTS_DIR
    rows = []
    for n in values:
        logger.info(f"Ablación ACP: n_lpu={n}")
        row = _run_row(
            lambda n=n: with_model_overrides(base, out_dir / f"acp_n{n}", block_kind='enhanced',
                                             use_acp=True, acp={'n_lpu': n}),
            train, test, f"n_lpu={n}",
        )
        rows.append({'value': n, **row})
    df = pd.DataFrame(rows, columns=ACP_COLUMNS)
    _write(df, out_dir, "ablation_acp")
    return df


def run_cat_ablation(base: ExperimentConfig, train: Sequence[Sample], test: Sequence[Sample],
                     values: Sequence[int] = CAT_ABLATION_VALUES,
                     out_dir: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Barrido del número de conceptos L"""
    out_dir = Path(out_dir) if out_dir else ABLATION_REPORTS_DIR
    width = min(base.model.dims)
    rows = []
    for value in values:
        used = toy_concepts(value, width)
        logger.info(f"Ablación CAT: L={value} (usado {used})")
        row = _run_row(
            lambda used=used: with_model_overrides(base, out_dir / f"cat_L{used}", block_kind='enhanced',
                                                   use_cat=True, cat={'num_concepts': used}),
            train, test, f"L={value}",
        )
        rows.append({'value': value, 'L_used': used, **row})
    df = pd.DataFrame(rows, columns=CAT_COLUMNS)
    _write(df, out_dir, "ablation_cat")
    return df


def run_isolation_ablation(base: ExperimentConfig, train: Sequence[Sample], test: Sequence[Sample],
                           out_dir: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Cuatro variantes: baseline, solo ACP, solo CAT y ambos"""
    out_dir = Path(out_dir) if out_dir else ABLATION_REPORTS_DIR
    rows: List[dict] = []
    for key, variant in ISOLATION_VARIANTS.items():
        logger.info(f"Ablación de aislamiento: {variant['name']}")
        row = _run_row(
            lambda key=key, variant=variant: with_model_overrides(
                base, out_dir / f"isolation_{key}", block_kind=variant['block_kind'],
                use_acp=variant['use_acp'], use_cat=variant['use_cat'],
            ),
            train, test, key,
        )
        rows.append({
            'variant': key,
            'name': variant['name'],
            'use_acp': variant['use_acp'],
            'use_cat': variant['use_cat'],
            **row,
        })
    df = pd.DataFrame(rows, columns=ISOLATION_COLUMNS)
    _write(df, out_dir, "ablation_isolation")
    return df


def run_seed_comparison(base: ExperimentConfig, train: Sequence[Sample], test: Sequence[Sample],
                        seeds: Sequence[int] = COMPARISON_SEEDS,
                        out_dir: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """
    Baseline vs EI-ViT con la misma arquitectura, datos y semillas

    Args:
        base: Experimento base (dims, depths y heads compartidos)
        train: Split de entrenamiento
        test: Split de evaluación
        seeds: Semillas de entrenamiento
        out_dir: Directorio de salida

    Returns:
        DataFrame con una fila por (semilla, variante)
    """
    out_dir = Path(out_dir) if out_dir else ABLATION_REPORTS_DIR
    rows: List[dict] = []
    for seed in seeds:
        for key in COMPARISON_VARIANTS:
            variant = ISOLATION_VARIANTS[key]

            def build(seed=seed, key=key, variant=variant) -> ExperimentConfig:
                cfg = with_model_overrides(
                    base, out_dir / f"compare_{key}_s{seed}", block_kind=variant['block_kind'],
                    use_acp=variant['use_acp'], use_cat=variant['use_cat'],
                )
                return cfg.model_copy(update={'train': cfg.train.model_copy(update={'seed': seed})})

            logger.info(f"Comparación: {variant['name']} (seed {seed})")
            row = _run_row(build, train, test, f"{key}/seed={seed}")
            rows.append({'seed': seed, 'variant': key, **row})
    df = pd.DataFrame(rows, columns=COMPARISON_COLUMNS)
    _write(df, out_dir, "comparison")
    return df


def comparison_summary(df: pd.DataFrame) -> Dict[str, object]:
    """Exactitud mediana por variante sobre las corridas exitosas"""
    ok = df[df['status'] == 'ok']
    medians = ok.groupby('variant')['accuracy'].median()
    baseline = float(medians.get('baseline', float('nan')))
    enhanced = float(medians.get('enhanced', float('nan')))
    return {
        'Semillas': int(df['seed'].nunique()),
        'Exactitud_Mediana_Baseline': baseline,
        'Exactitud_Mediana_EI': enhanced,
        'Diferencia': enhanced - baseline,
        'EI_No_Inferior': bool(enhanced >= baseline),
    }
