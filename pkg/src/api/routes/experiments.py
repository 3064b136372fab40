"""
Experiment Routes - Endpoints para lanzar y consultar experimentos
==================================================================
"""

import json
import logging
from datetime import datetime
from typing import Any, Dict, List

import numpy as np
import pandas as pd
from fastapi import APIRouter, File, HTTPException, UploadFile
from pydantic import ValidationError

from src.api.jobs import JobStatus, job_manager
from src.api.models import (
    ConfigValidationResponse, ExperimentKind, ExperimentRequest,
    JobStatusEnum, JobStatusResponse, ParameterCount,
)
from src.config import RUNS_DIR, ExperimentConfig
from src.exceptions import ConfigError, EIVitError

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/v1/experiments", tags=["Experiments"])


def _records(df: pd.DataFrame) -> List[Dict[str, Any]]:
    """Filas JSON-seguras (NaN -> None, tipos numpy -> Python)"""
    clean = df.astype(object).where(pd.notna(df), None)
    return [
        {k: (v.item() if isinstance(v, np.generic) else v) for k, v in row.items()}
        for row in clean.to_dict(orient='records')
    ]


def _status_response(job) -> JobStatusResponse:
    return JobStatusResponse(
        job_id=job.job_id,
        kind=job.kind,
        status=JobStatusEnum(job.status.value),
        created_at=job.created_at,
        started_at=job.started_at,
        completed_at=job.completed_at,
        progress=job.progress,
        error=job.error
    )


def build_config(request: ExperimentRequest) -> ExperimentConfig:
    raw = json.loads(json.dumps(request.config))
    train = raw.setdefault('train', {})
    if request.seed is not None:
        train['seed'] = request.seed
    if request.precision is not None:
        train['precision'] = request.precision
    if request.kind != ExperimentKind.GRADCHECK and 'seed' not in train:
        raise ConfigError("train.seed es obligatorio")
    train.setdefault('seed', 0)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Configuración inválida: {e}") from e


def run_experiment_task(job_id: str, request: ExperimentRequest):
    """
    Ejecuta el experimento en background.
    Esta función corre en un thread separado.
    """
    try:
        # Imports diferidos: evitan cargar el stack numérico al iniciar el servidor
        from src.ablation import run_acp_ablation, run_cat_ablation, run_isolation_ablation
        from src.data_generator import generate_splits
        from src.gradcheck import run_gradcheck_suite
        from src.trainer import Trainer

        job_manager.update_status(job_id, JobStatus.RUNNING, progress="Validando configuración...")
        cfg = build_config(request)
        out_dir = RUNS_DIR / f"api_{job_id}"

        if request.kind == ExperimentKind.GRADCHECK:
            job_manager.update_status(job_id, JobStatus.RUNNING, progress="Ejecutando gradcheck...")
            df = run_gradcheck_suite(seeds=request.gradcheck_seeds, names=request.gradcheck_ops)
            job_manager.set_result(job_id, {
                "job_id": job_id,
                "kind": request.kind.value,
                "all_passed": bool(df['passed'].all()),
                "rows": _records(df),
            })
            return

        job_manager.update_status(job_id, JobStatus.RUNNING, progress="Generando datos...")
        d = cfg.data
        train, test = generate_splits(d.n_train, d.n_test, d.image_size, d.difficulty, d.seed, d.workers)

        job_manager.update_status(job_id, JobStatus.RUNNING, progress=f"Ejecutando {request.kind.value}...")
        kwargs = {'values': request.values} if request.values else {}
        if request.kind == ExperimentKind.TRAIN:
            trainer = Trainer(cfg, train, test, out_dir)
            run = trainer.train()
            result = {
                "final": run.final.to_dict() if run.final else None,
                "evaluations": _records(run.evaluations_frame()) if run.evaluations else [],
                "last_loss": float(run.history['loss'].iloc[-1]),
                "params": trainer.model.num_parameters(),
                "checkpoint_path": str(run.checkpoint_path),
            }
        elif request.kind == ExperimentKind.ABLATE_ACP:
            result = {"rows": _records(run_acp_ablation(cfg, train, test, out_dir=out_dir, **kwargs))}
        elif request.kind == ExperimentKind.ABLATE_CAT:
            result = {"rows": _records(run_cat_ablation(cfg, train, test, out_dir=out_dir, **kwargs))}
        else:
            result = {"rows": _records(run_isolation_ablation(cfg, train, test, out_dir=out_dir))}

        result.update({"job_id": job_id, "kind": request.kind.value,
                       "completed": datetime.now().isoformat()})
        job_manager.set_result(job_id, result)
        logger.info(f"Job {job_id} completado exitosamente")

    except Exception as e:
        logger.error(f"Job {job_id} falló: {e}")
        job_manager.update_status(job_id, JobStatus.FAILED, error=str(e))


@router.post("/run", response_model=JobStatusResponse)
async def run_experiment(request: ExperimentRequest):
    """
    Inicia un experimento de forma asíncrona.

    Retorna un job_id para consultar el estado y resultado.
    """
    job = job_manager.create_job(request.kind.value, request.model_dump(mode='json'))
    job_manager.submit(job, lambda job_id: run_experiment_task(job_id, request))
    return _status_response(job)


@router.post("/validate-config", response_model=ConfigValidationResponse)
async def validate_config(file: UploadFile = File(...)):
    """
    Valida un archivo JSON (ExperimentConfig o ModelConfig) y retorna
    el conteo de parámetros baseline vs enhanced.
    """
    from src.config import validate_model_config
    from src.transformer import count_params, parameter_table

    try:
        raw = json.loads((await file.read()).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HTTPException(status_code=422, detail=f"JSON inválido: {e}")
    if not isinstance(raw, dict):
        raise HTTPException(status_code=422, detail="Se esperaba un objeto JSON")

    try:
        model_cfg = validate_model_config(raw['model'] if 'model' in raw else raw)
    except EIVitError as e:
        raise HTTPException(status_code=422, detail=str(e))

    return ConfigValidationResponse(
        valid=True,
        block_kind=model_cfg.block_kind,
        stage_grids=model_cfg.stage_grids(),
        params=count_params(model_cfg),
        comparison=[ParameterCount(variant=k, params=n) for k, n in parameter_table(model_cfg)],
    )


@router.get("/{job_id}", response_model=JobStatusResponse)
async def get_job_status(job_id: str):
    """Consulta el estado de un job"""
    job = job_manager.get_job(job_id)
    if not job:
        raise HTTPException(status_code=404, detail=f"Job {job_id} no encontrado")
    return _status_response(job)


@router.get("/{job_id}/result")
async def get_job_result(job_id: str):
    """
    Obtiene el resultado completo de un experimento.

    Solo disponible cuando el job está en estado COMPLETED.
    """
    job = job_manager.get_job(job_id)
    if not job:
        raise HTTPException(status_code=404, detail=f"Job {job_id} no encontrado")

    if job.status == JobStatus.PENDING:
        raise HTTPException(status_code=202, detail="Job pendiente de ejecución")

    if job.status == JobStatus.RUNNING:
        raise HTTPException(status_code=202, detail=f"Job en progreso: {job.progress}")

    if job.status == JobStatus.FAILED:
        raise HTTPException(status_code=500, detail=f"Job falló: {job.error}")

    return job.result


@router.get("/", response_model=list[JobStatusResponse])
async def list_jobs(limit: int = 10):
    """Lista los jobs más recientes"""
    return [_status_response(job) for job in job_manager.list_jobs(limit)]
