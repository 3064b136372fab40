"""
Pydantic Models for API Request/Response
=========================================
"""

from pydantic import BaseModel, Field
from datetime import datetime
from typing import Optional, Dict, Any, List
from enum import Enum


class JobStatusEnum(str, Enum):
    """Estados posibles de un job de experimento"""
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


class ExperimentKind(str, Enum):
    """Tipos de experimento ejecutables vía API"""
    TRAIN = "train"
    ABLATE_ACP = "ablate-acp"
    ABLATE_CAT = "ablate-cat"
    ABLATE_ISOLATION = "ablate-isolation"
    GRADCHECK = "gradcheck"


# =============================================================================
# REQUEST MODELS
# =============================================================================

class ExperimentRequest(BaseModel):
    """Request para ejecutar un experimento"""
    kind: ExperimentKind = Field(description="Tipo de experimento")
    config: Dict[str, Any] = Field(
        default_factory=dict,
        description="Documento ExperimentConfig (model, data, train, preprocess)"
    )
    seed: Optional[int] = Field(
        default=None,
        description="Semilla; sobrescribe train.seed"
    )
    precision: Optional[int] = Field(
        default=None,
        description="32 o 64 bits"
    )
    values: Optional[List[int]] = Field(
        default=None,
        description="Valores de la ablación (default: los del protocolo)"
    )
    gradcheck_seeds: List[int] = Field(
        default_factory=lambda: [0, 1, 2, 3, 4],
        description="Semillas del gradcheck"
    )
    gradcheck_ops: Optional[List[str]] = Field(
        default=None,
        description="Subconjunto de casos del gradcheck"
    )


# =============================================================================
# RESPONSE MODELS
# =============================================================================

class JobStatusResponse(BaseModel):
    """Respuesta con estado del job"""
    job_id: str
    kind: str
    status: JobStatusEnum
    created_at: datetime
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    progress: Optional[str] = None
    error: Optional[str] = None


class ParameterCount(BaseModel):
    """Parámetros de una variante del modelo"""
    variant: str
    params: int


class ConfigValidationResponse(BaseModel):
    """Resultado de validar un ModelConfig"""
    valid: bool
    block_kind: str
    stage_grids: List[int]
    params: int
    comparison: List[ParameterCount]


class HealthResponse(BaseModel):
    """Respuesta del health check"""
    status: str = "healthy"
    version: str = "1.0.0"
    timestamp: datetime
