"""
Configuración del Enhanced Interaction ViT
==========================================
Rutas del proyecto, constantes del artefacto y modelos declarativos de
configuración (modelo, datos, preprocesamiento y entrenamiento).
"""

import json
import math
from pathlib import Path
from datetime import datetime
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError

# =============================================================================
# RUTAS DEL PROYECTO
# =============================================================================
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
RUNS_DIR = BASE_DIR / "runs"
REPORTS_DIR = BASE_DIR / "reports"
ABLATION_REPORTS_DIR = REPORTS_DIR / "ablations"
ANALYSIS_REPORTS_DIR = REPORTS_DIR / "analysis"
DUMPS_DIR = BASE_DIR / "dumps"
CONFIGS_DIR = BASE_DIR / "configs"

# =============================================================================
# CONSTANTES DEL ARTEFACTO
# =============================================================================

# Normalización por canal (RGB) y valor de relleno
NORM_MEANS = (123.675, 116.28, 103.53)
NORM_STDS = (58.395, 57.12, 57.375)
PAD_VALUE = 114.0

# GELU con aproximación tanh
GELU_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_COEF = 0.044715

LAYERNORM_EPS = 1e-5

# Formato binario de checkpoints
CHECKPOINT_MAGIC = b"EIVTCKPT"
CHECKPOINT_VERSION = 1

# Códigos de salida de la CLI
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_ERROR = 3

# Clases del dataset sintético (asignación round-robin)
SHAPE_CLASSES = ['disc', 'square', 'triangle']

# Umbrales IoU para AR (0.50:0.95:0.05)
AR_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

# Formato de fecha para nombres de archivo
DATE_FORMAT = "%Y%m%d"

# =============================================================================
# ABLACIONES
# =============================================================================
ACP_ABLATION_VALUES = [1, 2, 3, 4, 5, 6, 7]
# Una sola etapa con grilla 32x32: admite n_lpu hasta log2(32) = 5
ACP_ABLATION_CONFIG = CONFIGS_DIR / "ei_vit_acp_ablation.json"
CAT_ABLATION_VALUES = [32, 64, 128, 256, 512]
# Semillas de la comparación direccional baseline vs EI-ViT
COMPARISON_SEEDS = (0, 1, 2)

# A escala de juguete los valores de L se dividen por este factor si superan C
CAT_TOY_DIVISOR = 4

ISOLATION_VARIANTS = {
    'baseline': {
        'name': 'ViT (baseline)',
        'block_kind': 'baseline',
        'use_acp': False,
        'use_cat': False,
    },
    'acp_only': {
        'name': 'ViT + ACP',
        'block_kind': 'enhanced',
        'use_acp': True,
        'use_cat': False,
    },
    'cat_only': {
        'name': 'ViT + CAT',
        'block_kind': 'enhanced',
        'use_acp': False,
        'use_cat': True,
    },
    'enhanced': {
        'name': 'EI-ViT (ACP + CAT)',
        'block_kind': 'enhanced',
        'use_acp': True,
        'use_cat': True,
    },
}

# Colores para reportes HTML
COLORS = {
    'primary': '#1a73e8',
    'success': '#34a853',
    'warning': '#fbbc04',
    'danger': '#ea4335',
    'light': '#f8f9fa',
    'dark': '#202124'
}


def max_lpu_iterations(height: int, width: int) -> int:
    """Cota superior de iteraciones LPU: floor(log2(min(H, W)))"""
    side = min(height, width)
    if side < 1:
        return 0
    return int(math.floor(math.log2(side)))


# =============================================================================
# MODELOS DE CONFIGURACIÓN
# =============================================================================

class AcpConfig(BaseModel):
    """Aggressive Convolutional Pooling"""
    model_config = ConfigDict(extra='forbid')

    n_lpu: int = Field(default=2, ge=0, description="Iteraciones LPU + downscale")
    c0: Optional[int] = Field(default=None, ge=1, description="Canales de entrada (None = canales de la etapa)")
    kernel: Literal[3] = 3
    channel_growth: Literal[2] = 2
    upscale_hidden: Optional[int] = Field(
        default=None, ge=1,
        description="Canales intermedios de f_upscale (None = mitad por bloque)"
    )


class CatConfig(BaseModel):
    """Conceptual Attention Transformation"""
    model_config = ConfigDict(extra='forbid')

    num_concepts: Optional[int] = Field(
        default=None, ge=1,
        description="L; None = dimensión oculta de la etapa"
    )
    channels: Optional[int] = Field(default=None, ge=1)
    height: Optional[int] = Field(default=None, ge=1)
    width: Optional[int] = Field(default=None, ge=1)
    concept_mode: Literal['input-independent', 'input-dependent'] = 'input-independent'
    alpha_mode: Literal['positional-bias', 'feature-dependent'] = 'positional-bias'
    extractor_stages: int = Field(default=2, ge=1, description="Etapas conv3x3 + maxpool del extractor")
    alpha_n_lpu: int = Field(default=1, ge=0, description="Iteraciones ACP para alpha dependiente de features")


class ModelConfig(BaseModel):
    """Arquitectura ViT baseline / Enhanced Interaction"""
    model_config = ConfigDict(extra='forbid')

    image_size: int = Field(default=32, ge=1)
    in_channels: int = Field(default=3, ge=1)
    patch_size: int = Field(default=4, ge=1)
    dims: List[int] = Field(default_factory=lambda: [16, 32])
    depths: List[int] = Field(default_factory=lambda: [2, 2])
    heads: List[int] = Field(default_factory=lambda: [2, 2])
    mlp_ratio: float = Field(default=2.0, gt=0)
    qkv_bias: bool = True
    block_kind: Literal['baseline', 'enhanced'] = 'enhanced'
    use_acp: bool = True
    use_cat: bool = True
    acp: AcpConfig = Field(default_factory=AcpConfig)
    cat: CatConfig = Field(default_factory=CatConfig)
    num_classes: int = Field(default=3, ge=1)
    detection_head: bool = True

    @model_validator(mode='after')
    def _check_architecture(self):
        if not (len(self.dims) == len(self.depths) == len(self.heads)) or not self.dims:
            raise ValueError("dims, depths y heads deben tener la misma longitud (>0)")
        for dim, heads in zip(self.dims, self.heads):
            if heads < 1 or dim % heads != 0:
                raise ValueError(f"dimensión {dim} no divisible por {heads} cabezas")
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} no divisible por patch_size {self.patch_size}"
            )
        grid = self.image_size // self.patch_size
        for stage in range(1, len(self.dims)):
            if grid % 2 != 0:
                raise ValueError(f"grilla {grid} impar en la frontera de la etapa {stage}")
            grid //= 2
        if self.block_kind == 'enhanced' and self.use_acp:
            for stage, grid in enumerate(self.stage_grids()):
                bound = max_lpu_iterations(grid, grid)
                if self.acp.n_lpu > bound:
                    raise ValueError(
                        f"n_lpu={self.acp.n_lpu} excede la cota {bound} para la grilla "
                        f"{grid}x{grid} de la etapa {stage}"
                    )
        return self

    def stage_grids(self) -> List[int]:
        """Lado de la grilla de tokens en cada etapa"""
        grid = self.image_size // self.patch_size
        grids = []
        for stage in range(len(self.dims)):
            if stage > 0:
                grid //= 2
            grids.append(grid)
        return grids

    def concepts_for_stage(self, stage: int) -> int:
        """L efectivo por etapa (por defecto igual a la dimensión oculta)"""
        return self.cat.num_concepts or self.dims[stage]


class PreprocessConfig(BaseModel):
    """Aumentación y normalización de imágenes"""
    model_config = ConfigDict(extra='forbid')

    flip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    ratio_range: Tuple[float, float] = (0.1, 2.0)
    crop_size: Optional[int] = Field(default=None, ge=1, description="None = resolución del generador")
    target_size: Optional[int] = Field(default=None, ge=1, description="None = crop_size")
    min_box_extent: float = Field(default=1e-2, gt=0.0)
    means: Tuple[float, float, float] = NORM_MEANS
    stds: Tuple[float, float, float] = NORM_STDS
    pad_value: float = PAD_VALUE

    @field_validator('ratio_range')
    @classmethod
    def _check_ratio(cls, value):
        low, high = value
        if not (0 < low < high):
            raise ValueError(f"rango de ratio inválido: {value}")
        return value

    @field_validator('stds')
    @classmethod
    def _check_stds(cls, value):
        if any(s <= 0 for s in value):
            raise ValueError("las desviaciones estándar deben ser positivas")
        return value


class DataConfig(BaseModel):
    """Dataset sintético de formas camufladas"""
    model_config = ConfigDict(extra='forbid')

    n_train: int = Field(default=500, ge=1)
    n_test: int = Field(default=100, ge=1)
    image_size: int = Field(default=32, ge=8)
    difficulty: float = Field(default=0.3, ge=0.0, le=1.0)
    seed: int = 7
    workers: int = Field(default=1, ge=1)
    data_dir: Optional[str] = None


class TrainConfig(BaseModel):
    """Hiperparámetros de entrenamiento (la semilla es obligatoria)"""
    model_config = ConfigDict(extra='forbid')

    seed: int
    steps: int = Field(default=2000, ge=1)
    batch_size: int = Field(default=32, ge=1)
    optimizer: Literal['adam'] = 'adam'
    lr: float = Field(default=3e-4, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.0, ge=0)
    schedule: Literal['constant', 'cosine'] = 'constant'
    precision: Literal[32, 64] = 32
    eval_every: int = Field(default=250, ge=0)
    checkpoint_every: int = Field(default=0, ge=0)
    box_loss_weight: float = Field(default=1.0, ge=0)
    augment: bool = False
    prefetch: int = Field(default=2, ge=1)
    out_dir: str = "runs/default"


class ExperimentConfig(BaseModel):
    """Documento completo de un experimento (archivo JSON)"""
    model_config = ConfigDict(extra='forbid')

    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)


# =============================================================================
# FUNCIONES AUXILIARES
# =============================================================================

def load_experiment_config(path: Optional[Path] = None, seed: Optional[int] = None,
                           precision: Optional[int] = None,
                           out_dir: Optional[str] = None) -> ExperimentConfig:
    """
    Carga un ExperimentConfig desde JSON y aplica overrides de la CLI

    Args:
        path: Archivo JSON (None = valores por defecto)
        seed: Semilla de entrenamiento
        precision: 32 o 64 bits
        out_dir: Directorio de salida

    Returns:
        ExperimentConfig validado
    """
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Archivo de configuración no encontrado: {path}")
        try:
            raw = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON inválido en {path}: {e}") from e

    train = dict(raw.get('train', {}))
    if seed is not None:
        train['seed'] = seed
    if precision is not None:
        train['precision'] = precision
    if out_dir is not None:
        train['out_dir'] = str(out_dir)
    if 'seed' not in train:
        raise ConfigError("train.seed es obligatorio (use --seed o el archivo de configuración)")
    raw['train'] = train

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Configuración inválida: {e}") from e


def validate_model_config(data: dict) -> ModelConfig:
    """Valida un diccionario como ModelConfig, con ConfigError en caso de fallo"""
    try:
        return ModelConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"ModelConfig inválido: {e}") from e


def get_current_date_str():
    """Retorna fecha actual en formato para archivos"""
    return datetime.now().strftime(DATE_FORMAT)


def ensure_directories():
    """Crea los directorios necesarios si no existen"""
    for directory in [DATA_DIR, RUNS_DIR, ABLATION_REPORTS_DIR,
                      ANALYSIS_REPORTS_DIR, DUMPS_DIR]:
        directory.mkdir(parents=True, exist_ok=True)
