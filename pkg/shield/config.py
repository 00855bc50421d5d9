from dataclasses import asdict, dataclass, field, fields
import json
import os
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from loguru import logger

from shield.errors import ConfigError

# Load environment variables from .env file if it exists
load_dotenv()

# Paths
PROJ_ROOT = Path(__file__).resolve().parents[1]
logger.info(f"PROJ_ROOT path is: {PROJ_ROOT}")

DATA_DIR = PROJ_ROOT / "data"
RAW_DATA_DIR = DATA_DIR / "raw"
INTERIM_DATA_DIR = DATA_DIR / "interim"
PROCESSED_DATA_DIR = DATA_DIR / "processed"
EXTERNAL_DATA_DIR = DATA_DIR / "external"

MODELS_DIR = PROJ_ROOT / "models"

REPORTS_DIR = PROJ_ROOT / "reports"
FIGURES_DIR = REPORTS_DIR / "figures"

PACKAGE_DATA_DIR = Path(__file__).resolve().parent / "data"
BASE_VOCAB_PATH = PACKAGE_DATA_DIR / "base_vocab.txt"

# Credenciales y nivel de log
LLM_API_KEY_ENV = "SHIELD_LLM_API_KEY"
LLM_ENDPOINT_ENV = "SHIELD_LLM_ENDPOINT"
LOG_LEVEL = os.getenv("SHIELD_LOG_LEVEL", "INFO")

# ======================================================
# Hiperparámetros por defecto
# ======================================================
MICROS_PER_MINUTE = 60 * 1_000_000

WINDOW_MINUTES = 30.0
TOP_K_PCT = 0.10
MAX_WINDOWS = 3
T_NBR = 500
PROFILE_RATIO = 0.5
NUM_MASKS = 5
DEFAULT_SEED = 7

SUMMARY_BYPASS_THRESHOLD = 2000
MAX_REJECT_RATIO = 0.01
OCSVM_NU = 0.05
TOKEN_BUDGET = 100_000

MAE_DIM = 128
MAE_LAYERS = 4
MAE_HEADS = 4
MAE_MAX_SEQ_LEN = 128
ENCODE_MASK_RANGE = (0.15, 0.30)
DECODE_MASK_RANGE = (0.50, 0.70)
MAE_LR = 1e-4
MAE_BATCH_SIZE = 64
MAE_EPOCHS = 10

# If tqdm is installed, configure loguru with tqdm.write
# https://github.com/Delgan/loguru/issues/135
try:
    from tqdm import tqdm

    logger.remove(0)
    logger.add(lambda msg: tqdm.write(msg, end=""), colorize=True, level=LOG_LEVEL)
except (ModuleNotFoundError, ValueError):
    pass


# ======================================================
# Configuración del pipeline
# ======================================================
@dataclass
class MaeHyper:
    dim: int = MAE_DIM
    layers: int = MAE_LAYERS
    heads: int = MAE_HEADS
    max_seq_len: int = MAE_MAX_SEQ_LEN
    encode_mask_range: tuple[float, float] = ENCODE_MASK_RANGE
    decode_mask_range: tuple[float, float] = DECODE_MASK_RANGE
    dropout: float = 0.1
    lr: float = MAE_LR
    batch_size: int = MAE_BATCH_SIZE
    epochs: int = MAE_EPOCHS

    def validate(self) -> None:
        enc_lo, enc_hi = self.encode_mask_range
        dec_lo, dec_hi = self.decode_mask_range
        if not (0.15 <= enc_lo <= enc_hi <= 0.30):
            raise ConfigError(f"encode_mask_range fuera de [0.15, 0.30]: {self.encode_mask_range}")
        if not (0.50 <= dec_lo <= dec_hi <= 0.70):
            raise ConfigError(f"decode_mask_range fuera de [0.50, 0.70]: {self.decode_mask_range}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim={self.dim} no es divisible entre heads={self.heads}")
        for name in ("dim", "layers", "heads", "max_seq_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} debe ser >= 1")


@dataclass
class HyperParams:
    window_minutes: float = WINDOW_MINUTES
    stride_minutes: float | None = None
    k_pct: float = TOP_K_PCT
    c: int = MAX_WINDOWS
    t_nbr: int = T_NBR
    r: float = PROFILE_RATIO
    m: int = NUM_MASKS
    seed: int = DEFAULT_SEED
    summary_bypass: int = SUMMARY_BYPASS_THRESHOLD

    @property
    def w_l(self) -> int:
        """Duración de la ventana en microsegundos."""
        return int(round(self.window_minutes * MICROS_PER_MINUTE))

    @property
    def stride(self) -> int:
        minutes = self.window_minutes if self.stride_minutes is None else self.stride_minutes
        return int(round(minutes * MICROS_PER_MINUTE))

    def validate(self) -> None:
        if self.w_l <= 0 or self.stride <= 0:
            raise ConfigError("window_minutes y stride_minutes deben ser > 0")
        for name in ("k_pct", "r"):
            value = getattr(self, name)
            if not (0.0 < value <= 1.0):
                raise ConfigError(f"{name}={value} debe estar en (0, 1]")
        for name in ("c", "t_nbr", "m"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} debe ser >= 1")


@dataclass
class ProviderConfig:
    # "mock:<dir>" o "http"
    spec: str = "mock:fixtures"
    endpoint: str | None = None
    model_id: str = "deepseek-r1"
    timeout_s: float = 120.0
    token_budget: int = TOKEN_BUDGET
    max_in_flight: int = 2


@dataclass
class Components:
    mae: bool = True
    evidence: bool = True
    profile: bool = True
    investigation: bool = True


@dataclass
class PipelineConfig:
    train_log: Path | None = None
    test_log: Path | None = None
    log_format: str = "jsonl-generic"
    model_path: Path | None = None
    profile_path: Path | None = None
    ground_truth: Path | None = None
    out_dir: Path = PROCESSED_DATA_DIR
    env_description: str = "a Linux host"
    hyper: HyperParams = field(default_factory=HyperParams)
    mae: MaeHyper = field(default_factory=MaeHyper)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    components: Components = field(default_factory=Components)

    def validate(self) -> "PipelineConfig":
        self.hyper.validate()
        self.mae.validate()
        if self.log_format not in ("jsonl-generic", "csv-generic"):
            raise ConfigError(f"Formato de log no soportado: {self.log_format}")
        if self.test_log is None:
            raise ConfigError("test_log es obligatorio")
        if self.components.mae and self.train_log is None and self.model_path is None:
            raise ConfigError("Se requiere train_log o un modelo MAE en caché (model_path)")
        return self

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))

    def digest_of(self, *sections: str) -> str:
        from shield.events import digest_text

        data = self.to_dict()
        return digest_text(json.dumps({s: data[s] for s in sections}, sort_keys=True))


_PATH_FIELDS = ("train_log", "test_log", "model_path", "profile_path", "ground_truth", "out_dir")
_SECTIONS = {
    "hyper": HyperParams,
    "mae": MaeHyper,
    "provider": ProviderConfig,
    "components": Components,
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def _build_section(cls, raw: dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"Claves desconocidas en {cls.__name__}: {sorted(unknown)}")
    values = dict(raw)
    for name in ("encode_mask_range", "decode_mask_range"):
        if name in values:
            values[name] = tuple(values[name])
    return cls(**values)


def _parse_override(override: str) -> tuple[list[str], Any]:
    if "=" not in override:
        raise ConfigError(f"Override inválido (se espera clave=valor): {override}")
    key, raw_value = override.split("=", 1)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    return key.strip().split("."), value


def config_from_dict(raw: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    """
    Construye un PipelineConfig desde un diccionario (p. ej. el contenido de pipeline.json).

    Las rutas relativas se resuelven contra `base_dir` (el directorio del archivo de
    configuración) cuando se indica.
    """
    raw = dict(raw)
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, raw.pop(name, {}) or {})
    for name in _PATH_FIELDS:
        value = raw.pop(name, None)
        if value is not None:
            path = Path(value)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            kwargs[name] = path
    for name in ("log_format", "env_description"):
        if name in raw:
            kwargs[name] = raw.pop(name)
    if raw:
        raise ConfigError(f"Claves desconocidas en la configuración: {sorted(raw)}")

    # el directorio del proveedor mock también es relativo al archivo de configuración
    provider = kwargs["provider"]
    if base_dir is not None and provider.spec.startswith("mock:"):
        directory = Path(provider.spec.split(":", 1)[1])
        if not directory.is_absolute():
            provider.spec = f"mock:{base_dir / directory}"
    return PipelineConfig(**kwargs)


def load_config(path: Path | None, overrides: list[str] | None = None) -> PipelineConfig:
    """
    Carga la configuración del pipeline desde un archivo JSON y aplica los overrides.

    Parámetros
    ----------
    path : Path | None
        Archivo JSON con la configuración. Si es None se parte de los valores por defecto.
    overrides : list[str], opcional
        Lista de `clave.punteada=valor`. Los overrides ganan sobre el archivo.

    Retorna
    -------
    PipelineConfig
        Configuración validada.

    Ejemplo
    -------
    >>> cfg = load_config(Path("pipeline.json"), ["hyper.c=5", "provider.spec=mock:./fixtures"])
    """
    raw: dict[str, Any] = {}
    base_dir = None
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"No se encontró el archivo de configuración: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Configuración JSON inválida en {path}: {e}") from e
        base_dir = Path(path).resolve().parent

    for override in overrides or []:
        keys, value = _parse_override(override)
        target = raw
        for key in keys[:-1]:
            target = target.setdefault(key, {})
            if not isinstance(target, dict):
                raise ConfigError(f"Override sobre una clave no anidable: {override}")
        target[keys[-1]] = value
        logger.debug(f"Override aplicado: {override}")

    try:
        config = config_from_dict(raw, base_dir=base_dir)
    except TypeError as e:
        raise ConfigError(f"Configuración inválida: {e}") from e
    return config.validate()

