# Importar bibliotecas necesarias
import json
from pathlib import Path
from typing import Any

from loguru import logger

from shield.errors import IoError
from shield.events import EventLog, LogLabel, write_jsonl

ARTIFACT_VERSION = "1"


# ======================================================
# Función: save_event_log
# ======================================================
def save_event_log(log: EventLog, out_path: Path) -> Path:
    """
    Guarda un `EventLog` en el formato canónico JSON Lines (un evento por línea con los
    8 campos de la tabla de eventos, marca de tiempo en microsegundos).

    Parámetros
    ----------
    log : EventLog
        Log a persistir.
    out_path : Path
        Ruta del archivo .jsonl de salida.

    Retorna
    -------
    Path
        La ruta escrita.
    """
    count = write_jsonl(log.events, out_path)
    logger.success(f"✅ Log canónico guardado en {out_path} ({count} eventos)")
    return Path(out_path)


# ======================================================
# Función: load_event_log
# ======================================================
def load_event_log(path: Path, label: LogLabel = "testing") -> EventLog:
    """Lee un log canónico sin tolerar rechazos (lo ha escrito `save_event_log`)."""
    from shield.etl_modules.extractor_data import parse_source

    return parse_source(path, "jsonl-generic", label=label, max_reject_ratio=0.0)


# ======================================================
# Función: write_artifact
# ======================================================
def write_artifact(
    path: Path,
    stage: str,
    payload: Any,
    config_digest: str = "",
    input_digest: str = "",
) -> Path:
    """
    Escribe un artefacto JSON autodescriptivo.

    El sobre incluye la etapa que lo produjo, la versión del formato, el resumen de la
    configuración y el resumen de las entradas, que `run_pipeline` usa como clave de caché.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    envelope = {
        "stage": stage,
        "version": ARTIFACT_VERSION,
        "config_digest": config_digest,
        "input_digest": input_digest,
        "payload": payload,
    }
    path.write_text(
        json.dumps(envelope, indent=2, ensure_ascii=False, sort_keys=False) + "\n",
        encoding="utf-8",
    )
    logger.info(f"📁 Exportado: {path}")
    return path


# ======================================================
# Función: read_artifact
# ======================================================
def read_artifact(path: Path) -> dict[str, Any]:
    """
    Lee un artefacto JSON. Si el archivo no tiene sobre (p. ej. un profile.json escrito a
    mano) se devuelve envuelto con `payload` igual al contenido completo.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise IoError(f"No se encontró el artefacto: {path}") from e
    except json.JSONDecodeError as e:
        raise IoError(f"Artefacto JSON inválido en {path}: {e}") from e
    if isinstance(data, dict) and {"stage", "payload"} <= set(data):
        return data
    return {"stage": "", "version": "", "config_digest": "", "input_digest": "", "payload": data}


def read_payload(path: Path) -> Any:
    return read_artifact(path)["payload"]
