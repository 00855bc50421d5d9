# Importar bibliotecas necesarias
from typing import Any, Iterable
import json

from loguru import logger
import pandas as pd

from shield.events import EVENT_FIELDS, REQUIRED_FIELDS, Event, EventLog

# Alias de columnas frecuentes en los exportadores genéricos
FIELD_ALIASES = {
    "ip": "ip_address",
    "address": "ip_address",
    "path": "file_path",
    "exe": "process_path",
    "cmd": "command_line",
    "cmdline": "command_line",
    "type": "event_type",
    "ts": "timestamp",
}
PORT_KEYS = ("port", "remote_port", "dst_port")


class RecordError(ValueError):
    """Registro individual no normalizable (se cuenta como rechazo, no es fatal)."""


# ======================================================
# Función: parse_timestamp
# ======================================================
def parse_timestamp(value: Any) -> int:
    """
    Convierte una marca de tiempo a microsegundos enteros desde epoch (UTC).

    Acepta enteros (ya en microsegundos), cadenas de dígitos y cadenas ISO-8601.
    Las cadenas sin zona horaria se interpretan como UTC.
    """
    if isinstance(value, bool) or value is None:
        raise RecordError(f"timestamp inválido: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not value.is_integer():
            raise RecordError(f"timestamp no entero en microsegundos: {value!r}")
        return int(value)
    text = str(value).strip()
    if text.lstrip("-").isdigit():
        return int(text)
    try:
        ts = pd.Timestamp(text)
    except (ValueError, TypeError) as e:
        raise RecordError(f"timestamp no interpretable: {text!r}") from e
    if ts is pd.NaT:
        raise RecordError(f"timestamp vacío: {text!r}")
    ts = ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")
    return int(ts.value // 1000)


def _clean(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and pd.isna(value):
        return ""
    return str(value)


# ======================================================
# Función: normalize_record
# ======================================================
def normalize_record(raw: dict[str, Any]) -> Event:
    """
    Normaliza un registro crudo (JSON o fila CSV) a un `Event`.

    Operaciones aplicadas:
    ----------------------
    1. Renombra alias de columnas conocidos (`ip` → `ip_address`, ...).
    2. Verifica los campos obligatorios (sujeto, objeto, tipo y marca de tiempo).
    3. Adjunta el puerto a la IP como "ip:puerto" cuando llega en un campo aparte.
    4. Conserva el resto de campos de origen en `extra` (los elimina `filter_fields`).

    Excepciones
    -----------
    RecordError
        Si falta un campo obligatorio o la marca de tiempo no es interpretable.
    """
    record = {FIELD_ALIASES.get(k, k): v for k, v in raw.items()}

    missing = [name for name in REQUIRED_FIELDS if _clean(record.get(name)) == ""]
    if missing:
        raise RecordError(f"faltan campos obligatorios: {missing}")

    ip_address = _clean(record.get("ip_address"))
    port = None
    for key in PORT_KEYS:
        if _clean(record.get(key)) != "":
            port = record[key]
            break
    if port is not None and ip_address and ":" not in ip_address:
        port_text = _clean(port)
        if port_text.endswith(".0"):
            port_text = port_text[:-2]
        ip_address = f"{ip_address}:{port_text}"

    extra = tuple(
        (key, json.dumps(value, ensure_ascii=False))
        for key, value in record.items()
        if key not in EVENT_FIELDS and key not in PORT_KEYS
    )
    try:
        return Event(
            subject_id=_clean(record["subject_id"]),
            object_id=_clean(record["object_id"]),
            event_type=_clean(record["event_type"]),
            timestamp=parse_timestamp(record["timestamp"]),
            command_line=_clean(record.get("command_line")),
            process_path=_clean(record.get("process_path")),
            ip_address=ip_address,
            file_path=_clean(record.get("file_path")),
            extra=extra,
        )
    except ValueError as e:
        raise RecordError(str(e)) from e


# ======================================================
# Función: filter_fields
# ======================================================
def filter_fields(raw: EventLog, allow_list: Iterable[str] | None = None) -> EventLog:
    """
    Proyecta cada evento a los 8 campos canónicos y descarta los tipos no permitidos.

    Parámetros
    ----------
    raw : EventLog
        Log crudo tal como lo devuelve `parse_source`.
    allow_list : Iterable[str], opcional
        Tipos de evento permitidos. None conserva todos los tipos (en el pipeline se
        pasan los tipos observados en el log de entrenamiento).

    Retorna
    -------
    EventLog
        Log filtrado con el mismo orden relativo. La operación es idempotente.
    """
    allowed = None if allow_list is None else set(allow_list)
    kept = [
        event.project()
        for event in raw.events
        if allowed is None or event.event_type in allowed
    ]
    dropped = len(raw.events) - len(kept)
    if dropped:
        logger.info(f"🧹 filter_fields descartó {dropped} eventos fuera de la lista permitida")
    return raw.with_events(kept)


def observed_types(log: EventLog) -> set[str]:
    return {event.event_type for event in log.events}
