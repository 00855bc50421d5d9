# Importar bibliotecas necesarias
from concurrent.futures import ThreadPoolExecutor
import heapq
import json
from pathlib import Path
from typing import Iterator, Literal

from loguru import logger
import pandas as pd
from tqdm import tqdm

from shield.config import MAX_REJECT_RATIO
from shield.errors import IoError, RejectRatioExceeded, SchemaError
from shield.etl_modules.transform_data import FIELD_ALIASES, RecordError, normalize_record
from shield.events import REQUIRED_FIELDS, Event, EventLog, LogLabel

SourceFormat = Literal["jsonl-generic", "csv-generic"]
SOURCE_FORMATS = ("jsonl-generic", "csv-generic")


# ======================================================
# Función: _iter_jsonl
# ======================================================
def _iter_jsonl(path: Path) -> Iterator[dict | None]:
    """Produce un diccionario por línea no vacía; None si la línea no es un objeto JSON."""
    with path.open("rb") as handle:
        for raw in handle:
            if not raw.strip():
                continue
            try:
                record = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                yield None
                continue
            yield record if isinstance(record, dict) else None


# ======================================================
# Función: _iter_csv
# ======================================================
def _iter_csv(path: Path) -> Iterator[dict | None]:
    bad_lines: list[list[str]] = []
    frame = pd.read_csv(
        path,
        dtype=str,
        keep_default_na=False,
        engine="python",
        on_bad_lines=lambda line: bad_lines.append(line),
    )
    columns = {FIELD_ALIASES.get(c, c) for c in frame.columns}
    missing = [name for name in REQUIRED_FIELDS if name not in columns]
    if missing:
        raise SchemaError(f"{path}: la cabecera CSV no contiene las columnas {missing}")
    # filas con más columnas que la cabecera
    for _ in bad_lines:
        yield None
    for row in frame.to_dict(orient="records"):
        yield {k: v for k, v in row.items() if v != ""}


# ======================================================
# Función: parse_source
# ======================================================
def parse_source(
    path: Path,
    format: SourceFormat = "jsonl-generic",
    label: LogLabel = "testing",
    max_reject_ratio: float = MAX_REJECT_RATIO,
) -> EventLog:
    """
    Lee un archivo de log crudo y lo convierte en un `EventLog` ordenado por tiempo.

    Parámetros
    ----------
    path : Path
        Archivo de entrada (JSON Lines o CSV).
    format : {"jsonl-generic", "csv-generic"}
        Formato declarado del archivo. En jsonl-generic cada línea es un objeto JSON
        cuyas claves coinciden con los campos del evento (más un "port" opcional).
    label : {"training", "testing"}
        Etiqueta del log resultante.
    max_reject_ratio : float
        Proporción máxima de líneas no interpretables antes de abortar (1% por defecto).

    Retorna
    -------
    EventLog
        Eventos ordenados de forma estable por marca de tiempo; `rejected` cuenta las
        líneas descartadas.

    Excepciones
    -----------
    IoError
        Si el archivo no existe o no se puede leer.
    SchemaError
        Si la cabecera CSV no contiene los campos obligatorios.
    RejectRatioExceeded
        Si la proporción de líneas rechazadas supera `max_reject_ratio`.
    """
    path = Path(path)
    if format not in SOURCE_FORMATS:
        raise SchemaError(f"Formato no soportado: {format}")
    if not path.exists():
        logger.error(f"No se encontró el archivo en {path}")
        raise IoError(f"No se encontró el archivo: {path}")

    logger.info(f"📂 Leyendo log {format}: {path}")
    rows = _iter_jsonl(path) if format == "jsonl-generic" else _iter_csv(path)

    events: list[Event] = []
    rejected = 0
    total = 0
    try:
        for line_number, record in enumerate(rows, start=1):
            total += 1
            if record is None:
                rejected += 1
                logger.warning(f"⚠️ {path.name}:{line_number} no es un registro válido")
                continue
            try:
                events.append(normalize_record(record))
            except RecordError as e:
                rejected += 1
                logger.warning(f"⚠️ {path.name}:{line_number} rechazado: {e}")
    except (OSError, UnicodeDecodeError, pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise IoError(f"Error al leer {path}: {e}") from e

    if total and rejected / total > max_reject_ratio:
        raise RejectRatioExceeded(path, rejected, total, max_reject_ratio)

    # sorted() es estable: empates de marca de tiempo conservan el orden de origen
    events.sort(key=lambda e: e.timestamp)
    logger.success(
        f"✅ Archivo leído correctamente: {len(events)} eventos, {rejected} rechazados"
    )
    return EventLog(tuple(events), label=label, source_tag=path.name, rejected=rejected)


# ======================================================
# Función: parse_sources
# ======================================================
def parse_sources(
    paths: list[Path],
    format: SourceFormat = "jsonl-generic",
    label: LogLabel = "testing",
    max_reject_ratio: float = MAX_REJECT_RATIO,
    max_workers: int = 4,
) -> EventLog:
    """
    Lee varios archivos en paralelo y los fusiona por marca de tiempo (k-way merge).

    Los empates entre archivos se resuelven por el orden de `paths`, y dentro de un
    archivo por el orden de origen.
    """
    if not paths:
        return EventLog(label=label)
    if len(paths) == 1:
        return parse_source(paths[0], format, label, max_reject_ratio)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        logs = list(
            pool.map(lambda p: parse_source(p, format, label, max_reject_ratio), paths)
        )

    merged = heapq.merge(*(log.events for log in logs), key=lambda e: e.timestamp)
    events = tuple(tqdm(merged, total=sum(len(log) for log in logs), desc="Fusionando logs"))
    tag = "+".join(log.source_tag for log in logs)
    return EventLog(events, label=label, source_tag=tag, rejected=sum(l.rejected for l in logs))
