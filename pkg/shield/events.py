"""
events.py
=========
Tipos de dominio de la ingesta: `Event` (un registro de auditoría normalizado con los
8 campos de la tabla de eventos) y `EventLog` (secuencia ordenada por tiempo).
También contiene el códec JSON canónico y utilidades de resumen criptográfico.
"""

from dataclasses import dataclass, field, replace
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator, Literal

import pandas as pd

EVENT_FIELDS = (
    "subject_id",
    "object_id",
    "event_type",
    "command_line",
    "timestamp",
    "process_path",
    "ip_address",
    "file_path",
)
REQUIRED_FIELDS = ("subject_id", "object_id", "event_type", "timestamp")
OPTIONAL_FIELDS = ("command_line", "process_path", "ip_address", "file_path")

LogLabel = Literal["training", "testing"]


@dataclass(frozen=True)
class Event:
    subject_id: str
    object_id: str
    event_type: str
    timestamp: int  # microsegundos desde epoch, UTC
    command_line: str = ""
    process_path: str = ""
    ip_address: str = ""
    file_path: str = ""
    # campos de origen ajenos a la tabla de eventos; los elimina filter_fields
    extra: tuple[tuple[str, str], ...] = field(default=(), hash=False)

    def __post_init__(self):
        if not self.subject_id or not self.object_id:
            raise ValueError("subject_id y object_id no pueden estar vacíos")
        if not self.event_type:
            raise ValueError("event_type no puede estar vacío")

    def to_record(self) -> dict[str, Any]:
        record = {name: getattr(self, name) for name in EVENT_FIELDS}
        for key, value in self.extra:
            record[key] = json.loads(value)
        return record

    def project(self) -> "Event":
        """Evento con exactamente los 8 campos canónicos."""
        return replace(self, extra=()) if self.extra else self

    @property
    def ip_host(self) -> str:
        return strip_port(self.ip_address)


def strip_port(address: str) -> str:
    """Quita el sufijo ":puerto" de una dirección IPv4 o de un nombre de host."""
    if address.count(":") == 1:
        host, port = address.rsplit(":", 1)
        if port.isdigit():
            return host
    return address


@dataclass(frozen=True)
class EventLog:
    events: tuple[Event, ...] = ()
    label: LogLabel = "testing"
    source_tag: str = ""
    rejected: int = 0

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __getitem__(self, index: int) -> Event:
        return self.events[index]

    def is_sorted(self) -> bool:
        return all(a.timestamp <= b.timestamp for a, b in zip(self.events, self.events[1:]))

    def timestamps(self) -> list[int]:
        return [e.timestamp for e in self.events]

    def to_frame(self) -> pd.DataFrame:
        """DataFrame con una fila por evento (columnas = campos canónicos)."""
        return pd.DataFrame(
            [{name: getattr(e, name) for name in EVENT_FIELDS} for e in self.events],
            columns=list(EVENT_FIELDS),
        )

    def with_events(self, events: Iterable[Event]) -> "EventLog":
        return replace(self, events=tuple(events))


# ======================================================
# Entidades
# ======================================================
def subject_name(event: Event) -> str:
    """Nombre visible del sujeto: ruta del ejecutable, o primer token del comando."""
    if event.process_path:
        return event.process_path
    if event.command_line.strip():
        return event.command_line.split()[0]
    return event.subject_id


def object_name(event: Event) -> str:
    """Nombre visible del objeto: ruta de archivo, IP sin puerto, o su identificador."""
    if event.file_path:
        return event.file_path
    if event.ip_address:
        return event.ip_host
    return event.object_id


def entity_names(events: Iterable[Event]) -> dict[str, str]:
    """
    Asigna a cada identificador de entidad su nombre visible.

    El nombre es el primero observado en el orden del log, de modo que los eventos
    añadidos al final (p. ej. por inyección de mimetismo) no cambian los nombres.
    """
    names: dict[str, str] = {}
    for event in events:
        names.setdefault(event.subject_id, subject_name(event))
        names.setdefault(event.object_id, object_name(event))
    return names


# ======================================================
# Códec canónico y resúmenes
# ======================================================
def event_to_json(event: Event) -> str:
    return json.dumps(event.to_record(), ensure_ascii=False, sort_keys=False)


def write_jsonl(events: Iterable[Event], path: Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for event in events:
            handle.write(event_to_json(event) + "\n")
            count += 1
    return count


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def digest_file(path: Path) -> str:
    sha = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def digest_events(events: Iterable[Event]) -> str:
    sha = hashlib.sha256()
    for event in events:
        sha.update(event_to_json(event).encode("utf-8"))
        sha.update(b"\n")
    return sha.hexdigest()
