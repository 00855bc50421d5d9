import json
from pathlib import Path

import pytest

from shield.events import Event, EventLog

MICROS = 1_000_000


def make_event(
    subject: str = "p1",
    obj: str = "f1",
    event_type: str = "EVENT_READ",
    ts: int = 0,
    command_line: str = "",
    process_path: str = "",
    ip_address: str = "",
    file_path: str = "",
) -> Event:
    return Event(
        subject_id=subject,
        object_id=obj,
        event_type=event_type,
        timestamp=ts,
        command_line=command_line,
        process_path=process_path,
        ip_address=ip_address,
        file_path=file_path,
    )


def make_log(events, label: str = "testing") -> EventLog:
    return EventLog(tuple(events), label=label)


def write_jsonl_records(path: Path, records) -> Path:
    lines = [r if isinstance(r, str) else json.dumps(r) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def event_factory():
    return make_event


@pytest.fixture
def mock_dir(tmp_path):
    """Directorio de respuestas guionizadas con reglas en línea."""

    def _build(rules):
        directory = tmp_path / "mock"
        directory.mkdir(exist_ok=True)
        (directory / "rules.json").write_text(json.dumps(rules), encoding="utf-8")
        return directory

    return _build
