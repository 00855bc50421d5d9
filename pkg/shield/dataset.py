"""
dataset.py
==========
Escenario sintético reproducible para probar el pipeline de extremo a extremo:

- log de entrenamiento benigno (plantillas de un host Linux de escritorio),
- log de prueba con la misma actividad benigna más una campaña de ataque acotada
  (implante renombrado, canal C2 y persistencia vía native messaging de Firefox),
- `ground_truth.json`, respuestas guionizadas para el proveedor mock y `pipeline.json`.
"""

from dataclasses import dataclass
import hashlib
import json
from pathlib import Path
from typing import Any

from loguru import logger
import numpy as np
import typer

from shield.config import DEFAULT_SEED, INTERIM_DATA_DIR
from shield.etl_modules.load_data import read_artifact, write_artifact
from shield.events import Event, write_jsonl

app = typer.Typer()

MICROS = 1_000_000
T0 = 1_523_000_000 * MICROS  # inicio del log de entrenamiento
TEST_OFFSET = 48 * 3600 * MICROS
ATTACK_OFFSET = (10 * 3600 + 2 * 60) * MICROS

ATTACK_IP = "146.153.68.151"
IMPLANT_PATH = "/tmp/vUgefal"
PERSISTENCE_PATH = "/etc/firefox/native-messaging-hosts/gtcache"
DROPPER_COMMAND = "/bin/sh -c ./gtcache &>/dev/null &"


@dataclass(frozen=True)
class Template:
    subject: str
    process_path: str
    command_line: str
    event_type: str
    file_path: str = ""
    ip_address: str = ""
    weight: int = 1


PROCESSES = {
    "proc-cron": ("/usr/sbin/cron", "/usr/sbin/cron -f"),
    "proc-entropy": ("/bin/dash", "sh /usr/libexec/save-entropy"),
    "proc-sleep": ("/bin/sleep", "sleep 300"),
    "proc-firefox": ("/usr/lib/firefox/firefox", "/usr/lib/firefox/firefox"),
    "proc-backup": ("/usr/bin/python3", "/usr/bin/python3 /opt/backup/backup.py"),
    "proc-sshd": ("/usr/sbin/sshd", "sshd: admin@pts/0"),
    "proc-apt": ("/usr/bin/apt-get", "/usr/bin/apt-get update"),
    "proc-fluxbox": ("/usr/bin/fluxbox", "fluxbox"),
    "proc-dropper": ("/bin/sh", DROPPER_COMMAND),
    # el implante se ejecuta con el nombre ./gtcache
    "proc-implant": (IMPLANT_PATH, "./gtcache"),
}

# (sujeto, tipo, archivo, ip, peso)
BENIGN_ROWS = (
    ("proc-cron", "EVENT_READ", "/etc/crontab", "", 4),
    ("proc-cron", "EVENT_OPEN", "/var/spool/cron/crontabs/root", "", 2),
    ("proc-entropy", "EVENT_READ", "/dev/urandom", "", 3),
    ("proc-entropy", "EVENT_WRITE", "/var/db/entropy/saved-entropy.1", "", 2),
    ("proc-sleep", "EVENT_READ", "/dev/hpet0", "", 4),
    ("proc-firefox", "EVENT_MMAP", "/usr/lib/firefox/libxul.so", "", 3),
    ("proc-firefox", "EVENT_CONNECT", "", "93.184.216.34:443", 2),
    ("proc-firefox", "EVENT_SENDTO", "", "93.184.216.34:443", 3),
    ("proc-firefox", "EVENT_RECVFROM", "", "93.184.216.34:443", 3),
    ("proc-firefox", "EVENT_WRITE", "/home/admin/.mozilla/firefox/places.sqlite", "", 2),
    ("proc-backup", "EVENT_READ", "/home/admin/docs/report.txt", "", 2),
    ("proc-backup", "EVENT_WRITE", "/var/backups/daily.tar", "", 2),
    ("proc-sshd", "EVENT_RECVFROM", "", "10.0.0.5:22", 2),
    ("proc-sshd", "EVENT_SENDTO", "", "10.0.0.5:22", 2),
    ("proc-apt", "EVENT_CONNECT", "", "91.189.91.38:80", 1),
    ("proc-apt", "EVENT_WRITE", "/var/lib/apt/lists/lock", "", 1),
    ("proc-fluxbox", "EVENT_MMAP", "/usr/lib/libX11.so.6", "", 2),
    ("proc-fluxbox", "EVENT_MPROTECT", "/usr/lib/libX11.so.6", "", 1),
    ("proc-fluxbox", "EVENT_CLONE", "/usr/bin/xterm", "", 1),
    ("proc-fluxbox", "EVENT_EXECUTE", "/usr/bin/xterm", "", 1),
)

# (sujeto, tipo, archivo, ip, repeticiones)
ATTACK_ROWS = (
    ("proc-dropper", "EVENT_EXECUTE", IMPLANT_PATH, "", 1),
    ("proc-implant", "EVENT_MMAP", IMPLANT_PATH, "", 3),
    ("proc-implant", "EVENT_MPROTECT", IMPLANT_PATH, "", 3),
    ("proc-implant", "EVENT_CONNECT", "", f"{ATTACK_IP}:443", 1),
    ("proc-implant", "EVENT_SENDTO", "", f"{ATTACK_IP}:443", 4),
    ("proc-implant", "EVENT_RECVFROM", "", f"{ATTACK_IP}:443", 4),
    ("proc-implant", "EVENT_WRITE", PERSISTENCE_PATH, "", 2),
    ("proc-implant", "EVENT_OPEN", PERSISTENCE_PATH, "", 2),
)


def _template(row: tuple[str, str, str, str, int]) -> Template:
    subject, event_type, file_path, ip_address, weight = row
    return Template(subject, *PROCESSES[subject], event_type, file_path, ip_address, weight)


BENIGN_TEMPLATES = tuple(_template(row) for row in BENIGN_ROWS)
ATTACK_TEMPLATES = tuple(_template(row) for row in ATTACK_ROWS)

ATTACK_ENTITIES = ("/bin/sh", IMPLANT_PATH, ATTACK_IP, PERSISTENCE_PATH)

GROUND_TRUTH_STEPS = (
    ("Execution", f"The attacker ran {DROPPER_COMMAND} to launch the implant in the background."),
    ("Defense Evasion", "The implant changed memory protections with mmap and mprotect calls."),
    ("Command and Control", f"The implant exchanged traffic with the C2 server {ATTACK_IP}."),
    ("Persistence", f"The implant wrote {PERSISTENCE_PATH} to abuse Firefox native messaging."),
)
GROUND_TRUTH_NARRATIVE = (
    f"A dropper shell launched ./gtcache ({IMPLANT_PATH}) in the background. The implant "
    f"manipulated its memory, connected to the C2 server {ATTACK_IP} and installed a "
    f"native messaging host at {PERSISTENCE_PATH} to persist through Firefox."
)

EVIDENCE_RESPONSE = f"""<think>
The save-entropy, cron and firefox commands are routine. The shell that starts ./gtcache
in the background and hides its output is not.
</think>
- {DROPPER_COMMAND}
- ./gtcache
"""

INVESTIGATION_RESPONSE = f"""<think>
The gtcache process is not in the benign profile and talks to an external address.
</think>
## Attack Narrative
The attack begins with the execution of a suspicious process "./gtcache" via "/bin/sh",
which immediately backgrounds itself. The process manipulates its memory (EVENT_MPROTECT,
EVENT_MMAP) to evade detection, establishes command-and-control communication with
{ATTACK_IP} and writes a native messaging host for Firefox to keep persistence.

## Key Steps
1) [Execution]: The attacker executed "{DROPPER_COMMAND}", hiding output to avoid detection.
2) [Defense Evasion]: The implant used EVENT_MPROTECT and EVENT_MMAP to change memory permissions.
3) [Command and Control]: Repeated EVENT_SENDTO / EVENT_RECVFROM with {ATTACK_IP} indicate C2.
4) [Persistence]: A malicious file was placed in /etc/firefox/native-messaging-hosts/.

## IOCs
- IPs: `{ATTACK_IP}` (C2 server)
- Domains: None
- Processes: "{DROPPER_COMMAND}", "./gtcache"
- Files: "{IMPLANT_PATH}", "{PERSISTENCE_PATH}" (malicious native messaging host)
"""

MOCK_RULES = [
    {"contains": "identify all commands related to attacks", "response_file": "evidence.txt"},
    {"contains": "Your available evidence", "response_file": "investigation.txt"},
]


def _entity_id(kind: str, name: str) -> str:
    return f"{kind}-{hashlib.sha256(name.encode('utf-8')).hexdigest()[:12]}"


def _make_event(template: Template, timestamp: int) -> Event:
    target = template.file_path or template.ip_address.rsplit(":", 1)[0]
    kind = "file" if template.file_path else "ip"
    return Event(
        subject_id=template.subject,
        object_id=_entity_id(kind, target),
        event_type=template.event_type,
        timestamp=timestamp,
        command_line=template.command_line,
        process_path=template.process_path,
        ip_address=template.ip_address,
        file_path=template.file_path,
    )


def benign_events(
    start: int, hours: float, rng: np.random.Generator, period_s: int = 30
) -> list[Event]:
    """Un evento benigno cada `period_s` segundos (con jitter), plantillas por peso."""
    weights = np.array([t.weight for t in BENIGN_TEMPLATES], dtype=float)
    n = int(hours * 3600 // period_s)
    choices = rng.choice(len(BENIGN_TEMPLATES), size=n, p=weights / weights.sum())
    jitter = rng.integers(0, period_s * MICROS // 2, size=n)
    jitter[0] = 0
    return [
        _make_event(BENIGN_TEMPLATES[int(c)], start + i * period_s * MICROS + int(j))
        for i, (c, j) in enumerate(zip(choices, jitter))
    ]


def attack_events(start: int, rng: np.random.Generator) -> list[Event]:
    """Campaña de 20 eventos repartida en ~23 minutos a partir de `start`."""
    expanded = [t for t in ATTACK_TEMPLATES for _ in range(t.weight)]
    offsets = np.sort(rng.integers(0, 23 * 60 * MICROS, size=len(expanded)))
    offsets[0] = 0  # el dropper va primero
    return [_make_event(t, start + int(o)) for t, o in zip(expanded, offsets)]


# ======================================================
# Función: generate_scenario
# ======================================================
def generate_scenario(
    out_dir: Path,
    seed: int = DEFAULT_SEED,
    train_hours: float = 24.0,
    test_hours: float = 24.0,
    period_s: int = 30,
) -> dict[str, Path]:
    """
    Escribe el escenario sintético completo en `out_dir`.

    Retorna
    -------
    dict[str, Path]
        Rutas de train.jsonl, test.jsonl, ground_truth.json, fixtures/ y pipeline.json.

    Ejemplo
    -------
    >>> paths = generate_scenario(Path("data/interim/scenario"))
    >>> # shield run --config data/interim/scenario/pipeline.json
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    train = benign_events(T0, train_hours, rng, period_s)
    test_start = T0 + TEST_OFFSET
    benign = benign_events(test_start, test_hours, rng, period_s)
    attack = attack_events(test_start + ATTACK_OFFSET, rng)

    # orden estable por marca de tiempo: el mismo que aplica parse_source
    tagged = sorted(
        [(e, False) for e in benign] + [(e, True) for e in attack], key=lambda p: p[0].timestamp
    )
    test = [e for e, _ in tagged]
    attack_indices = [i for i, (_, is_attack) in enumerate(tagged) if is_attack]

    paths = {
        "train_log": out_dir / "train.jsonl",
        "test_log": out_dir / "test.jsonl",
        "ground_truth": out_dir / "ground_truth.json",
        "fixtures": out_dir / "fixtures",
        "config": out_dir / "pipeline.json",
    }
    write_jsonl(train, paths["train_log"])
    write_jsonl(test, paths["test_log"])
    write_artifact(
        paths["ground_truth"],
        "ground_truth",
        {
            "attack_entities": sorted(ATTACK_ENTITIES),
            "attack_event_indices": attack_indices,
            "tactic_steps": [{"tactic": t, "description": d} for t, d in GROUND_TRUTH_STEPS],
            "narrative": GROUND_TRUTH_NARRATIVE,
        },
    )

    fixtures = paths["fixtures"]
    fixtures.mkdir(exist_ok=True)
    (fixtures / "rules.json").write_text(json.dumps(MOCK_RULES, indent=2) + "\n", "utf-8")
    (fixtures / "evidence.txt").write_text(EVIDENCE_RESPONSE, "utf-8")
    (fixtures / "investigation.txt").write_text(INVESTIGATION_RESPONSE, "utf-8")

    config: dict[str, Any] = {
        "train_log": "train.jsonl",
        "test_log": "test.jsonl",
        "ground_truth": "ground_truth.json",
        "out_dir": "out",
        "env_description": "an Ubuntu desktop host audited by a kernel provenance collector",
        "hyper": {"seed": seed},
        "mae": {"dim": 32, "layers": 2, "heads": 2, "epochs": 3, "lr": 1e-3},
        "provider": {"spec": "mock:fixtures"},
    }
    paths["config"].write_text(json.dumps(config, indent=2) + "\n", "utf-8")
    logger.success(
        f"✅ Escenario generado en {out_dir}: {len(train)} eventos de entrenamiento, "
        f"{len(test)} de prueba ({len(attack)} de ataque)"
    )
    return paths


# ======================================================
# Función: load_artifacts
# ======================================================
def load_artifacts(out_dir: Path) -> dict[str, Any]:
    """Payloads de los artefactos JSON de una ejecución (los ausentes se omiten)."""
    out_dir = Path(out_dir)
    artifacts = {}
    for path in sorted(out_dir.glob("*.json")):
        artifacts[path.stem] = read_artifact(path)["payload"]
    return artifacts


@app.command()
def main(
    out_dir: Path = INTERIM_DATA_DIR / "scenario",
    seed: int = DEFAULT_SEED,
):
    """Genera el escenario sintético."""
    generate_scenario(out_dir, seed)


if __name__ == "__main__":
    app()
