"""
profile.py
==========
Perfil benigno determinista (DDA): almacén clave-valor exec → (resto → frecuencia)
construido sobre el log de entrenamiento, muestreado por estratos de frecuencia y
consultado por coincidencia exacta con los ejecutables del vecindario de evidencia.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import hashlib
import json
import math
from pathlib import Path
import re
from typing import Any, Iterable

from loguru import logger
import numpy as np
import pandas as pd

from shield.config import DEFAULT_SEED, PROFILE_RATIO
from shield.errors import InvalidLogLabel
from shield.etl_modules.load_data import read_payload, write_artifact
from shield.events import Event, EventLog

Store = dict[str, dict[str, int]]


@dataclass(frozen=True)
class BenignProfile:
    store: Store
    built_from: str = ""
    total_events: int = 0


@dataclass(frozen=True)
class SampledProfile:
    store: Store
    ratio: float = PROFILE_RATIO
    seed: int = DEFAULT_SEED
    source: BenignProfile | None = field(default=None, compare=False, repr=False)


# ======================================================
# Extracción del ejecutable
# ======================================================
def extract_exec(command_line: str, lowercase: bool = False) -> str:
    """
    Nombre base del primer token del comando.

    >>> extract_exec("C:/Windows/ywm.exe -k run")
    'ywm.exe'
    """
    tokens = command_line.split()
    if not tokens:
        return ""
    name = re.split(r"[\\/]", tokens[0])[-1] or tokens[0]
    return name.lower() if lowercase else name


def event_key(event: Event, lowercase: bool = False) -> tuple[str, str] | None:
    """
    Clave (exec, resto) de un evento, o None si el evento no se perfila.

    El resto es la ruta del archivo objeto si existe; si no, el comando sin su primer
    token. Los eventos sin comando solo se perfilan cuando interactúan con un archivo.
    """
    command = event.command_line.strip()
    if command:
        exec_name = extract_exec(command, lowercase)
        remainder = event.file_path or command[len(command.split()[0]) :].strip()
    elif event.file_path and event.process_path:
        exec_name = extract_exec(event.process_path, lowercase)
        remainder = event.file_path
    else:
        return None
    return (exec_name, remainder) if exec_name else None


# ======================================================
# Función: build_profile
# ======================================================
def build_profile(d_tr: EventLog, lowercase: bool = False) -> BenignProfile:
    """
    Recorre el log de entrenamiento y cuenta cada par (exec, resto).

    Retorna
    -------
    BenignProfile
        Almacén de dos niveles. La suma de todas las frecuencias es el número de
        eventos perfilados.
    """
    if d_tr.label != "training":
        raise InvalidLogLabel(f"build_profile espera un log 'training', recibió '{d_tr.label}'")
    keys = [k for k in (event_key(e, lowercase) for e in d_tr) if k is not None]
    if not keys:
        logger.info("Perfil benigno vacío: ningún evento perfilable")
        return BenignProfile({}, d_tr.source_tag, 0)

    counts = (
        pd.DataFrame(keys, columns=["exec", "remainder"])
        .value_counts()
        .reset_index(name="frequency")
        .sort_values(["exec", "frequency", "remainder"], ascending=[True, False, True])
    )
    store: Store = {}
    for row in counts.itertuples(index=False):
        store.setdefault(row.exec, {})[row.remainder] = int(row.frequency)
    logger.success(
        f"✅ Perfil benigno: {len(store)} ejecutables, {len(counts)} pares, {len(keys)} eventos"
    )
    return BenignProfile(store, d_tr.source_tag, len(keys))


# ======================================================
# Muestreo representativo
# ======================================================
def sample_quota(n: int, r: float) -> int:
    """round(r × n) con redondeo half-up, mínimo 1 si el grupo no está vacío."""
    if n == 0:
        return 0
    return min(n, max(1, math.floor(r * n + 0.5)))


def tier_sizes(n: int) -> list[int]:
    """Tres grupos contiguos casi iguales; el sobrante va a los primeros."""
    base, extra = divmod(n, 3)
    return [base + (1 if i < extra else 0) for i in range(3)]


def apportion(quota: int, sizes: list[int]) -> list[int]:
    """Reparto del cupo proporcional al tamaño (mayores restos, empates al primero)."""
    total = sum(sizes)
    if total == 0:
        return [0] * len(sizes)
    ideal = [Fraction(quota * size, total) for size in sizes]
    shares = [math.floor(x) for x in ideal]
    leftover = quota - sum(shares)
    order = sorted(range(len(sizes)), key=lambda i: (-(ideal[i] - shares[i]), i))
    for i in order[:leftover]:
        shares[i] += 1
    return shares


def _exec_rng(seed: int, exec_name: str) -> np.random.Generator:
    digest = int(hashlib.sha256(exec_name.encode("utf-8")).hexdigest()[:8], 16)
    return np.random.default_rng([seed, digest])


# ======================================================
# Función: sample_profile
# ======================================================
def sample_profile(
    profile: BenignProfile, r: float = PROFILE_RATIO, seed: int = DEFAULT_SEED
) -> SampledProfile:
    """
    Muestrea round(r × n) pares por ejecutable, estratificando por frecuencia.

    Para cada exec los pares se ordenan por frecuencia descendente y se dividen en tres
    grupos (alta, media, baja); el cupo se reparte entre los grupos en proporción a su
    tamaño y dentro de cada grupo se sortea sin reemplazo.
    """
    if not 0 < r <= 1:
        raise ValueError(f"r debe estar en (0, 1]: {r}")
    sampled: Store = {}
    for exec_name in sorted(profile.store):
        pairs = sorted(profile.store[exec_name].items(), key=lambda kv: (-kv[1], kv[0]))
        sizes = tier_sizes(len(pairs))
        shares = apportion(sample_quota(len(pairs), r), sizes)
        rng = _exec_rng(seed, exec_name)
        chosen: list[int] = []
        start = 0
        for size, share in zip(sizes, shares):
            if share:
                picks = rng.choice(np.arange(start, start + size), size=share, replace=False)
                chosen.extend(int(p) for p in picks)
            start += size
        sampled[exec_name] = {pairs[i][0]: pairs[i][1] for i in sorted(chosen)}
    logger.info(f"🎯 Perfil muestreado con r={r} (semilla {seed})")
    return SampledProfile(sampled, r, seed, profile)


# ======================================================
# Función: match_profile
# ======================================================
def neighborhood_execs(events: Iterable[Event], lowercase: bool = False) -> list[str]:
    seen: dict[str, None] = {}
    for event in events:
        key = event_key(event, lowercase)
        if key is not None:
            seen.setdefault(key[0], None)
    return list(seen)


def match_profile(sampled: SampledProfile, neighborhood, lowercase: bool = False) -> str:
    """
    Bloque JSON con los pares muestreados de cada exec presente en el vecindario.

    Los ejecutables ausentes del perfil se omiten (su ausencia ya es una señal). Un
    vecindario vacío produce "{}".
    """
    events = getattr(neighborhood, "events", neighborhood)
    block = {
        name: sampled.store[name]
        for name in sorted(neighborhood_execs(events, lowercase))
        if name in sampled.store
    }
    return json.dumps(block, ensure_ascii=False, indent=2)


# ======================================================
# Persistencia
# ======================================================
def profile_to_dict(profile: BenignProfile | SampledProfile) -> dict[str, Any]:
    return {name: dict(pairs) for name, pairs in profile.store.items()}


def save_profile(
    profile: BenignProfile | SampledProfile, path: Path, input_digest: str = ""
) -> Path:
    """Guarda el almacén con la misma forma del bloque que se inserta en el prompt."""
    return write_artifact(path, "profile", profile_to_dict(profile), input_digest=input_digest)


def load_profile(path: Path) -> SampledProfile:
    """Lee un profile.json (con o sin sobre de artefacto) como perfil ya muestreado."""
    store = read_payload(path)
    store = {str(k): {str(r): int(v) for r, v in pairs.items()} for k, pairs in store.items()}
    return SampledProfile(store)
