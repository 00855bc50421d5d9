"""
detect.py
=========
Detección de ventanas de ataque:

1. `fit_boundary`   → frontera OCSVM sobre los embeddings benignos.
2. `score_events`   → puntuación de anomalía por evento (mayor = más anómalo).
3. `window_scores`  → media del top-k% de puntuaciones en cada ventana temporal.
4. `derive_t_ano`   → umbral T_ano = media de las ventanas del log de entrenamiento.
5. `select_windows` → como máximo C ventanas por encima de T_ano.
"""

from dataclasses import dataclass, field, replace
import math
from typing import Any, Iterable, Sequence

from loguru import logger
import numpy as np
from sklearn.svm import OneClassSVM

from shield.config import DEFAULT_SEED, MAX_WINDOWS, NUM_MASKS, OCSVM_NU
from shield.errors import EmptyTrainingSet, InsufficientData
from shield.events import EventLog
from shield.mae.model import MaeModel
from shield.mae.training import EventEmbedding, embed_events

# score = -decision_function: mayor = más anómalo
SCORE_CONVENTION = "higher_is_anomalous"


@dataclass(frozen=True)
class DetectorState:
    boundary: OneClassSVM
    gamma: float
    t_ano: float | None = None
    score_sign: str = SCORE_CONVENTION

    def score(self, embeddings: np.ndarray) -> np.ndarray:
        if len(embeddings) == 0:
            return np.zeros(0)
        return -self.boundary.decision_function(np.asarray(embeddings, dtype=float))

    def with_t_ano(self, t_ano: float) -> "DetectorState":
        if not math.isfinite(t_ano):
            raise ValueError(f"t_ano debe ser finito: {t_ano}")
        return replace(self, t_ano=float(t_ano))


@dataclass(frozen=True)
class TimeWindow:
    start: int
    end: int
    event_indices: tuple[int, ...]
    score: float
    # marcas de tiempo paralelas a event_indices
    timestamps: tuple[int, ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "start": self.start,
            "end": self.end,
            "score": self.score,
            "event_indices": list(self.event_indices),
            "timestamps": list(self.timestamps),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TimeWindow":
        return cls(
            start=int(raw["start"]),
            end=int(raw["end"]),
            event_indices=tuple(raw["event_indices"]),
            score=float(raw["score"]),
            timestamps=tuple(raw.get("timestamps", ())),
        )


@dataclass(frozen=True)
class WindowSelection:
    windows: tuple[TimeWindow, ...]
    selected: tuple[TimeWindow, ...]
    truncated_events: tuple[int, ...]
    t_ano: float

    @property
    def detected(self) -> bool:
        return bool(self.selected)

    def truncated(self, log: EventLog) -> list:
        """Eventos de E_TRU en orden temporal."""
        return [log[i] for i in self.truncated_events]

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_ano": self.t_ano,
            "windows": [w.to_dict() for w in self.windows],
            "selected": [w.to_dict() for w in self.selected],
            "truncated_events": list(self.truncated_events),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "WindowSelection":
        return cls(
            windows=tuple(TimeWindow.from_dict(w) for w in raw["windows"]),
            selected=tuple(TimeWindow.from_dict(w) for w in raw["selected"]),
            truncated_events=tuple(raw["truncated_events"]),
            t_ano=float(raw["t_ano"]),
        )


# ======================================================
# Función: fit_boundary
# ======================================================
def fit_boundary(
    train_embeddings: Sequence[EventEmbedding] | np.ndarray,
    nu: float = OCSVM_NU,
) -> DetectorState:
    """
    Ajusta un One-Class SVM (kernel RBF) sobre los embeddings benignos.

    gamma = 1 / (dim × varianza de los embeddings); si la varianza es nula (todos los
    embeddings iguales) se usa 1 / dim.

    Excepciones
    -----------
    InsufficientData
        Si hay menos de 2 embeddings.
    """
    if len(train_embeddings) and isinstance(train_embeddings[0], EventEmbedding):
        matrix = np.vstack([e.vector for e in train_embeddings])
    else:
        matrix = np.asarray(train_embeddings, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise InsufficientData("Se necesitan al menos 2 embeddings para ajustar el OCSVM")

    dim = matrix.shape[1]
    variance = float(matrix.var())
    gamma = 1.0 / (dim * variance) if variance > 0 and math.isfinite(variance) else 1.0 / dim
    boundary = OneClassSVM(kernel="rbf", nu=nu, gamma=gamma).fit(matrix)
    logger.info(f"🧭 OCSVM ajustado con {matrix.shape[0]} embeddings (gamma={gamma:.3e})")
    return DetectorState(boundary=boundary, gamma=gamma)


# ======================================================
# Función: score_events
# ======================================================
def score_events(
    state: DetectorState,
    model: MaeModel,
    log: EventLog,
    m: int = NUM_MASKS,
    seed: int = DEFAULT_SEED,
) -> list[tuple[int, float]]:
    """Una puntuación por evento, en el orden del log: [(índice, puntuación), ...]."""
    if len(log) == 0:
        return []
    scores = state.score(embed_events(model, log.events, m=m, seed=seed))
    return [(i, float(s)) for i, s in enumerate(scores)]


def top_k_count(n: int, k_pct: float) -> int:
    # round(..., 9) evita que 0.1 × 30 = 3.0000000000000004 suba a 4
    return max(1, math.ceil(round(k_pct * n, 9)))


def top_k_mean(scores: Iterable[float], k_pct: float) -> float:
    ordered = sorted(scores, reverse=True)
    top = ordered[: top_k_count(len(ordered), k_pct)]
    return sum(top) / len(top)


# ======================================================
# Función: window_scores
# ======================================================
def window_scores(
    scored: Sequence[tuple[int, float]],
    log: EventLog,
    w_l: int,
    stride: int,
    k_pct: float,
) -> list[TimeWindow]:
    """
    Agrupa las puntuaciones en ventanas [start, start + w_l) que parten del primer
    timestamp y avanzan de `stride` en `stride`. Las ventanas vacías se omiten.

    La puntuación de cada ventana es la media del top max(1, ceil(k_pct × n)) de las
    puntuaciones de sus n eventos. El log no necesita estar ordenado.
    """
    if w_l <= 0 or stride <= 0:
        raise ValueError("w_l y stride deben ser > 0")
    if not 0 < k_pct <= 1:
        raise ValueError("k_pct debe estar en (0, 1]")
    if not scored:
        return []

    entries = sorted(((log[i].timestamp, i, s) for i, s in scored), key=lambda t: (t[0], t[1]))
    timestamps = np.array([t for t, _, _ in entries], dtype=np.int64)
    first = int(timestamps[0])

    # índices de ventana j que contienen algún evento
    offsets = timestamps - first
    hi = offsets // stride
    lo = np.maximum(0, -((-(offsets - w_l + 1)) // stride))
    candidates = sorted({int(j) for a, b in zip(lo, hi) for j in range(int(a), int(b) + 1)})

    windows = []
    for j in candidates:
        start = first + j * stride
        end = start + w_l
        left = int(np.searchsorted(timestamps, start, side="left"))
        right = int(np.searchsorted(timestamps, end, side="left"))
        if left == right:
            continue
        members = entries[left:right]
        windows.append(
            TimeWindow(
                start=start,
                end=end,
                event_indices=tuple(i for _, i, _ in members),
                score=top_k_mean((s for _, _, s in members), k_pct),
                timestamps=tuple(t for t, _, _ in members),
            )
        )
    return windows


def mean_window_score(windows: Sequence[TimeWindow]) -> float:
    if not windows:
        raise EmptyTrainingSet("No hay ventanas de entrenamiento para calcular T_ano")
    return sum(w.score for w in windows) / len(windows)


# ======================================================
# Función: derive_t_ano
# ======================================================
def derive_t_ano(
    state: DetectorState,
    model: MaeModel,
    train_log: EventLog,
    w_l: int,
    stride: int,
    k_pct: float,
    m: int = NUM_MASKS,
    seed: int = DEFAULT_SEED,
) -> float:
    """T_ano = media de las puntuaciones de todas las ventanas del log de entrenamiento."""
    if len(train_log) == 0:
        raise EmptyTrainingSet("El log de entrenamiento está vacío")
    scored = score_events(state, model, train_log, m, seed)
    windows = window_scores(scored, train_log, w_l, stride, k_pct)
    t_ano = mean_window_score(windows)
    logger.info(f"📏 T_ano = {t_ano:.6f} ({len(windows)} ventanas benignas)")
    return t_ano


# ======================================================
# Función: select_windows
# ======================================================
def select_windows(
    windows: Sequence[TimeWindow],
    t_ano: float,
    c: int = MAX_WINDOWS,
) -> WindowSelection:
    """
    Conserva como máximo `c` ventanas con puntuación > t_ano, ordenadas por puntuación
    descendente; los empates se resuelven por inicio más temprano.

    E_TRU es la unión de los eventos de las ventanas elegidas, en orden temporal y sin
    duplicados. Una selección vacía significa "ningún ataque detectado".
    """
    if c < 1:
        raise ValueError("c debe ser >= 1")
    above = [w for w in windows if w.score > t_ano]
    above.sort(key=lambda w: (-w.score, w.start))
    selected = tuple(above[:c])

    members: set[tuple[int, int]] = set()
    for window in selected:
        stamps = window.timestamps or (0,) * len(window.event_indices)
        members.update(zip(stamps, window.event_indices))
    truncated = tuple(i for _, i in sorted(members))

    if selected:
        logger.success(
            f"✅ {len(selected)} ventanas de ataque seleccionadas ({len(truncated)} eventos)"
        )
    else:
        logger.info("Ninguna ventana supera T_ano: no se detecta ataque")
    return WindowSelection(tuple(windows), selected, truncated, float(t_ano))
