"""
evaluate.py
===========
Evaluación de la detección y arnés de robustez:

- Métricas de entidades y eventos (precisión, MCC en aritmética entera exacta).
- Métricas de tácticas (coincidencia por nombre + similitud de la descripción).
- Similitud de la narrativa (SIM) con un proveedor de embeddings intercambiable.
- `inject_mimicry`: inyección de eventos de apariencia benigna alrededor del ataque.
"""

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

from loguru import logger
import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

from shield.errors import (
    InsufficientData,
    NoAttackEntities,
    PopulationTooSmall,
    ProviderError,
    SchemaError,
)
from shield.etl_modules.load_data import read_payload
from shield.events import EventLog, entity_names
from shield.investigate import AttackStep, DetectionLabels, InvestigationReport, canonical_tactic

SIM_THRESHOLD = 0.7


# ======================================================
# Tipos
# ======================================================
@dataclass(frozen=True)
class GroundTruth:
    attack_entities: frozenset[str]
    attack_event_indices: frozenset[int] = frozenset()
    tactic_steps: tuple[AttackStep, ...] = ()
    narrative: str = ""

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "GroundTruth":
        steps = []
        for step in raw.get("tactic_steps", []):
            tactic = canonical_tactic(step["tactic"])
            if tactic is None:
                raise SchemaError(f"Táctica no canónica: {step['tactic']}")
            steps.append(AttackStep(tactic, step.get("description", "")))
        return cls(
            attack_entities=frozenset(raw.get("attack_entities", [])),
            attack_event_indices=frozenset(int(i) for i in raw.get("attack_event_indices", [])),
            tactic_steps=tuple(steps),
            narrative=raw.get("narrative", ""),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "attack_entities": sorted(self.attack_entities),
            "attack_event_indices": sorted(self.attack_event_indices),
            "tactic_steps": [asdict(s) for s in self.tactic_steps],
            "narrative": self.narrative,
        }


def load_ground_truth(path: Path) -> GroundTruth:
    return GroundTruth.from_dict(read_payload(path))


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    mcc: float
    recall: float = 0.0
    tactic_precision: float | None = None
    tactic_f1: float | None = None
    story_sim: float | None = None

    @property
    def population(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


# ======================================================
# Función: confusion
# ======================================================
def confusion(predicted: Iterable, truth: Iterable, population: int) -> tuple[int, int, int, int]:
    """
    (tp, fp, tn, fn) para un conjunto predicho frente a la verdad de terreno.

    Excepciones
    -----------
    PopulationTooSmall
        Si la población es menor que |predicho ∪ verdad|.
    """
    if isinstance(predicted, DetectionLabels):
        predicted = predicted.attack_entity_names
    if isinstance(truth, GroundTruth):
        truth = truth.attack_entities
    predicted, truth = set(predicted), set(truth)
    union = len(predicted | truth)
    if population < union:
        raise PopulationTooSmall(f"Población {population} < |predicho ∪ verdad| = {union}")
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    return tp, fp, population - tp - fp - fn, fn


# ======================================================
# Función: precision_mcc
# ======================================================
def precision_mcc(tp: int, fp: int, tn: int, fn: int) -> tuple[float, float]:
    """
    Precisión y coeficiente de correlación de Matthews.

    Los productos se calculan con enteros exactos y la raíz se toma sobre la fracción
    num² / den, así no hay cancelación con conteos del orden de 10^6.
    """
    if min(tp, fp, tn, fn) < 0:
        raise ValueError("Los conteos deben ser no negativos")
    precision = tp / (tp + fp) if tp + fp else 0.0
    numerator = tp * tn - fp * fn
    denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denominator == 0:
        return precision, 0.0
    mcc = math.copysign(math.sqrt(Fraction(numerator * numerator, denominator)), numerator)
    return precision, max(-1.0, min(1.0, mcc))


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int, **extra) -> MetricsReport:
    precision, mcc = precision_mcc(tp, fp, tn, fn)
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricsReport(tp, fp, tn, fn, precision, mcc, recall, **extra)


# ======================================================
# Proveedores de similitud
# ======================================================
class SimilarityProvider(ABC):
    @abstractmethod
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Una fila normalizada (L2) por texto."""

    def similarity(self, a: str, b: str) -> float:
        vectors = self.embed([a, b])
        return float(np.dot(vectors[0], vectors[1]))


class HashedTrigramSimilarity(SimilarityProvider):
    """Coseno entre vectores de conteo de trigramas de caracteres (hashing, sin descargas)."""

    def __init__(self, n_features: int = 2**18):
        self.vectorizer = HashingVectorizer(
            analyzer="char",
            ngram_range=(3, 3),
            n_features=n_features,
            alternate_sign=False,
            norm="l2",
            lowercase=True,
        )

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return self.vectorizer.transform(list(texts)).toarray()


class SentenceEmbeddingSimilarity(SimilarityProvider):
    """Embeddings de frases con sentence-transformers (extra opcional `semantic`)."""

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise ProviderError(
                "sentence-transformers no está instalado (pip install shield[semantic])"
            ) from e
        try:
            self.model = SentenceTransformer(model_name)
        except Exception as e:
            raise ProviderError(f"No se pudo cargar el modelo {model_name}: {e}") from e

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(self.model.encode(list(texts), normalize_embeddings=True))


# ======================================================
# Función: tactic_metrics
# ======================================================
def tactic_metrics(
    predicted_steps: Sequence[AttackStep],
    truth_steps: Sequence[AttackStep],
    sim: SimilarityProvider | None = None,
    threshold: float = SIM_THRESHOLD,
) -> tuple[float, float]:
    """
    (precisión, F1) de las tácticas.

    Cada paso predicho consume el primer paso de la verdad aún libre con la misma
    táctica; es TP si la similitud de las descripciones supera `threshold` (con
    threshold <= 0 basta el nombre). Los predichos sin pareja son FP y los pasos de la
    verdad sin consumir son FN.
    """
    sim = sim or HashedTrigramSimilarity()
    free = list(range(len(truth_steps)))
    tp = fp = 0
    for step in predicted_steps:
        match = next((j for j in free if truth_steps[j].tactic == step.tactic), None)
        if match is None:
            fp += 1
            continue
        free.remove(match)
        score = sim.similarity(step.description, truth_steps[match].description)
        if threshold <= 0 or score > threshold:
            tp += 1
        else:
            fp += 1
    fn = len(free)
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return precision, f1


# ======================================================
# Función: story_sim
# ======================================================
def story_sim(
    narrative: str, truth_narrative: str, sim: SimilarityProvider | None = None
) -> float:
    if not narrative.strip() or not truth_narrative.strip():
        raise ValueError("Ambas narrativas deben ser no vacías")
    sim = sim or HashedTrigramSimilarity()
    return max(0.0, min(1.0, sim.similarity(narrative, truth_narrative)))


# ======================================================
# Función: evaluate_detection
# ======================================================
def evaluate_detection(
    labels: DetectionLabels,
    truth: GroundTruth,
    testing_log: EventLog,
    report: InvestigationReport | None = None,
    sim: SimilarityProvider | None = None,
    threshold: float = SIM_THRESHOLD,
) -> dict[str, MetricsReport]:
    """
    Métricas a nivel de entidad (por nombre visible; población = nombres distintos del
    log de prueba) y de evento (población = todos los eventos del log de prueba). Las
    métricas de tácticas y de narrativa se añaden al informe de entidades cuando tanto
    el informe como la verdad de terreno las contienen.
    """
    names = set(entity_names(testing_log.events).values())
    predicted = labels.attack_entity_names
    population = len(names | predicted | truth.attack_entities)

    extra: dict[str, float] = {}
    if report is not None and truth.tactic_steps:
        extra["tactic_precision"], extra["tactic_f1"] = tactic_metrics(
            report.steps, truth.tactic_steps, sim, threshold
        )
    if report is not None and truth.narrative.strip() and report.narrative.strip():
        extra["story_sim"] = story_sim(report.narrative, truth.narrative, sim)

    entity = metrics_from_counts(*confusion(predicted, truth.attack_entities, population), **extra)
    event = metrics_from_counts(
        *confusion(labels.attack_event_indices, truth.attack_event_indices, len(testing_log))
    )
    logger.success(
        f"📊 Entidades: TP={entity.tp} FP={entity.fp} FN={entity.fn} "
        f"precisión={entity.precision:.4f} MCC={entity.mcc:.4f}"
    )
    return {"entity": entity, "event": event}


# ======================================================
# Función: inject_mimicry
# ======================================================
@dataclass(frozen=True)
class _Span:
    start: int
    end: int
    subjects: tuple[str, ...]


def _attack_span(log: EventLog, truth: GroundTruth) -> tuple[_Span, set[str]]:
    names = entity_names(log.events)
    attack_ids = {e for e, name in names.items() if name in truth.attack_entities}
    if not attack_ids:
        raise NoAttackEntities("Ninguna entidad de ataque de la verdad aparece en el log")
    stamps = [
        e.timestamp for e in log if e.subject_id in attack_ids or e.object_id in attack_ids
    ]
    subjects = sorted({e.subject_id for e in log if e.subject_id in attack_ids})
    return _Span(min(stamps), max(stamps), tuple(subjects or sorted(attack_ids))), attack_ids


def inject_mimicry(log: EventLog, truth: GroundTruth, n: int, seed: int = 7) -> EventLog:
    """
    Añade al final del log `n` eventos sintéticos cuyo sujeto es una entidad de ataque y
    cuyos atributos se copian de un evento benigno, con marcas de tiempo dentro del
    intervalo activo del ataque. Los eventos originales no cambian.
    """
    if n < 0:
        raise ValueError("n debe ser >= 0")
    if not truth.attack_entities:
        raise NoAttackEntities("La verdad de terreno no tiene entidades de ataque")
    if n == 0:
        return log
    span, attack_ids = _attack_span(log, truth)
    benign = [
        e
        for i, e in enumerate(log)
        if i not in truth.attack_event_indices
        and e.subject_id not in attack_ids
        and e.object_id not in attack_ids
    ]
    if not benign:
        raise InsufficientData("El log no tiene eventos benignos que imitar")

    rng = np.random.default_rng(seed)
    subjects = rng.integers(0, len(span.subjects), size=n)
    templates = rng.integers(0, len(benign), size=n)
    stamps = rng.integers(span.start, span.end + 1, size=n)
    injected = [
        replace(benign[int(t)].project(), subject_id=span.subjects[int(s)], timestamp=int(ts))
        for s, t, ts in zip(subjects, templates, stamps)
    ]
    logger.info(f"🧪 {n} eventos de mimetismo inyectados (semilla {seed})")
    return log.with_events((*log.events, *injected))
