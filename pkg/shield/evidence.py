"""
evidence.py
===========
Reducción del alcance de la investigación:

1. `summarize`         → agrupa E_TRU por todos los campos salvo la marca de tiempo.
2. `identify_evidence` → el LLM señala las líneas de comando sospechosas (evidencia).
3. `build_graph`       → grafo de procedencia bajo demanda sobre E_TRU (networkx).
4. `expand`            → BFS desde las entidades de la evidencia hasta agotar T_NBR.
"""

from dataclasses import asdict, dataclass, field
import re
from typing import Any, Iterable, Sequence

from loguru import logger
import networkx as nx
import pandas as pd

from shield.config import SUMMARY_BYPASS_THRESHOLD, T_NBR
from shield.errors import NoSeedMatch
from shield.events import Event, entity_names
from shield.llm import LlmProvider, complete_with_retry, strip_reasoning

SUMMARY_KEY = (
    "subject_id",
    "object_id",
    "event_type",
    "process_path",
    "ip_address",
    "file_path",
    "command_line",
)
KIND_PRECEDENCE = {"process": 0, "file": 1, "ip": 2}
NO_INTERNET = "Answer without internet search."


@dataclass(frozen=True)
class EventSummary:
    subject_id: str
    object_id: str
    event_type: str
    process_path: str
    ip_address: str
    file_path: str
    command_line: str
    ts_min: int
    ts_max: int
    count: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class AttackEvidence:
    command_lines: tuple[str, ...]
    provider_meta: dict[str, str] = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {"command_lines": list(self.command_lines), "provider_meta": self.provider_meta}

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "AttackEvidence":
        return cls(tuple(raw.get("command_lines", ())), dict(raw.get("provider_meta", {})))


# ======================================================
# Función: summarize
# ======================================================
def summarize(
    e_tru: Sequence[Event],
    bypass_threshold: int = SUMMARY_BYPASS_THRESHOLD,
) -> list[EventSummary]:
    """
    Resume eventos agrupándolos por (sujeto, objeto, tipo, rutas, IP, comando).

    Cada resumen guarda el primer y último timestamp y la frecuencia del grupo. Si hay
    `bypass_threshold` eventos o menos, no se agrupa y cada evento da un resumen de
    frecuencia 1. La salida está ordenada por `ts_min`.
    """
    if not e_tru:
        return []
    columns = (*SUMMARY_KEY, "timestamp")
    frame = pd.DataFrame([{k: getattr(e, k) for k in columns} for e in e_tru])

    if len(e_tru) <= bypass_threshold:
        frame = frame.sort_values("timestamp", kind="stable")
        return [
            EventSummary(
                **{k: row[k] for k in SUMMARY_KEY},
                ts_min=int(row["timestamp"]),
                ts_max=int(row["timestamp"]),
                count=1,
            )
            for row in frame.to_dict(orient="records")
        ]

    grouped = (
        frame.groupby(list(SUMMARY_KEY), sort=False, dropna=False)["timestamp"]
        .agg(ts_min="min", ts_max="max", count="size")
        .reset_index()
        .sort_values("ts_min", kind="stable")
    )
    summaries = [
        EventSummary(
            **{k: row[k] for k in SUMMARY_KEY},
            ts_min=int(row["ts_min"]),
            ts_max=int(row["ts_max"]),
            count=int(row["count"]),
        )
        for row in grouped.to_dict(orient="records")
    ]
    logger.info(f"🗜️ {len(e_tru)} eventos resumidos en {len(summaries)} grupos")
    return summaries


def format_ts(ts: int) -> str:
    """Marca de tiempo en µs → texto ISO en UTC."""
    return pd.Timestamp(ts, unit="us", tz="UTC").isoformat()


def summaries_to_text(
    summaries: Iterable[EventSummary], names: dict[str, str] | None = None
) -> str:
    """Una línea por resumen: rango temporal, frecuencia, sujeto, acción, objeto y comando."""
    names = names or {}
    lines = []
    for s in summaries:
        subject = names.get(s.subject_id, s.process_path or s.subject_id)
        target = names.get(s.object_id, s.file_path or s.ip_address or s.object_id)
        command = f" | cmd: {s.command_line}" if s.command_line else ""
        span = f"[{format_ts(s.ts_min)} - {format_ts(s.ts_max)}]"
        lines.append(f"{span} x{s.count} {subject} {s.event_type} {target}{command}")
    return "\n".join(lines)


def distinct_command_lines(summaries: Iterable[EventSummary]) -> list[str]:
    seen: dict[str, None] = {}
    for s in summaries:
        if s.command_line.strip():
            seen.setdefault(s.command_line, None)
    return list(seen)


# ======================================================
# Función: identify_evidence
# ======================================================
def build_evidence_prompt(command_lines: Sequence[str], env_description: str) -> str:
    listed = "\n".join(f"- {c}" for c in command_lines) or "- (none)"
    return (
        "You are a security analyst reviewing host audit logs.\n"
        f"Environment: {env_description}\n"
        "Please identify all commands related to attacks among the command lines below. "
        "Copy each suspicious command line verbatim, one per line, with no explanation. "
        "If nothing is suspicious, answer NONE.\n"
        f"{NO_INTERNET}\n"
        f"Command Lines:\n{listed}\n"
    )


_BULLET = re.compile(r"^\s*(?:[-*•+]|\d+[.)])\s*")
_QUOTED = re.compile(r"`([^`]+)`|\"([^\"]+)\"")


def parse_evidence_response(response: str) -> list[str]:
    """Extrae cadenas candidatas: una por línea, sin viñetas ni comillas envolventes."""
    candidates: list[str] = []
    for line in strip_reasoning(response).splitlines():
        line = _BULLET.sub("", line).strip()
        if not line or line.upper() == "NONE" or line.endswith(":") or line.startswith("```"):
            continue
        quoted = [(a or b).strip() for a, b in _QUOTED.findall(line)]
        if quoted:
            candidates.extend(q for q in quoted if q)
        else:
            candidates.append(line)
    return candidates


def identify_evidence(
    summaries: Sequence[EventSummary],
    env_description: str,
    provider: LlmProvider,
) -> AttackEvidence:
    """
    Pide al LLM la evidencia de ataque (líneas de comando sospechosas).

    Cada cadena devuelta debe aparecer (subcadena, sin distinguir mayúsculas) en alguna
    línea de comando de los resúmenes; las que no, se descartan y se registran.
    """
    command_lines = distinct_command_lines(summaries)
    prompt = build_evidence_prompt(command_lines, env_description)
    logger.info(f"🔎 Solicitando evidencia de ataque ({len(command_lines)} comandos distintos)")
    response = complete_with_retry(provider, prompt)

    lowered = [c.lower() for c in command_lines]
    grounded: dict[str, None] = {}
    for candidate in parse_evidence_response(response):
        needle = candidate.lower()
        if any(needle in c for c in lowered):
            grounded.setdefault(candidate, None)
        else:
            logger.warning(f"⚠️ Evidencia descartada (no aparece en los logs): {candidate!r}")
    evidence = AttackEvidence(tuple(grounded), provider.meta(prompt))
    logger.success(f"✅ Evidencia identificada: {len(evidence.command_lines)} comandos")
    return evidence


# ======================================================
# Grafo de procedencia
# ======================================================
def object_kind(event: Event) -> str:
    if event.ip_address:
        return "ip"
    if event.file_path:
        return "file"
    return "process"


@dataclass
class ProvenanceGraph:
    """
    Grafo dirigido de entidades. Cada arista (sujeto, objeto) guarda los índices de sus
    eventos (`events`) y su peso (= número de eventos).
    """

    graph: nx.DiGraph
    events: dict[int, Event]

    @property
    def node_count(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def edge_count(self) -> int:
        return self.graph.number_of_edges()

    def weight(self, src: str, dst: str) -> int:
        return self.graph.edges[src, dst]["weight"]

    def kind(self, node: str) -> str:
        return self.graph.nodes[node]["kind"]

    def incident_edges(self, node: str) -> list[tuple[str, str]]:
        return list(self.graph.out_edges(node)) + list(self.graph.in_edges(node))

    def edge_events(self, edge: tuple[str, str]) -> list[int]:
        return self.graph.edges[edge]["events"]

    def order_events(self, indices: Iterable[int]) -> tuple[int, ...]:
        return tuple(sorted(set(indices), key=lambda i: (self.events[i].timestamp, i)))


def _set_kind(graph: nx.DiGraph, node: str, kind: str, name: str) -> None:
    if node not in graph:
        graph.add_node(node, kind=kind, name=name)
    elif KIND_PRECEDENCE[kind] > KIND_PRECEDENCE[graph.nodes[node]["kind"]]:
        graph.nodes[node]["kind"] = kind


def build_graph(e_tru: Sequence[Event], indices: Sequence[int] | None = None) -> ProvenanceGraph:
    """
    Construye el grafo de procedencia de E_TRU.

    Parámetros
    ----------
    e_tru : Sequence[Event]
        Eventos truncados.
    indices : Sequence[int], opcional
        Índice de cada evento en el log de prueba; por defecto su posición en `e_tru`.
    """
    indices = list(range(len(e_tru))) if indices is None else list(indices)
    names = entity_names(e_tru)
    graph = nx.DiGraph()
    events: dict[int, Event] = {}
    for index, event in zip(indices, e_tru):
        events[index] = event
        _set_kind(graph, event.subject_id, "process", names[event.subject_id])
        _set_kind(graph, event.object_id, object_kind(event), names[event.object_id])
        if graph.has_edge(event.subject_id, event.object_id):
            data = graph.edges[event.subject_id, event.object_id]
            data["events"].append(index)
            data["weight"] += 1
        else:
            graph.add_edge(event.subject_id, event.object_id, events=[index], weight=1)
    logger.info(
        f"🕸️ Grafo de procedencia: {graph.number_of_nodes()} nodos, "
        f"{graph.number_of_edges()} aristas"
    )
    return ProvenanceGraph(graph, events)


@dataclass(frozen=True)
class EvidenceNeighborhood:
    event_indices: tuple[int, ...]
    events: tuple[Event, ...]
    seed_nodes: tuple[str, ...]
    iterations: int
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.events)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed_nodes": list(self.seed_nodes),
            "iterations": self.iterations,
            "fallback": self.fallback,
            "events": [
                {"index": i, **e.to_record()} for i, e in zip(self.event_indices, self.events)
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "EvidenceNeighborhood":
        indices, events = [], []
        for record in raw.get("events", []):
            record = dict(record)
            indices.append(int(record.pop("index")))
            events.append(Event(**record))
        return cls(
            tuple(indices),
            tuple(events),
            tuple(raw.get("seed_nodes", ())),
            int(raw.get("iterations", 0)),
            bool(raw.get("fallback", False)),
        )


def seed_nodes(graph: ProvenanceGraph, evidence: AttackEvidence) -> list[str]:
    """Sujetos de los eventos cuya línea de comando contiene alguna cadena de evidencia."""
    needles = [c.lower() for c in evidence.command_lines if c.strip()]
    seeds = {
        event.subject_id
        for event in graph.events.values()
        if event.command_line and any(n in event.command_line.lower() for n in needles)
    }
    return sorted(seeds)


# ======================================================
# Función: expand
# ======================================================
def expand(
    graph: ProvenanceGraph, evidence: AttackEvidence, t_nbr: int = T_NBR
) -> EvidenceNeighborhood:
    """
    Expansión del vecindario de la evidencia por BFS (grafo tratado como no dirigido).

    - Iteración 0: nodos semilla y aristas entre ellos.
    - Cada iteración añade todas las aristas incidentes al conjunto actual de nodos.
    - Se detiene tras la primera iteración en la que los eventos representados superan
      `t_nbr` (esa última tanda se conserva entera) o cuando ya no hay aristas nuevas.

    Excepciones
    -----------
    NoSeedMatch
        Si ninguna línea de comando del grafo contiene la evidencia.
    """
    if t_nbr < 1:
        raise ValueError("t_nbr debe ser >= 1")
    seeds = seed_nodes(graph, evidence)
    if not seeds:
        raise NoSeedMatch("La evidencia no coincide con ninguna entidad de E_TRU")

    nodes = set(seeds)
    edges = {(u, v) for u, v in graph.graph.subgraph(seeds).edges}
    count = sum(graph.weight(u, v) for u, v in edges)
    iterations = 0
    while count <= t_nbr:
        frontier = {e for node in sorted(nodes) for e in graph.incident_edges(node)} - edges
        if not frontier:
            break
        iterations += 1
        edges |= frontier
        count += sum(graph.weight(u, v) for u, v in frontier)
        nodes |= {n for edge in frontier for n in edge}

    ordered = graph.order_events(i for edge in edges for i in graph.edge_events(edge))
    logger.success(
        f"✅ Vecindario de evidencia: {len(ordered)} eventos, {iterations} iteraciones, "
        f"{len(seeds)} semillas"
    )
    return EvidenceNeighborhood(
        ordered, tuple(graph.events[i] for i in ordered), tuple(seeds), iterations
    )


def fallback_neighborhood(
    e_tru: Sequence[Event], indices: Sequence[int], t_nbr: int = T_NBR
) -> EvidenceNeighborhood:
    """Sin semillas: las primeras `t_nbr` filas de E_TRU."""
    head = list(zip(indices, e_tru))[:t_nbr]
    return EvidenceNeighborhood(
        tuple(i for i, _ in head), tuple(e for _, e in head), (), 0, fallback=True
    )


# ======================================================
# Función: gather_evidence
# ======================================================
def gather_evidence(
    e_tru: Sequence[Event],
    indices: Sequence[int],
    env_description: str,
    provider: LlmProvider | None,
    t_nbr: int = T_NBR,
    bypass: int = SUMMARY_BYPASS_THRESHOLD,
) -> tuple[AttackEvidence, EvidenceNeighborhood]:
    """
    Evidencia y vecindario de E_TRU, con las mismas reglas en el pipeline y en la CLI.

    - E_TRU vacío: evidencia y vecindario vacíos, sin consultar al LLM.
    - Sin proveedor: no hay evidencia y el vecindario son las primeras filas de E_TRU.
    - Evidencia sin semillas en el grafo: mismo respaldo con las primeras filas.
    """
    if not e_tru:
        return AttackEvidence(()), EvidenceNeighborhood((), (), (), 0)
    if provider is None:
        return AttackEvidence(()), fallback_neighborhood(e_tru, indices, t_nbr)

    evidence = identify_evidence(summarize(e_tru, bypass), env_description, provider)
    try:
        neighborhood = expand(build_graph(e_tru, indices), evidence, t_nbr)
    except NoSeedMatch:
        logger.warning("⚠️ Evidencia sin semillas: se usan las primeras filas")
        neighborhood = fallback_neighborhood(e_tru, indices, t_nbr)
    return evidence, neighborhood
