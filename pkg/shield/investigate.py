"""
investigate.py
==============
Investigación del ataque con el LLM:

1. `build_prompt`      → prompt multipropósito (alcance, entorno, logs, evidencia, perfil
                         benigno, pautas, objetivos y formato de salida) dentro del
                         presupuesto de tokens.
2. `run_investigation` → consulta al proveedor y parseo tolerante de la respuesta.
3. `locate`            → localiza los IoC en las entidades y eventos de las ventanas de ataque.
4. `render_markdown`   → versión legible del informe (report.md).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import re
from typing import Any, Callable, Iterable, Sequence

from loguru import logger

from shield.config import TOKEN_BUDGET
from shield.detect import WindowSelection
from shield.errors import BudgetUnsatisfiable, ParseError
from shield.events import Event, EventLog, entity_names, strip_port
from shield.evidence import NO_INTERNET, AttackEvidence, summaries_to_text, summarize
from shield.llm import LlmProvider, complete_with_retry, count_tokens, strip_reasoning

TACTICS = (
    "Reconnaissance",
    "Resource Development",
    "Initial Access",
    "Execution",
    "Persistence",
    "Privilege Escalation",
    "Defense Evasion",
    "Credential Access",
    "Discovery",
    "Lateral Movement",
    "Collection",
    "Command and Control",
    "Exfiltration",
    "Impact",
)
IOC_KINDS = ("ips", "domains", "processes", "files")


def canonical_tactic(name: str) -> str | None:
    """Nombre canónico de una táctica (sin distinguir mayúsculas), o None si no existe."""
    key = re.sub(r"\s+", " ", name.replace("&", " and ")).strip().lower()
    for tactic in TACTICS:
        if tactic.lower() == key:
            return tactic
    return None


# ======================================================
# Tipos
# ======================================================
@dataclass(frozen=True)
class AttackStep:
    tactic: str
    description: str


@dataclass(frozen=True)
class InvestigationReport:
    narrative: str
    steps: tuple[AttackStep, ...]
    iocs: dict[str, tuple[str, ...]]
    raw_response: str = ""
    provider_meta: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def all_iocs(self) -> list[str]:
        seen: dict[str, None] = {}
        for kind in IOC_KINDS:
            for value in self.iocs.get(kind, ()):
                seen.setdefault(value, None)
        return list(seen)

    def to_dict(self) -> dict[str, Any]:
        return {
            "narrative": self.narrative,
            "steps": [{"tactic": s.tactic, "description": s.description} for s in self.steps],
            "iocs": {kind: list(self.iocs.get(kind, ())) for kind in IOC_KINDS},
            "raw_response": self.raw_response,
            "provider_meta": self.provider_meta,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "InvestigationReport":
        iocs = raw.get("iocs", {})
        return cls(
            narrative=raw.get("narrative", ""),
            steps=tuple(AttackStep(s["tactic"], s["description"]) for s in raw.get("steps", [])),
            iocs={kind: tuple(iocs.get(kind, ())) for kind in IOC_KINDS},
            raw_response=raw.get("raw_response", ""),
            provider_meta=dict(raw.get("provider_meta", {})),
        )


def no_attack_report() -> InvestigationReport:
    """Informe para una selección vacía: ninguna ventana supera T_ano."""
    return InvestigationReport(
        narrative="No se detectaron ventanas de ataque: ninguna ventana supera T_ano.",
        steps=(),
        iocs={kind: () for kind in IOC_KINDS},
    )


@dataclass(frozen=True)
class DetectionLabels:
    attack_entities: tuple[str, ...]
    entity_names: dict[str, str]
    attack_event_indices: tuple[int, ...]

    @property
    def attack_entity_names(self) -> set[str]:
        return {self.entity_names.get(e, e) for e in self.attack_entities}

    def to_dict(self) -> dict[str, Any]:
        return {
            "attack_entities": [
                {"id": e, "name": self.entity_names.get(e, e)} for e in self.attack_entities
            ],
            "attack_event_indices": list(self.attack_event_indices),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "DetectionLabels":
        entities = raw.get("attack_entities", [])
        return cls(
            attack_entities=tuple(e["id"] for e in entities),
            entity_names={e["id"]: e.get("name", e["id"]) for e in entities},
            attack_event_indices=tuple(int(i) for i in raw.get("attack_event_indices", [])),
        )


# ======================================================
# Función: build_prompt
# ======================================================
SCOPE = (
    "# Scope\n"
    "You are a security analyst investigating host audit logs. The entities under "
    "investigation are processes, files and IP addresses (including domains). Inspect the "
    "logs below and determine whether they indicate malicious activity."
)
GUIDELINES = (
    "# Guidelines\n"
    "- Provenance: search your knowledge of known attack patterns, tools and techniques, and "
    "find IOCs that are relevant to the evidence.\n"
    "- Attack Narrative: summarize the overall attack flow under the kill-chain framework ("
    + ", ".join(f'"{t}"' for t in TACTICS)
    + "). The logs of some stages might be missing; in that case skip their description.\n"
    "- Tools: pay attention to attack tools (e.g., Metasploit, meterpreter, powershell).\n"
    "- Timeline: describe the attacker's actions in chronological order.\n"
    "- IOCs: list malicious IPs, domains, processes and files."
)
GOALS = (
    "# Goals\n"
    "1. First, write a detailed narrative that outlines the attack procedure.\n"
    "2. Next, break down the entire attack campaign into steps and name each step after "
    "the MITRE ATT&CK tactic it belongs to.\n"
    "3. Finally, derive the malicious entities as Indicators of Compromise from the "
    "narrative and the steps."
)
OUTPUT_FORMAT = (
    "# Output Format\n"
    "## Attack Narrative\n"
    "A concise paragraph summarizing the attack flow.\n"
    "## Key Steps\n"
    "1) [Tactic name]: description of the attack step\n"
    "2) [Tactic name]: description of the attack step\n"
    "## IOCs\n"
    "- IPs: [suspicious IPs]\n"
    "- Domains: [suspicious domains]\n"
    "- Processes: [suspicious process names]\n"
    "- Files: [suspicious file modifications or deletions]"
)


def _assemble(events: Sequence[Event], profile_block: str, evidence: Sequence[str], env: str):
    logs = summaries_to_text(summarize(events, bypass_threshold=0), entity_names(events))
    listed = "\n".join(f"- {c}" for c in evidence) or "- (none)"
    sections = [
        SCOPE,
        f"# Environment\nThe logs are collected on {env.strip() or 'an unspecified host'}.",
        "# Logs\nFormat: [first seen - last seen] xcount subject action object | cmd: "
        f"command line\n{logs or '(no events)'}",
        f"# Your available evidence\n{listed}",
        "# Benign Profile\nSummary of process activities on the same machine during the "
        "attack-free period (executable -> object -> frequency):\n"
        f"{profile_block or '{}'}",
        GUIDELINES,
        GOALS,
        OUTPUT_FORMAT,
        NO_INTERNET,
    ]
    return "\n\n".join(sections) + "\n"


def build_prompt(
    neighborhood,
    profile_block: str,
    evidence: AttackEvidence | Sequence[str],
    env: str,
    token_budget: int = TOKEN_BUDGET,
    counter: Callable[[str], int] = count_tokens,
) -> str:
    """
    Construye el prompt de investigación respetando `token_budget`.

    Si el prompt completo no cabe, se recortan eventos del final del vecindario (búsqueda
    binaria sobre el número de eventos conservados) y se emite un aviso.

    Excepciones
    -----------
    BudgetUnsatisfiable
        Si ni siquiera el prompt sin eventos cabe en el presupuesto.
    """
    events = list(getattr(neighborhood, "events", neighborhood))
    commands = list(getattr(evidence, "command_lines", evidence))

    def render(n: int) -> str:
        return _assemble(events[:n], profile_block, commands, env)

    prompt = render(len(events))
    if counter(prompt) <= token_budget:
        return prompt

    empty = render(0)
    if counter(empty) > token_budget:
        raise BudgetUnsatisfiable(
            f"El prompt sin eventos ocupa {counter(empty)} tokens (presupuesto {token_budget})"
        )
    lo, hi = 0, len(events)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if counter(render(mid)) <= token_budget:
            lo = mid
        else:
            hi = mid
    logger.warning(
        f"⚠️ Prompt recortado a {lo}/{len(events)} eventos para respetar {token_budget} tokens"
    )
    return render(lo)


# ======================================================
# Parser de la respuesta
# ======================================================
_MARKUP = r"(?:\*\*|__)?"
_HEADING = re.compile(
    rf"^\s*(?P<hashes>#{{1,6}})?\s*(?:[-*•+]\s+|\d+[.)]\s*)?{_MARKUP}\s*"
    r"(?P<name>attack narrative|narrative|key steps|attack steps|iocs?|"
    r"indicators of compromise(?:\s*\(iocs?\))?)"
    rf"\s*{_MARKUP}\s*(?P<colon>:)?\s*{_MARKUP}\s*(?P<rest>.*)$",
    re.IGNORECASE,
)
_IOC_LABEL = re.compile(
    rf"^\s*(?:[-*•+]\s+|\d+[.)]\s*)?{_MARKUP}\s*"
    r"(?P<label>ip addresses|ips?|domain names|domains?|process names|processes|process|"
    r"file names|filenames|files?)"
    rf"\s*{_MARKUP}\s*:\s*{_MARKUP}\s*(?P<rest>.*)$",
    re.IGNORECASE,
)
_BULLET = re.compile(r"^\s*(?:[-*•+]\s+|\d+[.)]\s*|\[\d+\]\s*)")
_STEP = re.compile(r"^\[?\s*(?P<name>[^:\[\]]+?)\s*\]?\s*(?::|\s[-–]\s)\s*(?P<desc>.*)$")
_IOC_ITEM = re.compile(r"\s*\"([^\"]+)\"|\s*`([^`]+)`|([^,]+)")
_PAREN = re.compile(r"\([^)]*\)")
_EMPTY_VALUES = {"none", "n/a", "na", "-", "null", "not observed", "none observed"}


def _section_of(name: str) -> str:
    name = name.lower()
    if "narrative" in name:
        return "narrative"
    if "step" in name:
        return "steps"
    return "iocs"


def _ioc_kind(label: str) -> str:
    label = label.lower()
    if label.startswith("ip"):
        return "ips"
    if label.startswith("domain"):
        return "domains"
    if label.startswith("process"):
        return "processes"
    return "files"


def _clean_markup(text: str) -> str:
    return text.replace("**", "").replace("__", "").strip()


def parse_ioc_values(text: str) -> list[str]:
    """
    Valores de una lista de IoC: elementos entre comillas o backticks, o separados por comas.
    Los comentarios entre paréntesis se descartan.

    >>> parse_ioc_values('`146.153.68.151` (C2 server)')
    ['146.153.68.151']
    """
    values = []
    for quoted, ticked, bare in _IOC_ITEM.findall(_clean_markup(text)):
        value = quoted or ticked or _PAREN.sub("", bare)
        value = value.strip().rstrip(".;").strip()
        if value and value.lower() not in _EMPTY_VALUES:
            values.append(value)
    return values


def _split_sections(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        match = _HEADING.match(line)
        if match and (match["colon"] or match["hashes"] or not match["rest"].strip()):
            current = _section_of(match["name"])
            sections.setdefault(current, [])
            if match["rest"].strip():
                sections[current].append(match["rest"])
        elif current is not None:
            sections[current].append(line)
    return sections


def _parse_steps(lines: Iterable[str]) -> list[AttackStep]:
    steps: list[AttackStep] = []
    last_dropped = False
    for line in lines:
        text = _clean_markup(_BULLET.sub("", line))
        if not text:
            continue
        match = _STEP.match(text)
        tactic = canonical_tactic(match["name"]) if match else None
        if tactic:
            steps.append(AttackStep(tactic, match["desc"].strip()))
            last_dropped = False
        elif match and len(match["name"]) <= 40:
            logger.warning(f"⚠️ Táctica desconocida descartada: '{match['name']}'")
            last_dropped = True
        elif steps and not last_dropped:
            # continuación de la descripción anterior
            prev = steps[-1]
            steps[-1] = AttackStep(prev.tactic, f"{prev.description} {text}".strip())
    return steps


def _parse_iocs(lines: Iterable[str]) -> dict[str, tuple[str, ...]]:
    found: dict[str, dict[str, None]] = {kind: {} for kind in IOC_KINDS}
    kind = None
    for line in lines:
        match = _IOC_LABEL.match(line)
        if match:
            kind = _ioc_kind(match["label"])
            rest = match["rest"]
        elif kind is not None:
            rest = _BULLET.sub("", line)
        else:
            continue
        for value in parse_ioc_values(rest):
            found[kind].setdefault(value, None)
    return {k: tuple(v) for k, v in found.items()}


# ======================================================
# Función: parse_response
# ======================================================
def parse_response(raw: str, provider_meta: dict[str, Any] | None = None) -> InvestigationReport:
    """
    Parser tolerante: localiza las secciones "Attack Narrative", "Key Steps" e "IOCs"
    (markdown o texto plano, sin distinguir mayúsculas) tras eliminar los bloques de
    razonamiento.

    Excepciones
    -----------
    ParseError
        Si no aparece la sección de IOCs; la respuesta original se conserva.
    """
    sections = _split_sections(strip_reasoning(raw))
    if "iocs" not in sections:
        raise ParseError("La respuesta del LLM no contiene una sección de IOCs", raw)
    narrative = " ".join(
        _clean_markup(line) for line in sections.get("narrative", []) if line.strip()
    )
    return InvestigationReport(
        narrative=narrative,
        steps=tuple(_parse_steps(sections.get("steps", []))),
        iocs=_parse_iocs(sections["iocs"]),
        raw_response=raw,
        provider_meta=dict(provider_meta or {}),
    )


# ======================================================
# Función: run_investigation
# ======================================================
def run_investigation(prompt: str, provider: LlmProvider) -> InvestigationReport:
    logger.info(f"🕵️ Consultando al proveedor {provider.kind} ({provider.model_id})")
    response = complete_with_retry(provider, prompt)
    report = parse_response(response, provider.meta(prompt))
    logger.success(
        f"✅ Informe: {len(report.steps)} pasos, {len(report.all_iocs)} IoC identificados"
    )
    return report


def investigate_many(
    prompts: Sequence[str], provider: LlmProvider, max_in_flight: int = 2
) -> list[InvestigationReport]:
    """Investigaciones independientes en paralelo; el resultado respeta el orden de entrada."""
    if max_in_flight < 1:
        raise ValueError("max_in_flight debe ser >= 1")
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(lambda p: run_investigation(p, provider), prompts))


# ======================================================
# Función: locate
# ======================================================
def _components(value: str) -> set[str]:
    parts = {value, strip_port(value)}
    parts.update(p for p in re.split(r"[\\/]", value) if p)
    return parts


def subject_candidates(event: Event) -> set[str]:
    """Cadenas con las que un IoC puede identificar al sujeto del evento."""
    found: set[str] = set()
    if event.process_path:
        found |= _components(event.process_path.lower())
    if event.command_line.strip():
        command = event.command_line.lower().strip()
        found.add(command)
        for token in command.split():
            found |= _components(token)
    return found


def object_candidates(event: Event) -> set[str]:
    """Cadenas con las que un IoC puede identificar al objeto del evento."""
    found: set[str] = set()
    if event.file_path:
        found |= _components(event.file_path.lower())
    if event.ip_address:
        found |= {event.ip_address.lower(), strip_port(event.ip_address.lower())}
    return found


def ioc_variants(iocs: Iterable[str]) -> set[str]:
    variants: set[str] = set()
    for ioc in iocs:
        value = ioc.strip().lower()
        if value:
            variants |= {value, value.removeprefix("./"), strip_port(value)}
    variants.discard("")
    return variants


def locate(
    iocs: InvestigationReport | dict[str, Iterable[str]] | Iterable[str],
    testing_log: EventLog,
    selection: WindowSelection | None = None,
) -> DetectionLabels:
    """
    Marca las entidades de las ventanas de ataque que coinciden con algún IoC.

    Un IoC identifica a una entidad si es igual (sin distinguir mayúsculas) a uno de sus
    campos identificativos, a un componente de ruta o a un token de su línea de comando;
    las IP se comparan con y sin puerto. Todas las entidades que comparten nombre visible
    con una entidad marcada se marcan también. Los eventos de ataque son los eventos de
    las ventanas cuyo sujeto u objeto está marcado.
    """
    if isinstance(iocs, InvestigationReport):
        values: Iterable[str] = iocs.all_iocs
    elif isinstance(iocs, dict):
        values = [v for kind in iocs.values() for v in kind]
    else:
        values = iocs
    variants = ioc_variants(values)
    names = entity_names(testing_log.events)
    if not variants:
        return DetectionLabels((), {}, ())

    scope = selection.truncated_events if selection is not None else range(len(testing_log))
    matched: set[str] = set()
    for i in scope:
        event = testing_log[i]
        if subject_candidates(event) & variants:
            matched.add(event.subject_id)
        if object_candidates(event) & variants:
            matched.add(event.object_id)

    matched_names = {names[e] for e in matched}
    flagged = {entity for entity, name in names.items() if name in matched_names}
    events = sorted(
        i
        for i in scope
        if testing_log[i].subject_id in flagged or testing_log[i].object_id in flagged
    )
    logger.success(f"✅ IoC localizados: {len(flagged)} entidades, {len(events)} eventos")
    return DetectionLabels(
        tuple(sorted(flagged)), {e: names[e] for e in sorted(flagged)}, tuple(events)
    )


# ======================================================
# Función: render_markdown
# ======================================================
def render_markdown(report: InvestigationReport, labels: DetectionLabels | None = None) -> str:
    lines = ["# Informe de investigación", "", "## Attack Narrative", "", report.narrative or "-"]
    lines += ["", "## Key Steps", ""]
    lines += [f"{n}. **{s.tactic}**: {s.description}" for n, s in enumerate(report.steps, 1)]
    if not report.steps:
        lines.append("-")
    lines += ["", "## IOCs", ""]
    for kind in IOC_KINDS:
        values = ", ".join(f"`{v}`" for v in report.iocs.get(kind, ())) or "-"
        lines.append(f"- **{kind.capitalize()}**: {values}")
    if labels is not None:
        lines += ["", "## Entidades localizadas", ""]
        lines += [f"- `{name}`" for name in sorted(labels.attack_entity_names)] or ["-"]
        lines.append("")
        lines.append(f"Eventos de ataque: {len(labels.attack_event_indices)}")
    if report.provider_meta:
        meta = ", ".join(f"{k}={v}" for k, v in sorted(report.provider_meta.items()))
        lines += ["", f"_Proveedor: {meta}_"]
    return "\n".join(lines) + "\n"
