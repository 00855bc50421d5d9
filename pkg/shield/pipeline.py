"""
pipeline.py
===========
Orquestación del pipeline completo:

    ingest → mae → detect → evidence → profile → investigate → (evaluate)

Cada etapa persiste su artefacto en `out_dir` con un sobre que incluye el resumen
(sha256) de sus entradas. Al volver a ejecutar, una etapa cuyo artefacto tiene el mismo
resumen de entradas se carga desde disco y se marca como "cached".
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
import json
from pathlib import Path
import time
from typing import Any

from loguru import logger

from shield.config import PipelineConfig
from shield.detect import (
    TimeWindow,
    WindowSelection,
    derive_t_ano,
    fit_boundary,
    score_events,
    select_windows,
    window_scores,
)
from shield.errors import ShieldError, StageError
from shield.etl_modules.extractor_data import parse_source
from shield.etl_modules.load_data import (
    load_event_log,
    read_artifact,
    save_event_log,
    write_artifact,
)
from shield.etl_modules.transform_data import filter_fields, observed_types
from shield.evaluate import evaluate_detection, load_ground_truth
from shield.events import EventLog, digest_file, digest_text
from shield.evidence import (
    AttackEvidence,
    EvidenceNeighborhood,
    gather_evidence,
)
from shield.investigate import (
    IOC_KINDS,
    DetectionLabels,
    InvestigationReport,
    build_prompt,
    locate,
    no_attack_report,
    render_markdown,
    run_investigation,
)
from shield.llm import make_provider
from shield.mae.model import MaeModel, load_model, save_model
from shield.mae.training import embed_events, train
from shield.profile import (
    SampledProfile,
    build_profile,
    load_profile,
    match_profile,
    sample_profile,
    save_profile,
)

STAGES = ("ingest", "mae", "detect", "evidence", "profile", "investigate", "evaluate")


@dataclass
class PipelineResult:
    report: InvestigationReport
    labels: DetectionLabels
    metrics: dict[str, Any] | None = None
    status: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)


def _digest(*parts: Any) -> str:
    return digest_text(json.dumps(parts, sort_keys=True, default=str))


def _cached_payload(path: Path, input_digest: str) -> Any | None:
    """Payload del artefacto si existe y fue producido con las mismas entradas."""
    if not path.exists():
        return None
    try:
        artifact = read_artifact(path)
    except ShieldError:
        return None
    if artifact.get("input_digest") == input_digest:
        return artifact["payload"]
    return None


class _Runner:
    """Estado compartido entre etapas: estado por etapa y cronómetro."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.status: dict[str, str] = {}
        self.timings: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str, artifact: Path):
        logger.info(f"▶️ Etapa {name}")
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as e:
            logger.error(f"❌ Falló la etapa {name}: {e}")
            raise StageError(name, artifact, e) from e
        finally:
            self.timings[name] = round(time.perf_counter() - start, 6)
            logger.debug(f"⏱ {name}: {self.timings[name]:.3f} s")

    def mark(self, name: str, cached: bool) -> None:
        self.status[name] = "cached" if cached else "run"
        if cached:
            logger.info(f"♻️ {name}: artefacto reutilizado")

    def write(self, name: str, filename: str, payload: Any, input_digest: str) -> Path:
        return write_artifact(
            self.out / filename,
            name,
            payload,
            config_digest=self.config.digest_of("hyper", "mae", "components"),
            input_digest=input_digest,
        )


# ======================================================
# Etapas
# ======================================================
def _ingest(run: _Runner) -> tuple[EventLog | None, EventLog, str, str]:
    cfg = run.config
    artifact = run.out / "ingest.json"
    with run.stage("ingest", artifact):
        raw_digests = [
            digest_file(p) if p is not None else None for p in (cfg.train_log, cfg.test_log)
        ]
        key = _digest(raw_digests, cfg.log_format)
        train_path, test_path = run.out / "events_train.jsonl", run.out / "events_test.jsonl"
        cached = _cached_payload(artifact, key)
        if cached is not None and test_path.exists():
            train = load_event_log(train_path, "training") if cached["train_events"] else None
            test = load_event_log(test_path, "testing")
            run.mark("ingest", True)
        else:
            train = None
            if cfg.train_log is not None:
                train = filter_fields(parse_source(cfg.train_log, cfg.log_format, "training"))
                save_event_log(train, train_path)
            raw_test = parse_source(cfg.test_log, cfg.log_format, "testing")
            allowed = observed_types(train) if train is not None and len(train) else None
            test = filter_fields(raw_test, allowed)
            save_event_log(test, test_path)
            run.write(
                "ingest",
                "ingest.json",
                {
                    "train_events": len(train) if train is not None else 0,
                    "test_events": len(test),
                    "rejected": {
                        "train": train.rejected if train is not None else 0,
                        "test": raw_test.rejected,
                    },
                },
                key,
            )
            run.mark("ingest", False)
    train_digest = digest_file(train_path) if train is not None else ""
    return train, test, train_digest, digest_file(test_path)


def _mae(run: _Runner, train: EventLog | None, train_digest: str) -> tuple[MaeModel, str]:
    cfg = run.config
    model_path = Path(cfg.model_path) if cfg.model_path else run.out / "mae.pt"
    artifact = run.out / "mae.json"
    with run.stage("mae", model_path):
        if train is None:
            model = load_model(model_path)
            run.mark("mae", True)
            return model, digest_file(model_path)
        key = _digest(train_digest, cfg.to_dict()["mae"], cfg.hyper.seed)
        cached = _cached_payload(artifact, key)
        if cached is not None and model_path.exists():
            model = load_model(model_path)
            run.mark("mae", True)
        else:
            model = train_model(train, cfg)
            save_model(model, model_path)
            run.write(
                "mae",
                "mae.json",
                {
                    "model_path": str(model_path),
                    "vocab_size": len(model.tokenizer),
                    "loss_history": model.loss_history,
                },
                key,
            )
            run.mark("mae", False)
    return model, digest_file(model_path)


def train_model(train_log: EventLog, config: PipelineConfig) -> MaeModel:
    return train(train_log, hyper=config.mae, seed=config.hyper.seed)


def _whole_log_selection(test: EventLog) -> WindowSelection:
    """Sin MAE, E_TRU es el log de prueba completo."""
    if len(test) == 0:
        return WindowSelection((), (), (), 0.0)
    stamps = test.timestamps()
    order = tuple(sorted(range(len(test)), key=lambda i: (stamps[i], i)))
    window = TimeWindow(min(stamps), max(stamps) + 1, order, 0.0, tuple(stamps[i] for i in order))
    return WindowSelection((window,), (window,), order, 0.0)


def _detect(
    run: _Runner,
    model: MaeModel | None,
    model_digest: str,
    train: EventLog | None,
    train_digest: str,
    test: EventLog,
    test_digest: str,
) -> tuple[WindowSelection, str]:
    cfg, hp = run.config, run.config.hyper
    artifact = run.out / "selection.json"
    with run.stage("detect", artifact):
        if not cfg.components.mae:
            selection = _whole_log_selection(test)
            run.mark("detect", False)
            return selection, _digest("no-mae", test_digest)

        key = _digest(model_digest, train_digest, test_digest, cfg.to_dict()["hyper"])
        cached = _cached_payload(artifact, key)
        if cached is not None:
            selection = WindowSelection.from_dict(cached["selection"])
            run.mark("detect", True)
        else:
            if train is None:
                raise ShieldError("La detección necesita el log de entrenamiento (OCSVM y T_ano)")
            state = fit_boundary(embed_events(model, train.events, hp.m, hp.seed))
            t_ano = derive_t_ano(state, model, train, hp.w_l, hp.stride, hp.k_pct, hp.m, hp.seed)
            state = state.with_t_ano(t_ano)
            scored = score_events(state, model, test, hp.m, hp.seed)
            windows = window_scores(scored, test, hp.w_l, hp.stride, hp.k_pct)
            selection = select_windows(windows, state.t_ano, hp.c)
            run.write(
                "detect",
                "selection.json",
                {
                    "gamma": state.gamma,
                    "score_sign": state.score_sign,
                    "selection": selection.to_dict(),
                },
                key,
            )
            run.mark("detect", False)
    return selection, digest_file(artifact)


def _evidence(
    run: _Runner, test: EventLog, selection: WindowSelection, selection_digest: str
) -> tuple[AttackEvidence, EvidenceNeighborhood, str]:
    cfg, hp = run.config, run.config.hyper
    artifact = run.out / "evidence.json"
    with run.stage("evidence", artifact):
        key = _digest(
            selection_digest,
            cfg.to_dict()["provider"],
            cfg.env_description,
            hp.t_nbr,
            hp.summary_bypass,
            cfg.components.evidence,
        )
        cached = _cached_payload(artifact, key)
        if cached is not None:
            evidence = AttackEvidence.from_dict(cached["evidence"])
            neighborhood = EvidenceNeighborhood.from_dict(cached["neighborhood"])
            run.mark("evidence", True)
            return evidence, neighborhood, digest_file(artifact)

        indices = list(selection.truncated_events)
        e_tru = [test[i] for i in indices] if selection.detected else []
        provider = make_provider(cfg.provider) if cfg.components.evidence else None
        evidence, neighborhood = gather_evidence(
            e_tru, indices, cfg.env_description, provider, hp.t_nbr, hp.summary_bypass
        )
        run.write(
            "evidence",
            "evidence.json",
            {"evidence": evidence.to_dict(), "neighborhood": neighborhood.to_dict()},
            key,
        )
        run.mark("evidence", False)
    return evidence, neighborhood, digest_file(artifact)


def _profile(
    run: _Runner, train: EventLog | None, train_digest: str
) -> tuple[SampledProfile, str]:
    cfg, hp = run.config, run.config.hyper
    artifact = run.out / "profile.json"
    with run.stage("profile", artifact):
        if not cfg.components.profile:
            run.mark("profile", False)
            return SampledProfile({}, hp.r, hp.seed), _digest("no-profile")
        if cfg.profile_path is not None and train is None:
            profile = load_profile(cfg.profile_path)
            run.mark("profile", True)
            return profile, digest_file(cfg.profile_path)
        if train is None:
            raise ShieldError("El perfil benigno necesita train_log o profile_path")

        key = _digest(train_digest, hp.r, hp.seed)
        cached = _cached_payload(artifact, key)
        if cached is not None:
            profile = load_profile(artifact)
            run.mark("profile", True)
        else:
            profile = sample_profile(build_profile(train), hp.r, hp.seed)
            save_profile(profile, artifact, input_digest=key)
            run.mark("profile", False)
    return profile, digest_file(artifact)


def _labels_from_evidence(
    evidence: AttackEvidence, test: EventLog, selection: WindowSelection
) -> tuple[InvestigationReport, DetectionLabels]:
    iocs = {kind: () for kind in IOC_KINDS}
    iocs["processes"] = evidence.command_lines
    report = InvestigationReport(
        narrative="Etapa de investigación desactivada: las etiquetas provienen de la evidencia.",
        steps=(),
        iocs=iocs,
    )
    return report, locate(report, test, selection)


def _investigate(
    run: _Runner,
    test: EventLog,
    selection: WindowSelection,
    evidence: AttackEvidence,
    neighborhood: EvidenceNeighborhood,
    profile: SampledProfile,
    upstream: list[str],
) -> tuple[InvestigationReport, DetectionLabels]:
    cfg = run.config
    artifact = run.out / "report.json"
    with run.stage("investigate", artifact):
        key = _digest(
            upstream, cfg.to_dict()["provider"], cfg.env_description, cfg.components.investigation
        )
        cached = _cached_payload(artifact, key)
        labels_cached = _cached_payload(run.out / "labels.json", key)
        if cached is not None and labels_cached is not None:
            run.mark("investigate", True)
            return InvestigationReport.from_dict(cached), DetectionLabels.from_dict(labels_cached)

        if not selection.detected:
            logger.info("Sin ventanas de ataque: se emite un informe vacío")
            report, labels = no_attack_report(), DetectionLabels((), {}, ())
        elif not cfg.components.investigation:
            report, labels = _labels_from_evidence(evidence, test, selection)
        else:
            provider = make_provider(cfg.provider)
            block = match_profile(profile, neighborhood)
            prompt = build_prompt(
                neighborhood, block, evidence, cfg.env_description, cfg.provider.token_budget
            )
            (run.out / "prompt.txt").write_text(prompt, encoding="utf-8")
            report = run_investigation(prompt, provider)
            labels = locate(report, test, selection)

        run.write("investigate", "report.json", report.to_dict(), key)
        run.write("investigate", "labels.json", labels.to_dict(), key)
        (run.out / "report.md").write_text(render_markdown(report, labels), encoding="utf-8")
        run.mark("investigate", False)
    return report, labels


def _evaluate(
    run: _Runner, test: EventLog, report: InvestigationReport, labels: DetectionLabels
) -> dict[str, Any] | None:
    cfg = run.config
    if cfg.ground_truth is None:
        return None
    artifact = run.out / "metrics.json"
    with run.stage("evaluate", artifact):
        truth = load_ground_truth(cfg.ground_truth)
        metrics = evaluate_detection(labels, truth, test, report)
        payload = {level: m.to_dict() for level, m in metrics.items()}
        key = _digest(digest_file(cfg.ground_truth), report.to_dict(), labels.to_dict())
        run.mark("evaluate", _cached_payload(artifact, key) == payload)
        run.write("evaluate", "metrics.json", payload, key)
    return payload


# ======================================================
# Función: run_pipeline
# ======================================================
def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """
    Ejecuta todas las etapas en orden y devuelve informe, etiquetas y métricas.

    Una selección vacía no es un error: el informe indica que no hay ventanas de ataque.
    Cualquier error de etapa se propaga como `StageError` con la etapa y el artefacto.
    """
    config.validate()
    run = _Runner(config)
    logger.info(f"🚀 Pipeline SHIELD → {run.out}")

    train, test, train_digest, test_digest = _ingest(run)
    model, model_digest = None, ""
    if config.components.mae:
        model, model_digest = _mae(run, train, train_digest)
    selection, selection_digest = _detect(
        run, model, model_digest, train, train_digest, test, test_digest
    )
    evidence, neighborhood, evidence_digest = _evidence(run, test, selection, selection_digest)
    profile, profile_digest = _profile(run, train, train_digest)
    report, labels = _investigate(
        run,
        test,
        selection,
        evidence,
        neighborhood,
        profile,
        [test_digest, selection_digest, evidence_digest, profile_digest],
    )
    metrics = _evaluate(run, test, report, labels)

    (run.out / "timings.json").write_text(
        json.dumps({"status": run.status, "seconds": run.timings}, indent=2) + "\n",
        encoding="utf-8",
    )
    logger.success(f"🏁 Pipeline completado: {json.dumps(run.status)}")
    return PipelineResult(report, labels, metrics, run.status, run.timings)

