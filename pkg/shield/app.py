# ==================================================
# CLI de SHIELD
# ==================================================
# Uso: shield run --config pipeline.json [--override clave=valor ...]
#      shield <etapa> ... para ejecutar una etapa aislada.

from contextlib import contextmanager
import json
from pathlib import Path
from typing import Optional

from loguru import logger
import typer

from shield.config import (
    DEFAULT_SEED,
    MAX_WINDOWS,
    PROFILE_RATIO,
    T_NBR,
    TOKEN_BUDGET,
    WINDOW_MINUTES,
    TOP_K_PCT,
    HyperParams,
    ProviderConfig,
    load_config,
)
from shield.dataset import generate_scenario
from shield.detect import (
    WindowSelection,
    derive_t_ano,
    fit_boundary,
    score_events,
    select_windows,
    window_scores,
)
from shield.errors import ConfigError, ShieldError
from shield.etl_modules.extractor_data import parse_sources
from shield.etl_modules.load_data import (
    load_event_log,
    read_payload,
    save_event_log,
    write_artifact,
)
from shield.etl_modules.transform_data import filter_fields
from shield.evaluate import (
    confusion,
    evaluate_detection,
    inject_mimicry,
    load_ground_truth,
    metrics_from_counts,
)
from shield.evidence import (
    AttackEvidence,
    EvidenceNeighborhood,
    gather_evidence,
)
from shield.investigate import (
    DetectionLabels,
    InvestigationReport,
    build_prompt,
    locate,
    render_markdown,
    run_investigation,
)
from shield.llm import make_provider
from shield.mae.model import load_model, save_model
from shield.mae.training import embed_events, train
from shield.pipeline import run_pipeline
from shield.plots import save_neighborhood_html, save_window_figure
from shield.profile import build_profile, load_profile, match_profile, sample_profile, save_profile

app = typer.Typer(help="SHIELD: detección e investigación de ataques en logs de auditoría.")


@contextmanager
def _cli_errors():
    """Convierte los errores del dominio en códigos de salida (2 config, 3 etapa, 4 LLM)."""
    try:
        yield
    except ShieldError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        raise typer.Exit(code=e.exit_code)


def _population(value: str) -> int:
    """'auto' se resuelve antes; aquí solo se aceptan enteros positivos."""
    try:
        population = int(value)
    except ValueError:
        raise ConfigError(f"--population debe ser 'auto' o un entero, no {value!r}")
    if population < 1:
        raise ConfigError(f"--population debe ser positivo, no {population}")
    return population


@app.command()
def run(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="pipeline.json"),
    override: list[str] = typer.Option([], "--override", "-o", help="clave.punteada=valor"),
):
    """Ejecuta el pipeline completo."""
    with _cli_errors():
        cfg = load_config(config, override)
        result = run_pipeline(cfg)
        if not result.labels.attack_entities:
            logger.info("🟢 No se detectó ningún ataque")
        if result.metrics:
            typer.echo(json.dumps(result.metrics, indent=2))


@app.command()
def ingest(
    inputs: list[Path] = typer.Argument(..., help="Uno o varios archivos de log"),
    out: Path = typer.Option(..., "--out", help="Log canónico (.jsonl)"),
    format: str = typer.Option("jsonl-generic", "--format"),
    label: str = typer.Option("testing", "--label"),
):
    """Lee y normaliza logs crudos al formato canónico."""
    with _cli_errors():
        log = filter_fields(parse_sources(list(inputs), format, label))
        save_event_log(log, out)


@app.command("train-mae")
def train_mae(
    train_log: Path = typer.Option(..., "--events", help="Log canónico benigno"),
    out: Path = typer.Option(..., "--out", help="Checkpoint del modelo"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed"),
):
    """Entrena el MAE sobre un log canónico benigno."""
    with _cli_errors():
        model = train(load_event_log(train_log, "training"), epochs=epochs, seed=seed)
        save_model(model, out)


@app.command()
def detect(
    test_log: Path = typer.Option(..., "--events", help="Log canónico de prueba"),
    model_path: Path = typer.Option(..., "--mae", help="Checkpoint del MAE"),
    train_log: Path = typer.Option(..., "--train"),
    out: Path = typer.Option(Path("selection.json"), "--out"),
    window_minutes: float = typer.Option(WINDOW_MINUTES, "--window-min"),
    k_pct: float = typer.Option(TOP_K_PCT, "--topk"),
    c: int = typer.Option(MAX_WINDOWS, "--max-windows"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed"),
):
    """Puntúa el log de prueba y selecciona las ventanas de ataque."""
    with _cli_errors():
        hp = HyperParams(window_minutes=window_minutes, k_pct=k_pct, c=c, seed=seed)
        hp.validate()
        model = load_model(model_path)
        d_tr = load_event_log(train_log, "training")
        d_te = load_event_log(test_log, "testing")
        state = fit_boundary(embed_events(model, d_tr.events, hp.m, hp.seed))
        state = state.with_t_ano(
            derive_t_ano(state, model, d_tr, hp.w_l, hp.stride, hp.k_pct, hp.m, hp.seed)
        )
        windows = window_scores(
            score_events(state, model, d_te, hp.m, hp.seed), d_te, hp.w_l, hp.stride, hp.k_pct
        )
        selection = select_windows(windows, state.t_ano, hp.c)
        write_artifact(out, "detect", {"gamma": state.gamma, "selection": selection.to_dict()})


@app.command()
def evidence(
    selection_path: Path = typer.Option(..., "--selection"),
    test_log: Path = typer.Option(..., "--events", help="Log canónico de prueba"),
    out: Path = typer.Option(Path("evidence.json"), "--out"),
    provider: str = typer.Option("mock:fixtures", "--provider"),
    env: str = typer.Option("a Linux host", "--env"),
    t_nbr: int = typer.Option(T_NBR, "--tnbr"),
):
    """Identifica la evidencia de ataque y expande su vecindario."""
    with _cli_errors():
        d_te = load_event_log(test_log, "testing")
        selection = WindowSelection.from_dict(read_payload(selection_path)["selection"])
        indices = list(selection.truncated_events)
        e_tru = [d_te[i] for i in indices] if selection.detected else []
        llm = make_provider(ProviderConfig(spec=provider))
        found, neighborhood = gather_evidence(e_tru, indices, env, llm, t_nbr)
        write_artifact(
            out,
            "evidence",
            {"evidence": found.to_dict(), "neighborhood": neighborhood.to_dict()},
        )


@app.command("build-profile")
def build_profile_cmd(
    train_log: Path = typer.Option(..., "--events", help="Log canónico benigno"),
    out: Path = typer.Option(Path("profile.json"), "--out"),
    r: float = typer.Option(PROFILE_RATIO, "--ratio"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed"),
):
    """Construye y muestrea el perfil benigno (DDA)."""
    with _cli_errors():
        profile = sample_profile(build_profile(load_event_log(train_log, "training")), r, seed)
        save_profile(profile, out)


@app.command()
def investigate(
    neighborhood: Path = typer.Option(..., "--neighborhood"),
    profile: Path = typer.Option(..., "--profile"),
    evidence_path: Path = typer.Option(..., "--evidence"),
    out: Path = typer.Option(..., "--out"),
    provider: str = typer.Option("mock:fixtures", "--provider"),
    env: str = typer.Option("a Linux host", "--env"),
    token_budget: int = typer.Option(TOKEN_BUDGET, "--token-budget"),
):
    """Consulta al LLM con vecindario, perfil y evidencia, y guarda el informe."""
    with _cli_errors():
        raw_nbr = read_payload(neighborhood)
        raw_nbr = raw_nbr.get("neighborhood", raw_nbr)
        raw_ev = read_payload(evidence_path)
        raw_ev = raw_ev.get("evidence", raw_ev)
        nbr = EvidenceNeighborhood.from_dict(raw_nbr)
        block = match_profile(load_profile(profile), nbr)
        prompt = build_prompt(nbr, block, AttackEvidence.from_dict(raw_ev), env, token_budget)
        report = run_investigation(prompt, make_provider(ProviderConfig(spec=provider)))
        write_artifact(out, "investigate", report.to_dict())
        out.with_suffix(".md").write_text(render_markdown(report), encoding="utf-8")


@app.command("locate")
def locate_cmd(
    report: Path = typer.Option(..., "--report"),
    test_log: Path = typer.Option(..., "--events", help="Log canónico de prueba"),
    selection_path: Path = typer.Option(..., "--selection"),
    out: Path = typer.Option(Path("labels.json"), "--out"),
):
    """Localiza los IoC del informe en las ventanas de ataque."""
    with _cli_errors():
        selection = WindowSelection.from_dict(read_payload(selection_path)["selection"])
        parsed = InvestigationReport.from_dict(read_payload(report))
        labels = locate(parsed, load_event_log(test_log, "testing"), selection)
        write_artifact(out, "investigate", labels.to_dict())


@app.command()
def evaluate(
    labels: Path = typer.Option(..., "--labels"),
    truth: Path = typer.Option(..., "--truth"),
    test_log: Path = typer.Option(..., "--events", help="Log canónico de prueba"),
    report: Optional[Path] = typer.Option(None, "--report"),
    population: str = typer.Option("auto", "--population", help="'auto' o un entero"),
    out: Optional[Path] = typer.Option(None, "--out"),
):
    """Calcula las métricas frente a la verdad de terreno."""
    with _cli_errors():
        predicted = DetectionLabels.from_dict(read_payload(labels))
        gt = load_ground_truth(truth)
        d_te = load_event_log(test_log, "testing")
        parsed = InvestigationReport.from_dict(read_payload(report)) if report else None
        metrics = evaluate_detection(predicted, gt, d_te, parsed)
        if population != "auto":
            counts = confusion(
                predicted.attack_entity_names, gt.attack_entities, _population(population)
            )
            metrics["entity"] = metrics_from_counts(*counts)
        payload = {level: m.to_dict() for level, m in metrics.items()}
        if out is not None:
            write_artifact(out, "evaluate", payload)
        typer.echo(json.dumps(payload, indent=2))


@app.command("inject-mimicry")
def inject_mimicry_cmd(
    log_path: Path = typer.Option(..., "--log"),
    truth: Path = typer.Option(..., "--truth"),
    out: Path = typer.Option(..., "--out"),
    n: int = typer.Option(1000, "--n"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed"),
):
    """Añade n eventos de mimetismo alrededor de las entidades de ataque."""
    with _cli_errors():
        log = load_event_log(log_path, "testing")
        log = inject_mimicry(log, load_ground_truth(truth), n, seed)
        save_event_log(log, out)


@app.command()
def scenario(
    out: Path = typer.Option(..., "--out"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed"),
    hours: float = typer.Option(24.0, "--hours"),
):
    """Genera el escenario sintético (logs, verdad de terreno, fixtures y pipeline.json)."""
    with _cli_errors():
        generate_scenario(out, seed, train_hours=hours, test_hours=hours)


@app.command()
def plots(out_dir: Path = typer.Argument(..., help="Directorio de salida del pipeline")):
    """Genera las figuras (HTML) de una ejecución: puntuaciones y vecindario."""
    with _cli_errors():
        selection = read_payload(out_dir / "selection.json")["selection"]
        save_window_figure(selection, out_dir / "windows.html")
        raw = read_payload(out_dir / "evidence.json")
        nbr = EvidenceNeighborhood.from_dict(raw["neighborhood"])
        labels_path = out_dir / "labels.json"
        flagged = None
        if labels_path.exists():
            flagged = DetectionLabels.from_dict(read_payload(labels_path))
        save_neighborhood_html(nbr, out_dir / "neighborhood.html", flagged)


if __name__ == "__main__":
    app()
