import json

import pytest

from shield.config import load_config
from shield.dataset import ATTACK_ENTITIES, generate_scenario
from shield.evaluate import inject_mimicry, load_ground_truth
from shield.etl_modules.load_data import load_event_log
from shield.events import write_jsonl
from shield.pipeline import STAGES, run_pipeline

ARTIFACTS = (
    "events_train.jsonl",
    "events_test.jsonl",
    "ingest.json",
    "evidence.json",
    "profile.json",
    "prompt.txt",
    "report.json",
    "labels.json",
    "report.md",
    "metrics.json",
    "timings.json",
)


@pytest.fixture
def scenario(tmp_path):
    return generate_scenario(tmp_path / "scenario")


def _snapshot(out_dir):
    return {
        p.name: p.read_bytes()
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name != "timings.json"
    }


def test_run_without_mae_labels_exactly_the_attack(scenario):
    config = load_config(scenario["config"], ["components.mae=false"])
    result = run_pipeline(config)

    assert result.labels.attack_entity_names == set(ATTACK_ENTITIES)
    entity = result.metrics["entity"]
    assert (entity["tp"], entity["fp"], entity["fn"]) == (4, 0, 0)
    assert entity["precision"] == 1.0
    truth = load_ground_truth(scenario["ground_truth"])
    assert set(result.labels.attack_event_indices) == set(truth.attack_event_indices)

    for name in ARTIFACTS:
        assert (config.out_dir / name).exists(), name
    assert set(result.status) <= set(STAGES)
    assert "Your available evidence" in (config.out_dir / "prompt.txt").read_text("utf-8")
    timings = json.loads((config.out_dir / "timings.json").read_text("utf-8"))
    assert timings["status"] == result.status


def test_run_without_investigation_labels_from_evidence(scenario):
    config = load_config(
        scenario["config"], ["components.mae=false", "components.investigation=false"]
    )
    result = run_pipeline(config)
    assert result.report.steps == ()
    assert "/bin/sh" in result.labels.attack_entity_names
    assert not (config.out_dir / "prompt.txt").exists()


@pytest.mark.slow
def test_scenario_end_to_end_and_cached_rerun(scenario):
    config = load_config(scenario["config"])
    first = run_pipeline(config)
    entity = first.metrics["entity"]
    assert entity["precision"] == 1.0
    assert entity["recall"] >= 0.9
    assert set(first.status.values()) == {"run"}
    assert (config.out_dir / "mae.pt").exists()
    before = _snapshot(config.out_dir)

    second = run_pipeline(load_config(scenario["config"]))
    assert set(second.status.values()) == {"cached"}
    assert second.labels == first.labels
    assert _snapshot(config.out_dir) == before


@pytest.mark.slow
def test_benign_only_run_reports_no_attack(tmp_path, monkeypatch):
    paths = generate_scenario(tmp_path / "small", train_hours=4, test_hours=4)
    monkeypatch.setattr("shield.pipeline.derive_t_ano", lambda *args, **kwargs: 1e9)
    result = run_pipeline(load_config(paths["config"], ["mae.epochs=1"]))
    assert result.report.steps == ()
    assert result.labels.attack_entities == ()
    assert result.metrics["entity"]["tp"] == 0
    assert "No se detectaron ventanas" in result.report.narrative


@pytest.mark.slow
def test_mimicry_changes_detections_by_at_most_three_entities(scenario, tmp_path):
    config = load_config(scenario["config"])
    baseline = run_pipeline(config).metrics["entity"]

    truth = load_ground_truth(scenario["ground_truth"])
    test_log = load_event_log(scenario["test_log"], "testing")
    mimic_path = scenario["test_log"].parent / "test_mimicry.jsonl"
    write_jsonl(inject_mimicry(test_log, truth, n=1000, seed=7), mimic_path)

    mimic = run_pipeline(
        load_config(
            scenario["config"],
            ["test_log=test_mimicry.jsonl", f"out_dir={tmp_path / 'out_mimicry'}"],
        )
    ).metrics["entity"]
    detected = baseline["tp"] + baseline["fp"]
    assert abs((mimic["tp"] + mimic["fp"]) - detected) <= 3
