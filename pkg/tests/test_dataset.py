import json

from shield.config import load_config
from shield.dataset import ATTACK_ENTITIES, DROPPER_COMMAND, generate_scenario, load_artifacts
from shield.etl_modules.load_data import load_event_log, read_payload, write_artifact
from shield.evaluate import load_ground_truth
from shield.events import entity_names


def test_ground_truth_points_at_the_attack_events(tmp_path):
    paths = generate_scenario(tmp_path / "sc", train_hours=2, test_hours=12)
    test = load_event_log(paths["test_log"], "testing")
    truth = load_ground_truth(paths["ground_truth"])
    assert len(truth.attack_event_indices) == 20
    attack = [test[i] for i in sorted(truth.attack_event_indices)]
    assert attack[0].command_line == DROPPER_COMMAND
    assert {e.subject_id for e in attack} == {"proc-dropper", "proc-implant"}
    names = entity_names(test.events)
    involved = {names[e.subject_id] for e in attack} | {names[e.object_id] for e in attack}
    assert set(ATTACK_ENTITIES) <= involved
    assert test.is_sorted()
    assert [s.tactic for s in truth.tactic_steps][0] == "Execution"


def test_scenario_is_deterministic_per_seed(tmp_path):
    a = generate_scenario(tmp_path / "a", seed=3, train_hours=1, test_hours=1)
    b = generate_scenario(tmp_path / "b", seed=3, train_hours=1, test_hours=1)
    assert a["test_log"].read_bytes() == b["test_log"].read_bytes()
    c = generate_scenario(tmp_path / "c", seed=4, train_hours=1, test_hours=1)
    assert a["test_log"].read_bytes() != c["test_log"].read_bytes()


def test_generated_config_loads_with_local_fixtures(tmp_path):
    paths = generate_scenario(tmp_path / "sc", train_hours=1, test_hours=1)
    config = load_config(paths["config"])
    assert config.test_log == paths["test_log"].resolve()
    assert config.provider.spec == f"mock:{paths['fixtures'].resolve()}"
    rules = json.loads((paths["fixtures"] / "rules.json").read_text("utf-8"))
    assert [r["response_file"] for r in rules] == ["evidence.txt", "investigation.txt"]


def test_load_artifacts_reads_payloads(tmp_path):
    write_artifact(tmp_path / "metrics.json", "evaluate", {"entity": {"tp": 4}})
    write_artifact(tmp_path / "labels.json", "investigate", {"attack_entities": []})
    artifacts = load_artifacts(tmp_path)
    assert artifacts["metrics"] == read_payload(tmp_path / "metrics.json")
    assert set(artifacts) == {"metrics", "labels"}
