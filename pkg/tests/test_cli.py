import json
import os
import subprocess
import sys
from collections import Counter

import pytest

from cloudlens.cli import EXIT_EXHAUSTED, EXIT_INPUT, EXIT_OK, EXIT_REJECTED, main
from cloudlens.report import strip_timing, validate_report
from cloudlens.scenarios import SCENARIOS, fixture_text, scenario

LISTINGS = ["ransomware_listing", "impact_listing", "exfiltration_listing", "admin_chain_listing"]


@pytest.fixture
def fixtures(tmp_path):
    out = {}
    for name in SCENARIOS:
        path = tmp_path / f"{name}.json"
        path.write_text(fixture_text(name))
        out[name] = path
    return out


def run_analyze(path, out, *extra):
    code = main(["analyze", str(path), "--out", str(out), *extra])
    return code, json.loads(out.read_text())


def test_analyze_exfiltration(fixtures, tmp_path, capsys):
    code, report = run_analyze(fixtures["exfiltration_listing"], tmp_path / "r.json")
    assert code == EXIT_OK
    validate_report(report)
    entry = report["per_attack"]["SensitiveDataExfiltration"]
    assert entry["compromisable_users"] == ["user_0"]
    assert entry["plans"][0]["cost"] == 1
    assert "SensitiveDataExfiltration" in capsys.readouterr().out


def test_admins_are_excluded(tmp_path):
    snap = {
        "schema": "cloudlens-snapshot/1",
        "identities": [{"id": "root1", "kind": "User"}, {"id": "root2", "kind": "User"}],
        "datastores": [{"id": "ds", "has_sensitive_data": True}],
        "policies": [{"id": "all", "statements": [
            {"effect": "Allow", "actions": ["*"], "resources": ["*"]}]}],
        "attachments": [{"identity": "root1", "policy": "all"},
                        {"identity": "root2", "policy": "all"}],
    }
    path = tmp_path / "admins.json"
    path.write_text(json.dumps(snap))
    code, report = run_analyze(path, tmp_path / "r.json")
    assert code == EXIT_OK
    assert report["admins_excluded"] == ["root1", "root2"]
    assert all(not v["compromisable_users"] for v in report["per_attack"].values())


def test_histogram_over_listings(fixtures, tmp_path):
    total = Counter()
    for name in LISTINGS:
        goal = scenario(name)[1].goal.value
        _, report = run_analyze(fixtures[name], tmp_path / f"{name}.r.json", "--goal", goal)
        total.update({int(k): v for k, v in report["path_length_histogram"].items()})
        assert sum(report["path_length_histogram"].values()) == sum(
            len(v["plans"]) for v in report["per_attack"].values())
    assert total == {1: 1, 2: 2, 5: 1}


def test_exhaustion_exit_code(fixtures, tmp_path):
    code, report = run_analyze(fixtures["admin_chain_listing"], tmp_path / "r.json",
                               "--goal", "privilege_escalation", "--max-states", "2")
    assert code == EXIT_EXHAUSTED
    assert report["partial"] and report["exhausted"]


def test_input_errors_name_the_file(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    assert main(["analyze", str(missing)]) == EXIT_INPUT
    assert "missing.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "cloudlens-snapshot/1", "attachments": [{"identity": "x", "policy": "y"}]}')
    assert main(["analyze", str(bad)]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "bad.json" in err and "'x'" in err


def test_unknown_goal_is_input_error(fixtures):
    assert main(["analyze", str(fixtures["impact_listing"]), "--goal", "phishing"]) == EXIT_INPUT


def test_emit_pddl(fixtures, tmp_path, capsys):
    out = tmp_path / "pddl"
    assert main(["emit-pddl", str(fixtures["impact_listing"]), "--goal", "impact",
                 "--out", str(out)]) == EXIT_OK
    files = sorted(p.name for p in out.iterdir())
    assert files == ["impact_listing.domain.pddl", "impact_listing.problem.pddl"]
    assert "(ds_tpl user_181 " in (out / "impact_listing.problem.pddl").read_text()
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["emit-pddl", str(fixtures["impact_listing"]), "--goal", "impact",
                 "--out", str(out)]) == EXIT_OK
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}
    assert "impact_listing.domain.pddl" in capsys.readouterr().out


def test_emit_pddl_partitions(tmp_path):
    snap = tmp_path / "two.json"
    assert main(["gen", "random", "--seed", "4", "--accounts", "2", "--out", str(snap)]) == EXIT_OK
    out = tmp_path / "pddl"
    assert main(["emit-pddl", str(snap), "--goal", "impact", "--partition-max", "100",
                 "--out", str(out)]) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["two-part0.problem.pddl", "two-part1.problem.pddl", "two.domain.pddl"]


def test_emit_pddl_unwritable(fixtures, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["emit-pddl", str(fixtures["impact_listing"]), "--goal", "impact",
                 "--out", str(blocker / "sub")]) == EXIT_INPUT


def test_validate_listing_plan(fixtures, data_dir, capsys):
    assert main(["validate", str(fixtures["admin_chain_listing"]),
                 str(data_dir / "admin_chain.plan"), "--goal", "privilege_escalation"]) == EXIT_OK
    assert "accepted" in capsys.readouterr().out


def test_validate_truncated_and_shuffled(fixtures, tmp_path, capsys):
    lines = [
        "(selectCompromisedUser user_181)",
        "(activate_ds_3tpl user_181 deleteBucket data_store_71)",
        "(deleteBucket user_181 data_store_71)",
    ]
    plan = tmp_path / "p.plan"
    plan.write_text("\n".join(lines[:2]) + "\n")
    args = ["validate", str(fixtures["impact_listing"]), str(plan), "--goal", "impact"]
    assert main(args) == EXIT_REJECTED
    assert "goal not reached" in capsys.readouterr().err
    plan.write_text("\n".join([lines[0], lines[2], lines[1]]) + "\n")
    assert main(args) == EXIT_REJECTED
    assert "step 2 (deleteBucket user_181 data_store_71)" in capsys.readouterr().err


def test_validate_parse_error(fixtures, tmp_path, capsys):
    plan = tmp_path / "p.plan"
    plan.write_text("(selectCompromisedUser user_181)\n(teleport x)\n")
    assert main(["validate", str(fixtures["impact_listing"]), str(plan),
                 "--goal", "impact"]) == EXIT_INPUT
    assert "line 2" in capsys.readouterr().err


def test_gen_scenario_and_random(tmp_path, capsys):
    assert main(["gen", "scenario", "impact_listing"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["schema"] == "cloudlens-snapshot/1"
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["gen", "random", "--seed", "9", "--users", "4", "--out", str(a)])
    main(["gen", "random", "--seed", "9", "--users", "4", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    assert main(["gen", "scenario", "nope"]) == EXIT_INPUT


def test_reports_deterministic_across_jobs(tmp_path):
    snap = tmp_path / "s.json"
    main(["gen", "random", "--seed", "12", "--users", "4", "--grant-density", "0.3",
          "--out", str(snap)])
    reports = []
    for i, jobs in enumerate(["1", "1", "8"]):
        _, report = run_analyze(snap, tmp_path / f"r{i}.json", "--jobs", jobs,
                                "--max-states", "5000")
        reports.append(strip_timing(report))
    assert reports[0] == reports[1] == reports[2]


def test_module_entry_point_and_log_env(fixtures):
    env = {**os.environ, "CLOUDLENS_LOG": "debug"}
    proc = subprocess.run(
        [sys.executable, "-m", "cloudlens", "analyze", str(fixtures["impact_listing"]),
         "--goal", "impact"],
        capture_output=True, text=True, env=env, check=False,
    )
    assert proc.returncode == 0
    assert "Impact" in proc.stdout
    assert "DEBUG" in proc.stderr
