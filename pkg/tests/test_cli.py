import json

import pytest

from sendguard.cli import main
from sendguard.email_model import Address, to_rfc822, with_sender


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, small_org):
    root = tmp_path_factory.mktemp("cli")
    manifest = small_org.write(root / "corpus", "jsonl")
    cfg = {"manifest": str(manifest), "context": str(root / "context.json"),
           "profiles_dir": str(root / "profiles"), "state_dir": str(root / "state"), "seed": 0}
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_build_context_on_empty_manifest(tmp_path, capsys):
    (tmp_path / "m.json").write_text(json.dumps({"entries": []}))
    code, out, _ = run(capsys, "build-context", "--manifest", str(tmp_path / "m.json"),
                       "--context", str(tmp_path / "ctx.json"))
    assert code == 0
    assert out.strip() == "url_domains=0 contacted_addresses=0 contacted_domains=0"


def test_missing_manifest_exits_2(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    code, _, err = run(capsys, "build-context", "--manifest", str(missing), "--context", str(tmp_path / "c.json"))
    assert code == 2 and str(missing) in err


def test_missing_config_file_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "build-context", "--config", str(tmp_path / "nope.json"))
    assert code == 2 and "nope.json" in err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"colour": "red"}))
    assert run(capsys, "build-context", "--config", str(tmp_path / "c.json"))[0] == 2


@pytest.fixture(scope="module")
def trained(workspace):
    cfg = str(workspace / "config.json")
    assert main(["build-context", "--config", cfg]) == 0
    assert main(["train", "--all", "--config", cfg]) == 0
    return cfg


def _eml(tmp_path, email, name):
    path = tmp_path / name
    path.write_bytes(to_rfc822(email))
    return str(path)


def test_check_exit_codes(tmp_path, capsys, trained, small_org):
    user = sorted(small_org.users)[0]
    history = sorted(small_org.users[user], key=lambda e: e.sent_at)
    code, out, _ = run(capsys, "check", _eml(tmp_path, history[0], "past.eml"), "--config", trained)
    assert code == 3 and "replay" in json.loads(out)["reasons"]
    victim = history[0].sender
    codes = [run(capsys, "check", _eml(tmp_path, with_sender(a, victim), f"a{i}.eml"), "--config", trained)[0]
             for i, a in enumerate(small_org.attacks[:10])]
    assert set(codes) == {0, 3}
    stranger = with_sender(small_org.attacks[0], Address("nobody", "nowhere.example"))
    code, out, _ = run(capsys, "check", _eml(tmp_path, stranger, "s.eml"), "--config", trained)
    assert code == 3 and json.loads(out)["reasons"] == ["untrained"]
    code, _, err = run(capsys, "check", str(tmp_path / "gone.eml"), "--config", trained)
    assert code == 2 and "gone.eml" in err


def test_verify_discards_with_always_fail(tmp_path, capsys, trained, workspace):
    code, out, _ = run(capsys, "verify", "--config", trained)
    assert code == 0
    lines = [json.loads(ln) for ln in out.splitlines()]
    assert lines and all(r["action"] == "discarded" for r in lines)
    alerts = (workspace / "state" / "alerts.jsonl").read_text().splitlines()
    assert len(alerts) >= len(lines)
    assert run(capsys, "verify", "--config", trained)[1] == ""


def test_evaluate_requires_seed(workspace, capsys):
    cfg = json.loads((workspace / "config.json").read_text())
    cfg.pop("seed")
    path = workspace / "noseed.json"
    path.write_text(json.dumps(cfg))
    code, _, err = run(capsys, "evaluate", "kfold", "--config", str(path))
    assert code == 2 and "seed" in err


def test_evaluate_evade_json(capsys, trained):
    code, out, _ = run(capsys, "evaluate", "evade", "--strategies", "T,TC,M20", "--history", "100",
                       "--max-users", "3", "--config", trained)
    assert code == 0
    rows = json.loads(out)["evasion"]
    assert [r["strategy"] for r in rows] == ["T", "TC", "M20"]
    for r in rows:
        assert set(r) == {"strategy", "failure", "success", "no_effect", "avg_change", "per_user"}
        assert r["failure"] + r["success"] + r["no_effect"] == 3
    code, _, err = run(capsys, "evaluate", "evade", "--strategies", "Q", "--config", trained)
    assert code == 2 and "Q" in err


def test_report_is_reproducible(tmp_path, capsys, trained):
    dirs = []
    for name in ("a", "b"):
        out = tmp_path / name
        args = ["report", str(out), "--max-users", "3", "--history", "50,100", "--inject-history", "100",
                "--evade-history", "100", "--k", "3", "--strategies", "T,M10", "--config", trained]
        assert run(capsys, *args)[0] == 0
        dirs.append(out)
    files = sorted(p.name for p in dirs[0].iterdir())
    assert "summary.json" in files and "kfold_fp_plot.csv" in files
    for name in files:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_config_from_environment(tmp_path, capsys, monkeypatch):
    (tmp_path / "m.json").write_text(json.dumps({"entries": []}))
    (tmp_path / "cfg.json").write_text(json.dumps({"manifest": str(tmp_path / "m.json"),
                                                   "context": str(tmp_path / "from_env.json")}))
    monkeypatch.setenv("SENDGUARD_CONFIG", str(tmp_path / "cfg.json"))
    assert run(capsys, "build-context")[0] == 0
    assert (tmp_path / "from_env.json").exists()
    assert run(capsys, "build-context", "--context", str(tmp_path / "flag.json"))[0] == 0
    assert (tmp_path / "flag.json").exists()


def test_retrain_force(capsys, trained, workspace, small_org):
    user = sorted(small_org.users)[0]
    code, out, _ = run(capsys, "retrain", user, "--config", trained)
    assert code == 0
    profile = json.loads((workspace / "profiles" / f"{user}.json").read_text())
    before = profile["positives"]["shape"][0]
    if profile["pending"]["shape"][0]:
        code, out, _ = run(capsys, "retrain", user, "--force", "--config", trained)
        assert code == 0 and json.loads(out)["positives"] > before
