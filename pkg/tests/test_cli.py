import json

import pytest

from agentic_nn.cli import main
from agentic_nn.config import build_session, parse_config
from agentic_nn.errors import ConfigInvalid, PathExists
from agentic_nn.graph import validate_block
from agentic_nn.project import STARTER_FINAL_OUTPUT, init_project
from agentic_nn.serialize import load_network


@pytest.fixture
def starter(tmp_path):
    root = tmp_path / "proj"
    init_project(root)
    return root


@pytest.fixture
def arith(tmp_path):
    root = tmp_path / "arith"
    init_project(root, "arithmetic")
    return root


def test_init_writes_valid_starter(starter):
    for rel in ("config.json", "networks/starter.network.json", "scripts/starter.rules.json",
                "data/train.jsonl", "data/validation.jsonl", "README.md"):
        assert (starter / rel).exists(), rel
    net = load_network(starter / "networks/starter.network.json")
    assert net.pool_sizes == [1, 1]
    for layer in net.layers:
        assert len(layer.pool[0].nodes) == 1
        assert validate_block(layer.pool[0]).passed


def test_init_refuses_existing_project(starter):
    with pytest.raises(PathExists):
        init_project(starter)
    assert main(["init", str(starter)]) == 2


def test_run_gives_documented_output(starter, capsys, tmp_path):
    out = tmp_path / "run"
    code = main(["run", "--config", str(starter / "config.json"), "--task", "What is six times seven?", "--out", str(out)])
    assert code == 0
    assert f"final output: {STARTER_FINAL_OUTPUT}" in capsys.readouterr().out
    assert f"`{STARTER_FINAL_OUTPUT}`" in (starter / "README.md").read_text()
    summary = json.loads((out / "run.json").read_text())
    assert summary["final_output"] == STARTER_FINAL_OUTPUT
    assert (out / "task.trajectory.json").exists()


def test_run_with_network_and_script_only(starter, tmp_path, capsys):
    code = main(["run", "--network", str(starter / "networks/starter.network.json"),
                 "--script", str(starter / "scripts/starter.rules.json"), "--task", "hi",
                 "--ground-truth", "42", "--out", str(tmp_path / "r")])
    assert code == 0
    assert "judged: pass" in capsys.readouterr().out


def test_run_task_failure_exit_code(starter, tmp_path):
    rules = tmp_path / "empty.json"
    rules.write_text("[]")
    code = main(["run", "--config", str(starter / "config.json"), "--script", str(rules), "--task", "x",
                 "--out", str(tmp_path / "r")])
    assert code == 1
    assert "error" in json.loads((tmp_path / "r" / "run.json").read_text())


def test_train_backward_off_prints_constant_pools(arith, capsys, tmp_path):
    code = main(["train", "--config", str(arith / "config.json"), "--epochs", "3", "--toggle-off", "backward",
                 "--out", str(tmp_path / "r")])
    assert code == 0
    rows = [line.split() for line in capsys.readouterr().out.splitlines() if line.strip()[:1].isdigit()]
    assert [r[0] for r in rows] == ["1", "2", "3"]
    assert {" ".join(r[3:5]) for r in rows} == {"[1, 1]"}
    history = [json.loads(x) for x in (tmp_path / "r" / "history.jsonl").read_text().splitlines()]
    assert {tuple(h["pool_sizes"]) for h in history} == {(1, 1)}


def test_inspect_lists_two_lineage_entries(arith, capsys, tmp_path):
    run = tmp_path / "r"
    assert main(["train", "--config", str(arith / "config.json"), "--epochs", "1", "--out", str(run)]) == 0
    capsys.readouterr()
    assert main(["inspect", str(run), "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert len(info["lineage"]) == 2
    assert [e["name"] for e in info["lineage"]] == ["SolveBlock2", "SolveBlock3"]
    assert all(e["parent"] == 1 for e in info["lineage"])
    assert main(["inspect", str(run)]) == 0
    text = capsys.readouterr().out
    assert "block lineage (2 accepted)" in text


def test_eval_twice_is_identical(arith, tmp_path):
    args = ["eval", "--config", str(arith / "config.json")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "eval.json").read_text())
    b = json.loads((tmp_path / "b" / "eval.json").read_text())
    assert a["metric"] == b["metric"]
    assert a == b


def test_eval_on_checkpoint(arith, tmp_path):
    run = tmp_path / "r"
    main(["train", "--config", str(arith / "config.json"), "--epochs", "1", "--out", str(run)])
    metrics = []
    for name in ("e1", "e2"):
        main(["eval", "--config", str(arith / "config.json"), "--network", str(run / "epoch-1.network.json"),
              "--out", str(tmp_path / name)])
        metrics.append(json.loads((tmp_path / name / "eval.json").read_text())["metric"])
    assert metrics[0] == metrics[1]
    assert metrics[0] == json.loads((run / "history.jsonl").read_text().splitlines()[0])["validation_metric"]


def test_default_run_dirs_are_fresh(arith):
    assert main(["eval", "--config", str(arith / "config.json")]) == 0
    assert main(["eval", "--config", str(arith / "config.json")]) == 0
    assert sorted(p.name for p in (arith / "runs").iterdir()) == ["eval-1", "eval-2"]


def test_out_dir_must_be_empty(arith, tmp_path):
    out = tmp_path / "used"
    out.mkdir()
    (out / "x").write_text("")
    assert main(["eval", "--config", str(arith / "config.json"), "--out", str(out)]) == 2


# -- configuration errors -----------------------------------------------------------


def test_bad_field_gives_field_level_diagnostic(arith, tmp_path, capsys):
    cfg = json.loads((arith / "config.json").read_text())
    cfg["optimizer"]["beta"] = 3
    cfg["bogus"] = 1
    path = arith / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["eval", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "optimizer.beta" in err and "bogus" in err


def test_missing_config_file_is_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2


def test_invalid_network_is_exit_2(arith, tmp_path, capsys):
    net = json.loads((arith / "networks/arithmetic.network.json").read_text())
    net["layers"][0]["pool"][0]["entry_node"] = "ghost"
    bad = tmp_path / "bad.network.json"
    bad.write_text(json.dumps(net))
    assert main(["eval", "--config", str(arith / "config.json"), "--network", str(bad)]) == 2
    assert "Format" in capsys.readouterr().err


def test_live_backend_without_key_is_config_error(arith, monkeypatch):
    monkeypatch.delenv("ANN_API_KEY", raising=False)
    assert main(["eval", "--config", str(arith / "config.json"), "--backend", "live"]) == 2


def test_build_session_reads_key_from_env_only():
    cfg = parse_config({"network": "n.json", "backend": {"kind": "live", "api_key_env": "MY_KEY"}})
    with pytest.raises(ConfigInvalid):
        build_session(cfg, env={})
    session = build_session(cfg, env={"MY_KEY": "sk-x"})
    assert session.gateway.kind == "live"
    with pytest.raises(ConfigInvalid):
        parse_config({"network": "n.json", "backend": {"api_key": "inline"}})


def test_unknown_builtin_script(arith):
    assert main(["eval", "--config", str(arith / "config.json"), "--script", "builtin:nope"]) == 2
