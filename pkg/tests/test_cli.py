import json
import subprocess
import sys

import pytest

from graphpoison.cli import cached_spectrum, main
from graphpoison.datasets import sbm_graph
from graphpoison.graph import save_edge_list
from graphpoison.spectrum import generalized_eigs


@pytest.fixture
def files(tmp_path):
    ds = sbm_graph([12, 12], 0.45, 0.06, seed=4)
    save_edge_list(ds.graph, tmp_path / "g.edges")
    (tmp_path / "g.labels").write_text("".join(f"{i} {c}\n" for i, c in enumerate(ds.labels)))
    return tmp_path, str(tmp_path / "g.edges"), str(tmp_path / "g.labels")


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_attack_then_evaluate(files, capsys):
    tmp, data, labels = files
    out = str(tmp / "run")
    assert main(["attack", "--data", data, "--labels", labels, "--strategy", "dw3", "--flips", "-4",
                 "--candidates", "30", "--K", "4", "--out", out]) == 0
    assert last_json(capsys)["n_flips"] == 4
    plan = json.loads((tmp / "run" / "plan.json").read_text())
    assert plan["config"]["data"] == data
    assert main(["evaluate", "--plan", out + "/plan.json", "--task", "class", "--K", "6", "--negatives", "1",
                 "--eval-seeds", "2", "--out", str(tmp / "ev")]) == 0
    res = last_json(capsys)
    assert 0 <= res["clean"] <= 1 and 0 <= res["poisoned"] <= 1
    assert (tmp / "ev" / "record.json").exists()


def test_evaluate_link(files, capsys):
    tmp, data, _ = files
    main(["attack", "--data", data, "--strategy", "rnd", "--flips", "3", "--candidates", "20", "--out", str(tmp / "r")])
    capsys.readouterr()
    assert main(["evaluate", "--plan", str(tmp / "r" / "plan.json"), "--task", "link", "--K", "6",
                 "--negatives", "1"]) == 0
    assert last_json(capsys)["task"] == "link"


def test_target_class_spec(files, capsys):
    tmp, data, labels = files
    (tmp / "t.json").write_text(json.dumps({"mode": "class", "target": 3, "budget": 2}))
    assert main(["target", "--data", data, "--spec", str(tmp / "t.json"), "--labels", labels, "--K", "6",
                 "--negatives", "1", "--baseline", "--out", str(tmp / "t")]) == 0
    res = last_json(capsys)
    assert len(res["chosen"]) == 2 and "random_margin" in res
    assert (tmp / "t" / "target.json").exists()


def test_target_link(files, capsys):
    tmp, data, _ = files
    assert main(["target", "--data", data, "--mode", "link", "--budget", "3", "--K", "6", "--out", str(tmp / "l")]) == 0
    assert last_json(capsys)["budget"] == 3
    assert (tmp / "l" / "plan.json").exists()


def test_approx_check(files, capsys, tmp_path, monkeypatch):
    _, data, _ = files
    monkeypatch.setenv("GRAPHPOISON_CACHE_DIR", str(tmp_path / "cache"))
    assert main(["approx-check", "--data", data, "--samples", "10", "--out", str(tmp_path / "a")]) == 0
    assert last_json(capsys)["bound_holds"] is True
    assert (tmp_path / "a" / "bounds.csv").exists()
    assert len(list((tmp_path / "cache").iterdir())) == 1


def test_cache_reused(files, tmp_path, monkeypatch):
    from graphpoison.graph import load_edge_list
    g = load_edge_list(files[1])
    monkeypatch.setenv("GRAPHPOISON_CACHE_DIR", str(tmp_path / "c"))
    a = cached_spectrum(g)
    b = cached_spectrum(g)
    assert (a.lambdas == b.lambdas).all() and (a.lambdas == generalized_eigs(g).lambdas).all()


@pytest.mark.parametrize("argv,code", [
    (["attack", "--data", "missing.edges", "--flips", "-1"], 2),
    (["attack", "--data", "{data}", "--flips", "0"], 2),
    (["attack", "--data", "{data}", "--strategy", "eig", "--flips", "2"], 2),
    (["attack", "--data", "{data}", "--flips", "5", "--candidates", "1000000"], 3),
    (["target", "--data", "{data}"], 2),
])
def test_exit_codes(files, argv, code, capsys):
    tmp, data, _ = files
    argv = [a.replace("{data}", data) for a in argv] + ["--out", str(tmp / "x")]
    assert main(argv) == code
    assert "error:" in capsys.readouterr().err


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "graphpoison.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("attack", "evaluate", "target", "approx-check"):
        assert cmd in res.stdout
