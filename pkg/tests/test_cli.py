import subprocess
import sys

import yaml

from lsts.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, main

from conftest import DOORKEY_SPEC


def _config(tmp_path, **kw):
    raw = {"env": "doorkey", "spec": "doorkey.spec", "algo": "lsts", "seeds": [0], "budget": 200_000,
           "eval_episodes": 5, "out": str(tmp_path / "res")}
    raw.update(kw)
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_run_and_compare(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["run", "--config", str(cfg), "--algo", "lsts,dirl_c", "--seeds", "0,1",
                 "--require-convergence"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "lsts" in out and "dirl_c" in out and "2/2" in out
    assert main(["compare", "--in", str(tmp_path / "res"), "--algos", "lsts,dirl_c"]) == EXIT_OK
    assert "Welch t =" in capsys.readouterr().out


def test_not_converged_exit(tmp_path):
    cfg = _config(tmp_path)
    assert main(["run", "--config", str(cfg), "--budget", "2000", "--require-convergence"]) == EXIT_NOT_CONVERGED
    assert main(["run", "--config", str(cfg), "--budget", "2000"]) == EXIT_OK


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(_config(tmp_path, budget=-5))]) == EXIT_CONFIG
    assert "budget" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "none.yaml")]) == EXIT_CONFIG
    assert main(["compare", "--in", str(tmp_path), "--algos", "a,b"]) == EXIT_CONFIG
    assert main(["compare", "--in", str(tmp_path), "--algos", "a"]) == EXIT_CONFIG
    bad = tmp_path / "bad.spec"
    bad.write_text("achieve ; g")
    assert main(["graph", "--spec", str(bad)]) == EXIT_CONFIG


def test_graph_command(tmp_path, capsys):
    spec = tmp_path / "dk.spec"
    spec.write_text(DOORKEY_SPEC)
    dot = tmp_path / "g.dot"
    assert main(["graph", "--spec", str(spec), "--dot", str(dot)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("EDGE") == 5
    assert "# 5 nodes, 5 edges, 2 paths" in out
    assert dot.read_text().startswith("digraph")


def test_console_entry_point(tmp_path):
    spec = tmp_path / "g.spec"
    spec.write_text("achieve g")
    r = subprocess.run([sys.executable, "-m", "lsts.cli", "graph", "--spec", str(spec)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "# 2 nodes, 1 edges, 1 paths" in r.stdout
    r = subprocess.run([sys.executable, "-m", "lsts.cli"], capture_output=True, text=True)
    assert r.returncode == 2  # argparse usage error
