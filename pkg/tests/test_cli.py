import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mglab.cli import main
from mglab.experiment import ExperimentConfig, git_blob_sha1, load_config
from mglab.game import game_from_json, ne_gap, MarkovProductPolicy
from mglab.hard_instances import verify_pure_ne_set
from mglab.validation import ValidationError


def write(path, text):
    path.write_text(text)
    return str(path)


def gen(tmp_path, name, *args):
    out = tmp_path / name
    assert main(["gen", *args, "-o", str(out)]) == 0
    return out


def read_rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_gen_is_deterministic(tmp_path):
    a = gen(tmp_path, "a.json", "random", "--m", "2", "--S", "3", "--A", "2", "3", "--seed", "4")
    b = gen(tmp_path, "b.json", "random", "--m", "2", "--S", "3", "--A", "2", "3", "--seed", "4")
    assert a.read_bytes() == b.read_bytes()
    g = game_from_json(a.read_text())
    assert (g.m, g.S, g.A) == (2, 3, (2, 3))


def test_gen_hard_games(tmp_path):
    with pytest.warns(UserWarning):
        one = gen(tmp_path, "h.json", "hard-one-step", "--m", "3", "--k", "1", "--epsilon", "0.1")
    doc = json.loads(one.read_text())
    g = game_from_json(one.read_text())
    np.testing.assert_array_equal(verify_pure_ne_set(g.R[0, 0], g.A), doc["D"])
    with pytest.warns(UserWarning):
        mdp = gen(tmp_path, "m.json", "hard-mdp", "--m", "3", "--k", "1", "--epsilon", "0.1", "--H", "4")
    e = game_from_json(mdp.read_text())
    assert e.S == 3 and e.H == 4
    assert json.loads(mdp.read_text())["D"] == doc["D"]


@pytest.fixture
def game_file(tmp_path):
    return gen(tmp_path, "g.json", "random", "--m", "2", "--S", "2", "--H", "2", "--seed", "1")


def test_one_episode_run(tmp_path, game_file):
    cfg = write(tmp_path / "c.toml", f'algorithm = "cce"\ngame = "{game_file.name}"\nK = 1\nseeds = [0]\nout = "r"\n')
    assert main(["run", cfg]) == 0
    rows = read_rows(tmp_path / "r" / "seed-0" / "curves.csv")
    assert rows[0][:3] == ["episode", "confidence_gap_0", "confidence_gap_1"]
    assert len(rows) == 2
    assert float(rows[1][1]) == float(rows[1][2]) == 2.0


def test_runs_are_byte_identical(tmp_path, game_file):
    body = f'algorithm = "ce"\ngame = "{game_file.name}"\nK = 120\ncadence = 40\nseeds = [0, 5]\n'
    write(tmp_path / "a.toml", body + 'out = "a"\nworkers = 2\nsave_history = true\n')
    write(tmp_path / "b.toml", body + 'out = "b"\nsave_history = true\n')
    assert main(["run", str(tmp_path / "a.toml")]) == 0
    assert main(["run", str(tmp_path / "b.toml")]) == 0
    for name in ("curves.csv", "report.json", "seed-0/history.npz", "seed-5/curves.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_rows(tmp_path / "a" / "curves.csv")
    assert [r[1] for r in rows[1:]] == ["40", "80", "120"] * 2
    # 17 significant digits round-trip
    for r in rows[1:]:
        for x in r[2:]:
            assert float(format(float(x), ".17g")) == float(x)

    # re-running from the manifest reproduces the curves
    assert main(["run", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "curves.csv").read_bytes() == (tmp_path / "a" / "curves.csv").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["game_sha1"] == git_blob_sha1(game_file.read_bytes())


def test_manifest_hash_mismatch(tmp_path, game_file):
    write(tmp_path / "c.toml", f'algorithm = "cce"\ngame = "{game_file.name}"\nK = 2\nseeds = [0]\nout = "r"\n')
    assert main(["run", str(tmp_path / "c.toml")]) == 0
    game_path = tmp_path / "r" / "game.json"
    game_path.write_text(game_path.read_text().replace("0.", "0.0", 1))
    assert main(["run", str(tmp_path / "r" / "manifest.json")]) == 2


def test_generator_config(tmp_path):
    cfg = write(tmp_path / "c.toml", 'algorithm = "cce"\nK = 4\nseeds = [1]\nout = "r"\n'
                '[generator]\nkind = "random"\nm = 2\nS = 2\nH = 2\nA = 2\nseed = 3\n')
    assert main(["run", cfg]) == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["generated_from"]["seed"] == 3
    assert manifest["config"]["game"].endswith("game.json")


def test_nash_ca_report(tmp_path):
    mcg = gen(tmp_path, "mcg.json", "random", "--m", "2", "--S", "2", "--H", "2", "--seed", "2", "--cooperative")
    cfg = write(tmp_path / "n.toml", 'algorithm = "nash-ca"\ngame = "mcg.json"\nepsilon = 0.3\nseeds = [0]\nout = "n"\n')
    assert main(["run", cfg]) == 0
    rep = json.loads((tmp_path / "n" / "seed-0" / "report.json").read_text())
    g = game_from_json(mcg.read_text())
    pol = MarkovProductPolicy.from_actions(rep["actions"], g.A)
    assert rep["kind"] == "nash" and rep["method"] == "exact-dp"
    assert rep["max_gap"] == ne_gap(g, pol)


def test_ucbvi_run(tmp_path):
    gen(tmp_path, "mdp.json", "random", "--m", "1", "--S", "3", "--A", "3", "--seed", "0")
    cfg = write(tmp_path / "u.toml", 'algorithm = "ucbvi"\ngame = "mdp.json"\nK = 400\ncadence = 200\nseeds = [0]\nout = "u"\n')
    assert main(["run", cfg]) == 0
    rows = read_rows(tmp_path / "u" / "curves.csv")
    assert len(rows) == 3 and all(float(r[-1]) >= -1e-12 for r in rows[1:])


def test_eval_recomputes_report(tmp_path, game_file, capsys):
    write(tmp_path / "c.toml", f'algorithm = "cce"\ngame = "{game_file.name}"\nK = 30\nseeds = [0]\nout = "r"\nsave_history = true\n')
    assert main(["run", str(tmp_path / "c.toml")]) == 0
    capsys.readouterr()
    hist = str(tmp_path / "r" / "seed-0" / "history.npz")
    assert main(["eval", hist, "--csv", str(tmp_path / "t.csv")]) == 0
    doc = json.loads(capsys.readouterr().out)
    stored = json.loads((tmp_path / "r" / "seed-0" / "report.json").read_text())
    assert doc["players"] == stored["players"]
    assert read_rows(tmp_path / "t.csv")[0][0] == "player"
    assert main(["eval", hist, "--game", str(game_file), "--mc", "50"]) == 0
    assert "monte_carlo" in json.loads(capsys.readouterr().out)


def test_kl_check_and_net(tmp_path, capsys):
    assert main(["kl-check", "--instances", "10"]) == 0
    assert "ok" in capsys.readouterr().out
    assert main(["kl-check", "--instances", "3", "--tol", "-1"]) == 3
    net = tmp_path / "n.txt"
    assert main(["net", "emit", "--m", "7", "-o", str(net)]) == 0
    assert len(net.read_text().splitlines()) == 16
    assert main(["net", "verify", str(net)]) == 0
    net.write_text("0 0 0\n")
    assert main(["net", "verify", str(net)]) == 1
    assert main(["net", "emit", "--m", "3", "--k", "2"]) == 0


def test_validation_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    write(tmp_path / "bad.toml", 'algorithm = "x"\n')
    assert main(["run", str(tmp_path / "bad.toml")]) == 2
    assert "[bench-cli]" in capsys.readouterr().err
    assert main(["net", "emit", "--m", "11", "--k", "2"]) == 2
    assert "[hard-instances]" in capsys.readouterr().err
    assert main(["eval", str(tmp_path / "nope.npz")]) == 2


def test_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentConfig("cce", [], "o", game="g")
    with pytest.raises(ValidationError):
        ExperimentConfig("cce", [1, 1], "o", game="g", K=2)
    with pytest.raises(ValidationError):
        ExperimentConfig("cce", [1], "o", game="g", K=10, cadence=3)
    with pytest.raises(ValidationError):
        ExperimentConfig("nash-ca", [1], "o", game="g")
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"algorithm": "cce", "typo": 1})
    with pytest.raises(ValidationError):
        load_config(write(tmp_path / "m.json", '{"version": 99}'))


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "mglab.cli", "net", "emit", "--m", "3"],
                         capture_output=True, text=True, check=True)
    assert out.stdout == "0 0 0\n1 1 1\n"
