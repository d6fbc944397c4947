import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tensorpart.cli import run
from tensorpart.coordfile import read_coo, write_coo
from tensorpart.tensor import SparseTensor3


@pytest.fixture
def planted(tmp_path):
    path = tmp_path / "a.coo"
    truth = tmp_path / "truth.json"
    code = run(["synth", "--pattern", "prop53", "--m", "40", "--n", "10", "--seed", "3",
                "--out", str(path), "--truth", str(truth)])
    assert code == 0
    return path, json.loads(truth.read_text())


def load(path):
    return json.loads(path.read_text())


def test_synth_then_partition(planted, tmp_path):
    path, truth = planted
    out = tmp_path / "rep.json"
    vec = tmp_path / "vec.csv"
    reo = tmp_path / "reordered.coo"
    code = run(["partition", str(path), "--out", str(out), "--export-vectors", str(vec),
                "--export-reordered", str(reo)])
    assert code == 0
    rep = load(out)
    assert rep["tool"] == "tensorpart" and rep["command"] == "partition"
    assert rep["report"]["pattern"] == "BlockDiag3_FullySeparable"
    labels = np.array(truth["truth"]["labels12"])
    block1 = np.array(rep["report"]["block1"]) - 1
    assert len(set(labels[block1])) == 1 and block1.size == 20
    rows = list(csv.reader(vec.open()))
    assert rows[0][:2] == ["position", "index"] and len(rows) == 41
    assert rows[1][0] == "1"
    assert read_coo(reo).nnz == read_coo(path).nnz


def test_approx_and_verify(planted, tmp_path):
    path, _ = planted
    res = tmp_path / "res.json"
    vec = tmp_path / "vec.csv"
    assert run(["approx", str(path), "--rank", "2,2,2", "--out", str(res), "--export-vectors", str(vec)]) == 0
    data = load(res)
    assert data["result"]["rank"] == [2, 2, 2] and data["result"]["converged"]
    ver = tmp_path / "ver.json"
    assert run(["verify", str(path), "--result", str(res), "--out", str(ver)]) == 0
    report = load(ver)
    assert report["passed"]
    assert {c["name"] for c in report["checks"]} >= {"stationarity", "pythagoras", "core_consistent"}


def test_verify_flags_tampered_result(planted, tmp_path):
    path, _ = planted
    res = tmp_path / "res.json"
    run(["approx", str(path), "--out", str(res)])
    data = load(res)
    data["result"]["core"][0][0][0] += 0.5
    res.write_text(json.dumps(data))
    assert run(["verify", str(path), "--result", str(res), "--out", str(tmp_path / "v.json")]) == 1
    failed = {c["name"] for c in load(tmp_path / "v.json")["checks"] if not c["passed"]}
    assert "core_consistent" in failed


def test_normalize_round_trip(tmp_path):
    D = np.zeros((4, 4, 2))
    D[0, 1, 0] = D[1, 0, 0] = 3.0
    D[2, 3, 1] = D[3, 2, 1] = 2.0
    D[1, 2, 1] = D[2, 1, 1] = 1.0
    src = tmp_path / "raw.coo"
    write_coo(SparseTensor3.from_dense(D), src)
    dst = tmp_path / "norm.coo"
    rep = tmp_path / "deg.json"
    assert run(["normalize", str(src), str(dst), "--report", str(rep)]) == 0
    B = read_coo(dst)
    np.testing.assert_allclose(B.to_dense()[:, :, 0][0, 1], 1.0)
    assert load(rep)["degrees"]["isolated"][0] == [3, 4]


def test_baseline(planted, tmp_path):
    path, _ = planted
    out = tmp_path / "b.json"
    assert run(["baseline", str(path), "--slice", "1", "--out", str(out)]) in (0, 3)
    part = load(out)["partition"]
    assert sorted(part["block1"] + part["block2"]) == list(range(1, 41))


def test_malformed_input_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.coo"
    bad.write_text("%dims 3 3 1 sym12\n1 2 1 1.0\n1 2 x 1.0\n")
    assert run(["approx", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["approx", "missing.coo"],
        ["approx", "--rank", "2,3,1"],
        ["partition", "--ranks", "3,3,1"],
        ["synth"],
        ["bogus"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == 2


def test_rank_out_of_range(planted):
    path, _ = planted
    assert run(["approx", str(path), "--rank", "2,2,11"]) == 2


def test_nonconvergence_exit_code(planted, tmp_path):
    path, _ = planted
    assert run(["approx", str(path), "--rank", "2,2,2", "--max-iter", "1", "--out", str(tmp_path / "r.json")]) == 3


def test_entry_point_pipeline(tmp_path):
    synth = subprocess.run(
        [sys.executable, "-m", "tensorpart", "synth", "--pattern", "ex2", "--m", "30", "--n", "6"],
        capture_output=True, text=True, check=True,
    )
    part = subprocess.run(
        [sys.executable, "-m", "tensorpart", "partition", "-"],
        input=synth.stdout, capture_output=True, text=True,
    )
    assert part.returncode == 0, part.stderr
    assert json.loads(part.stdout)["report"]["pattern"] == "AntiDiag_Bipartite"


def test_version(capsys):
    assert run(["--version"]) == 0
    assert "tensorpart" in capsys.readouterr().out


def test_synth_prop53_pipe_partition(tmp_path):
    synth = subprocess.run(
        [sys.executable, "-m", "tensorpart", "synth", "--pattern", "prop53", "--perturb", "0"],
        capture_output=True, text=True, check=True,
    )
    part = subprocess.run(
        [sys.executable, "-m", "tensorpart", "partition"], input=synth.stdout, capture_output=True, text=True
    )
    assert part.returncode == 0, part.stderr
    rep = json.loads(part.stdout)["report"]
    assert rep["pattern"] == "BlockDiag3_FullySeparable"
    assert rep["cut12"] == 100 and rep["cut3"] == 100


def test_approx_core_norm_ratio_on_block_instance(tmp_path):
    path = tmp_path / "ex1.coo"
    assert run(["synth", "--pattern", "ex1", "--seed", "2", "--out", str(path)]) == 0
    norms = {}
    for rank in ("2,2,2", "2,2,1"):
        out = tmp_path / f"r{rank}.json"
        assert run(["approx", str(path), "--rank", rank, "--out", str(out)]) == 0
        norms[rank] = load(out)["result"]["objective"]
    assert norms["2,2,2"] / norms["2,2,1"] - 1 <= 0.01


def test_reports_are_deterministic(planted, tmp_path):
    path, _ = planted
    texts = []
    out = tmp_path / "r.json"
    for _ in range(2):
        assert run(["partition", str(path), "--out", str(out)]) == 0
        data = load(out)
        data.pop("timing")
        texts.append(json.dumps(data, sort_keys=True))
    assert texts[0] == texts[1]
