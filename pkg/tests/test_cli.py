import csv
import json
from pathlib import Path

import numpy as np
import pytest

from sparsenet import bitmask
from sparsenet.cli import main
from sparsenet.ght import write_matrix
from sparsenet.network import build_network

CONFIGS = Path(__file__).parents[1] / "configs"
BLOBS = str(CONFIGS / "blobs_iht.json")


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


class TestGht:
    def test_planted(self, tmp_path, capsys):
        assert main(["ght", "-k", "3", "--out", str(tmp_path), "--seed", "1"]) == 0
        res = last_json(capsys)
        assert res["support"] == res["true_support"]
        assert res["max_abs_error"] < 1e-6
        with open(tmp_path / "trace.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == res["iterations"]
        assert set(rows[0]) == {"iteration", "objective", "support_size", "support_change"}

    def test_global_flags_before_subcommand(self, tmp_path, capsys):
        assert main(["--seed", "1", "--out", str(tmp_path), "ght"]) == 0
        assert (tmp_path / "trace.csv").exists()
        again = tmp_path / "again"
        main(["ght", "--out", str(again), "--seed", "1"])
        assert (tmp_path / "solution.txt").read_text() == (again / "solution.txt").read_text()

    def test_matrix_files(self, tmp_path, capsys):
        A = np.eye(4)
        write_matrix(tmp_path / "A.txt", A)
        write_matrix(tmp_path / "b.txt", np.array([[0.0, 5.0, 0.0, -1.0]]))
        args = ["ght", "-k", "1", "--matrix", str(tmp_path / "A.txt"), "--rhs", str(tmp_path / "b.txt")]
        assert main(args + ["--out", str(tmp_path)]) == 0
        assert last_json(capsys)["support"] == [1]

    def test_matrix_needs_rhs(self, tmp_path, capsys):
        write_matrix(tmp_path / "A.txt", np.eye(2))
        assert main(["ght", "--matrix", str(tmp_path / "A.txt"), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ValueError:")


class TestTraining:
    def test_train_inspect_eval(self, tmp_path, capsys):
        assert main(["train", BLOBS, "--out", str(tmp_path)]) == 0
        res = last_json(capsys)
        assert res["status"] == "completed" and res["final_test_acc"] >= 0.95
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert all(n <= k for n, k in zip(summary["final_nonzeros"], summary["budgets"]))
        with open(tmp_path / "metrics.csv") as f:
            assert len(list(csv.DictReader(f))) == summary["total_epochs"] == 15

        model = str(tmp_path / "model.sdnn")
        assert main(["inspect", model]) == 0
        out = capsys.readouterr().out
        assert "layer 0 fully_connected" in out and "bitmask_bytes" in out

        assert main(["eval", BLOBS, "--model", model]) == 0
        assert last_json(capsys)["accuracy"] == pytest.approx(res["final_test_acc"], abs=1e-6)

    def test_sweep(self, tmp_path, capsys):
        assert main(["sweep", BLOBS, "--ratios", "0,0.5", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "sweep.csv") as f:
            rows = list(csv.DictReader(f))
        assert [float(r["ratio"]) for r in rows] == [0.0, 0.5]
        assert list(rows[0]) == ["ratio", "final_train_acc", "final_test_acc", "nonzeros", "bytes"]
        assert int(rows[1]["nonzeros"]) < int(rows[0]["nonzeros"])

    def test_sweep_single_zero(self, tmp_path, capsys):
        assert main(["sweep", BLOBS, "--ratios", "0", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "sweep.csv") as f:
            assert len(list(csv.DictReader(f))) == 1

    def test_sweep_rejects_unsorted(self, tmp_path, capsys):
        assert main(["sweep", BLOBS, "--ratios", "0.5,0.2", "--out", str(tmp_path)]) == 1
        assert "strictly increasing" in capsys.readouterr().err

    def test_parallel_sweep_matches_serial(self, tmp_path, capsys):
        main(["sweep", BLOBS, "--ratios", "0.25,0.5", "--out", str(tmp_path / "a")])
        main(["sweep", BLOBS, "--ratios", "0.25,0.5", "--jobs", "2", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "sweep.csv").read_text() == (tmp_path / "b" / "sweep.csv").read_text()

    def test_divergence_exit_code(self, tmp_path, capsys):
        cfg = json.loads(Path(BLOBS).read_text())
        cfg["architecture"]["layers"][0]["units"] = 4
        cfg["data"]["separation"] = 1e4
        cfg["train"].update(learning_rate=50.0, momentum=0.99)
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        with pytest.warns(RuntimeWarning):
            code = main(["train", str(path), "--out", str(tmp_path / "run")])
        assert code == 3
        summary = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert summary["status"] == "diverged" and "diverged" in summary["diagnostic"]


class TestCompress:
    def test_dense_checkpoint(self, tmp_path, capsys):
        net = build_network(json.loads(Path(BLOBS).read_text())["architecture"], seed=0)
        net.layers[0].weight[:, ::2] = 0.0
        src = tmp_path / "dense.sdnn"
        bitmask.save(src, net, dense=True)
        out = tmp_path / "sparse.sdnn"
        assert main(["compress", str(src), "-o", str(out)]) == 0
        res = last_json(capsys)
        assert res["bytes"] == out.stat().st_size < src.stat().st_size
        for a, b in zip(bitmask.load(src), bitmask.load(out)):
            assert a.weight.tobytes() == b.weight.tobytes()

    def test_bad_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.sdnn"
        bad.write_bytes(b"nope")
        assert main(["compress", str(bad), "--out", str(tmp_path)]) == 1
        assert capsys.readouterr().err.startswith("error: FormatError: bad magic")

    def test_missing_file(self, tmp_path, capsys):
        assert main(["inspect", str(tmp_path / "none.sdnn")]) == 1
        assert "FileNotFoundError" in capsys.readouterr().err
