import json
import socket
import subprocess
import sys

import numpy as np
import pytest

from opusketch.cli import main
from opusketch.sketching import Sketch


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["generate", "--K", "3", "--D", "4", "--N", "1500", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_generate_and_sidecar(dataset):
    rows = np.loadtxt(dataset, delimiter=",")
    assert rows.shape == (1500, 5)
    meta = json.loads((dataset.parent / "d.csv.jsonl").read_text())
    assert meta["K"] == 3 and len(meta["means"]) == 3


def test_grid_entropy(dataset, tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert main(["grid-entropy", "--data", str(dataset), "--labels", "--M", "300", "--S", "5",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "sigma,entropy,selected" and len(lines) == 6
    flags = [int(l.split(",")[2]) for l in lines[1:]]
    ent = [float(l.split(",")[1]) for l in lines[1:]]
    assert sum(flags) == 1 and ent[flags.index(1)] == max(ent)


def test_matrix_sketch_learn_evaluate(dataset, tmp_path):
    sk, cen = tmp_path / "s.skch", tmp_path / "c.csv"
    assert main(["sketch", "--data", str(dataset), "--labels", "--M", "300", "--out", str(sk)]) == 0
    z, box = Sketch.load(sk, with_box=True)
    assert z.provenance == "matrix" and box[0].size == 4
    assert main(["learn", "--sketch", str(sk), "--K", "3", "--out", str(cen)]) == 0
    C = np.loadtxt(cen, delimiter=",")
    assert C.shape == (3, 5) and C[:, -1].sum() == pytest.approx(1.0)
    out = tmp_path / "e.json"
    assert main(["evaluate", "--data", str(dataset), "--labels", "--centroids", f"M={cen}",
                 f"M={cen}", "--format", "json", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["method"] == "M" and len(rep["rse"]) == 2 and rep["rse_mean"] < 1.5


def test_opu_sketch_needs_calibration(dataset, tmp_path):
    opu, cal, sk = tmp_path / "o.opu", tmp_path / "o.cal", tmp_path / "s.skch"
    assert main(["make-opu", "--M", "300", "--D", "4", "--seed", "2", "--out", str(opu)]) == 0
    assert main(["calibrate", "--opu", str(opu), "--out", str(cal)]) == 0
    assert main(["sketch", "--data", str(dataset), "--labels", "--opu", str(opu),
                 "--calibration", str(cal), "--out", str(sk)]) == 0
    assert Sketch.load(sk).provenance == "device"
    with pytest.raises(SystemExit):
        main(["learn", "--sketch", str(sk), "--K", "3", "--out", str(tmp_path / "c.csv")])
    assert main(["learn", "--sketch", str(sk), "--calibration", str(cal), "--K", "3",
                 "--out", str(tmp_path / "c.csv")]) == 0


def test_evaluate_rejects_wrong_width(dataset, tmp_path):
    bad = tmp_path / "bad.csv"
    np.savetxt(bad, np.zeros((3, 7)), delimiter=",")
    with pytest.raises(SystemExit):
        main(["evaluate", "--data", str(dataset), "--labels", "--centroids", str(bad)])


def test_missing_file_reports_error(tmp_path, capsys):
    assert main(["learn", "--sketch", str(tmp_path / "none"), "--K", "2", "--out", "x"]) == 1
    assert "opusketch:" in capsys.readouterr().err


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_run_pipeline_roles(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("K = 3\nD = 4\nN = 1500\nM = 300\nS = 6\nsigma_min = 0.01\npath = opu\n"
                   f"port = {_free_port()}\ntimeout = 60\n")
    both = tmp_path / "both.csv"
    assert main(["run-pipeline", "--role", "both", "--config", str(cfg), "--centroids", str(both)]) == 0
    assert "CLOMP-SO" in capsys.readouterr().out
    srv_out = tmp_path / "srv.csv"
    srv = subprocess.Popen([sys.executable, "-m", "opusketch.cli", "run-pipeline", "--role", "server",
                            "--config", str(cfg), "--centroids", str(srv_out)],
                           stderr=subprocess.PIPE, text=True)
    assert "listening" in srv.stderr.readline()
    dev = subprocess.run([sys.executable, "-m", "opusketch.cli", "run-pipeline", "--role", "device",
                          "--config", str(cfg)], capture_output=True, text=True, timeout=120)
    assert dev.returncode == 0, dev.stderr
    assert srv.wait(timeout=120) == 0
    np.testing.assert_allclose(np.loadtxt(srv_out, delimiter=","), np.loadtxt(both, delimiter=","),
                               atol=1e-9)
