import subprocess
import sys

import numpy as np
import pytest

from tnrbm import cli, dataio
from tnrbm.models import model_for
from tnrbm.training import exact_gradient

A = np.zeros((4, 4))
A[:, :2] = 1.0
B = 1.0 - A
MODEL = ["--visible", "4,4", "--hidden", "2,2", "--ranks", "1,4,1", "--init-scale", "0.5", "--lr", "0.01"]


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    dataio.save_idx(d / "img.idx", np.stack([A, B] * 10) * 255)
    dataio.save_idx(d / "lab.idx", np.array([0, 1] * 10))
    assert cli.main(["train", "--images", str(d / "img.idx"), *MODEL, "--iterations", "60",
                     "--out-dir", str(d / "trained")]) == 0
    return d


def _run(args, capsys=None):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_train_outputs(toy):
    log = (toy / "trained" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,batches,recon_error" and len(log) == 61
    m = dataio.load_model(toy / "trained" / "model.tnrbm")
    assert m.variant == "mporbm" and m.ranks == (1, 4, 1)


def test_zero_learning_rate_saves_initialization(toy, tmp_path):
    img = toy / "img.idx"
    assert _run(["train", "--images", img, *MODEL, "--lr", "0", "--out", tmp_path / "a.tnrbm",
                 "--log", tmp_path / "a.csv"])[0] == 0
    assert _run(["train", "--images", img, *MODEL, "--iterations", "0", "--out", tmp_path / "b.tnrbm",
                 "--log", tmp_path / "b.csv"])[0] == 0
    assert (tmp_path / "a.tnrbm").read_bytes() == (tmp_path / "b.tnrbm").read_bytes()
    init = model_for("mporbm", (4, 4), (2, 2), (1, 4, 1), scale=0.5,
                     seed=cli._stream_seed(0, cli.STREAM_INIT))
    assert (tmp_path / "a.tnrbm").read_bytes() == dataio.model_to_bytes(init)


def test_timing_column(toy, tmp_path):
    _run(["train", "--images", toy / "img.idx", *MODEL, "--iterations", "2", "--timing", "--out-dir", tmp_path])
    assert (tmp_path / "train_log.csv").read_text().splitlines()[0] == "epoch,batches,recon_error,wall_ms"


@pytest.mark.parametrize("variant, dims", [("rbm", ["--visible", "16", "--hidden", "4"]),
                                           ("mvrbm", ["--visible", "4,4", "--hidden", "2,2"])])
def test_train_baselines(toy, tmp_path, variant, dims):
    code, _ = _run(["train", "--images", toy / "img.idx", "--variant", variant, *dims,
                    "--iterations", "3", "--out-dir", tmp_path])
    assert code == 0
    assert dataio.load_model(tmp_path / "model.tnrbm").variant == variant


def test_learning_rate_grid(toy, tmp_path, capsys):
    code, out = _run(["train", "--images", toy / "img.idx", "--labels", toy / "lab.idx", *MODEL,
                      "--iterations", "5", "--lr-grid", "0.01,0.05", "--out-dir", tmp_path], capsys)
    assert code == 0 and "selected lr=" in out.out
    code, _ = _run(["train", "--images", toy / "img.idx", *MODEL, "--lr-grid", "0.01", "--out-dir", tmp_path])
    assert code == 2  # needs labels


def test_features_and_knn(toy, tmp_path, capsys):
    model = toy / "trained" / "model.tnrbm"
    assert _run(["features", "--model", model, "--images", toy / "img.idx", "--labels", toy / "lab.idx",
                 "--out", tmp_path / "f.csv"])[0] == 0
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "sample_id,label,h1,h2,h3,h4" and len(rows) == 21
    code, out = _run(["knn-eval", "--model", model, "--train-images", toy / "img.idx",
                      "--train-labels", toy / "lab.idx", "--test-images", toy / "img.idx",
                      "--test-labels", toy / "lab.idx", "--out", tmp_path / "k.csv"], capsys)
    assert code == 0 and "classification_error=0.0" in out.out
    assert (tmp_path / "k.csv").read_text().splitlines()[0] == "sample_id,predicted,label"


def test_complete_and_denoise(toy, tmp_path, capsys):
    model = toy / "trained" / "model.tnrbm"
    code, out = _run(["complete", "--model", model, "--images", toy / "img.idx", "--given", "right",
                      "--out-dir", tmp_path, "--pgm-limit", "3"], capsys)
    assert code == 0 and "mean_psnr_db" in out.out
    assert sorted(p.name for p in tmp_path.glob("*.pgm")) == [f"complete_0000{i}.pgm" for i in range(3)]
    assert (tmp_path / "complete.csv").read_text().splitlines()[0] == "sample_id,psnr_db"
    code, _ = _run(["denoise", "--model", model, "--images", toy / "img.idx", "--noise", "0.2",
                    "--out-dir", tmp_path, "--pgm-limit", "1"])
    assert code == 0 and (tmp_path / "denoised_00000.pgm").exists() and (tmp_path / "noisy_00000.pgm").exists()
    assert len((tmp_path / "denoise.csv").read_text().splitlines()) == 21


@pytest.mark.filterwarnings("ignore:MPO ranks")
def test_rank_sweep_rows(toy, tmp_path):
    code, _ = _run(["rank-sweep", "--train-images", toy / "img.idx", "--train-labels", toy / "lab.idx",
                    "--test-images", toy / "img.idx", "--test-labels", toy / "lab.idx",
                    "--visible", "4,4", "--hidden", "2,2", "--iterations", "2",
                    "--rank-list", "2,10,40,100", "--out", tmp_path / "s.csv"])
    assert code == 0
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "rank,classification_error" and [r.split(",")[0] for r in rows[1:]] == ["2", "10", "40", "100"]


def test_rank_sweep_default_includes_rank_one():
    args = cli.build_parser().parse_args(["rank-sweep", "--visible", "4,4", "--hidden", "2,2"])
    assert args.rank_list[0] == 1


def test_materialize(toy, tmp_path):
    assert _run(["materialize", "--model", toy / "trained" / "model.tnrbm", "--out", tmp_path / "w.csv"])[0] == 0
    rows = (tmp_path / "w.csv").read_text().splitlines()
    w = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    m = dataio.load_model(toy / "trained" / "model.tnrbm")
    assert np.array_equal(w, m.mpo.as_matrix())
    assert _run(["materialize", "--model", toy / "trained" / "model.tnrbm", "--cap", "10",
                 "--out", tmp_path / "w2.csv"])[0] == 1


def test_grad_check_report(capsys):
    code, out = _run(["grad-check"], capsys)
    lines = out.out.splitlines()
    assert code == 0
    assert [ln.split()[0] for ln in lines[:-1]] == ["core1", "core2", "B", "C"]
    assert lines[-1].startswith("PASS")


def test_grad_check_detects_corrupted_negative_phase(monkeypatch, capsys):
    def wrong(m, data):
        grads = exact_gradient(m, data)
        pos = m.statistics(data, m.cond_hidden(data))
        return {k: 2 * pos[k] - g for k, g in grads.items()}

    monkeypatch.setattr(cli, "exact_gradient", wrong)
    code, out = _run(["grad-check"], capsys)
    assert code == 1 and "FAIL" in out.out


def test_grad_check_three_cores(capsys):
    code, out = _run(["grad-check", "--visible", "2,1,2", "--hidden", "1,2,1", "--ranks", "1,2,2,1"], capsys)
    assert code == 0 and [ln.split()[0] for ln in out.out.splitlines()[:3]] == ["core1", "core2", "core3"]


def test_grad_check_refuses_large_models():
    assert _run(["grad-check", "--visible", "4,4", "--hidden", "2,2"])[0] == 1


@pytest.mark.parametrize("args", [
    [],
    ["train"],
    ["train", "--visible", "4,x", "--hidden", "2"],
    ["train", "--visible", "0,4", "--hidden", "2"],
    ["frobnicate"],
    ["complete", "--model", "m", "--images", "i", "--given", "middle"],
])
def test_usage_errors(args):
    assert _run(args)[0] == 2


def test_io_errors(toy, tmp_path):
    assert _run(["train", "--images", tmp_path / "missing.idx", *MODEL])[0] == 3
    (tmp_path / "bad.idx").write_bytes(b"\x01\x02\x03\x04")
    assert _run(["train", "--images", tmp_path / "bad.idx", *MODEL])[0] == 3
    (tmp_path / "bad.tnrbm").write_bytes(b"garbage")
    assert _run(["features", "--model", tmp_path / "bad.tnrbm", "--images", toy / "img.idx"])[0] == 3


def test_validation_errors(toy):
    assert _run(["train", "--images", toy / "img.idx", "--visible", "4,5", "--hidden", "2,2"])[0] == 1
    assert _run(["train", "--images", toy / "img.idx", "--csv", toy / "x.csv", *MODEL])[0] == 2
    assert _run(["train", "--images", toy / "img.idx", *MODEL, "--batch-size", "0"])[0] == 1


def test_config_file(toy, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy run\niterations = 3\nhidden=2,2\nvisible=4,4\ninit-scale=0.5\ntiming=true\n")
    code, _ = _run(["--config", cfg, "train", "--images", toy / "img.idx", "--iterations", "4",
                    "--out-dir", tmp_path])
    assert code == 0
    log = (tmp_path / "train_log.csv").read_text().splitlines()
    assert len(log) == 5 and log[0].endswith("wall_ms")  # flag beats file, file beats default
    cfg.write_text("no_such_option=1\n")
    assert _run(["--config", cfg, "train", *MODEL])[0] == 2
    assert _run(["--config", tmp_path / "missing.cfg", "train", *MODEL])[0] == 3


def test_csv_input(tmp_path):
    rows = ["label," + ",".join(f"p{i}" for i in range(16))]
    for k in range(6):
        img = A if k % 2 == 0 else B
        rows.append(f"{k % 2}," + ",".join(str(int(v)) for v in img.ravel(order="F")))
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    code, _ = _run(["train", "--csv", tmp_path / "d.csv", "--label-column", "label", *MODEL,
                    "--iterations", "2", "--out-dir", tmp_path])
    assert code == 0


def test_threads(toy, tmp_path, monkeypatch):
    assert _run(["--threads", "1", "train", "--images", toy / "img.idx", *MODEL, "--iterations", "1",
                 "--out-dir", tmp_path])[0] == 0
    monkeypatch.setenv("TNRBM_THREADS", "2")
    assert _run(["train", "--images", toy / "img.idx", *MODEL, "--iterations", "1", "--out-dir", tmp_path])[0] == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tnrbm", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "grad-check" in proc.stdout
