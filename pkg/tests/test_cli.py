import json

import pytest

from defonet.cli import main
from defonet.dataset import read_dataset

CONFIG = """\
scene = beam
spans = 0.6, 0.9
forces = 0, 1
materials = wood
grid = 16
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "beam.cfg").write_text(CONFIG)
    assert main(["generate", "--config", str(d / "beam.cfg"), "--out", str(d / "beam.ds")]) == 0
    code = main([
        "train", "--data", str(d / "beam.ds"), "--out", str(d / "m.ckpt"),
        "--batch-size", "2", "--epochs", "2", "--seed", "3",
    ])
    assert code == 0
    return d


def test_generate_writes_dataset_and_sidecar(workdir):
    ds = read_dataset(workdir / "beam.ds")
    assert len(ds) == 4 and ds.resolution == 16
    assert len(ds.meta) == 4 and ds.meta[0]["span"] == 0.6


def test_train_writes_checkpoint_and_log(workdir):
    rows = [json.loads(line) for line in (workdir / "m.ckpt.log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 0, 1, 1]
    assert (workdir / "m.ckpt").stat().st_size > 0


def test_predict_then_assess(workdir, capsys):
    report = workdir / "pred.jsonl"
    code = main([
        "predict", "--ckpt", str(workdir / "m.ckpt"), "--scene", str(workdir / "beam.cfg"),
        "--force", "1", "--loc", "3", "--material", "wood", "--out", str(report),
    ])
    assert code == 0 and report.exists()
    capsys.readouterr()
    code = main(["assess", "--report", str(report), "--clearance", "0.015"])
    verdict = json.loads(capsys.readouterr().out)
    assert code == (0 if verdict["safe"] else 2)
    # a huge clearance makes any finite prediction safe; none at all stays unsafe
    code = main(["assess", "--report", str(report), "--clearance", "100"])
    assert code == (2 if verdict["margin"] is None else 0)


def test_evaluate_with_oracle(workdir, capsys):
    out = workdir / "eval"
    code = main(["evaluate", "--ckpt", "oracle", "--data", str(workdir / "beam.ds"), "--mode", "table", "--out-dir", str(out)])
    assert code == 0
    records = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert records and all(r["rmse_cm"] == 0 for r in records)
    assert (out / "table.png").exists()


def test_evaluate_with_checkpoint(workdir):
    out = workdir / "eval_ckpt"
    code = main(["evaluate", "--ckpt", str(workdir / "m.ckpt"), "--data", str(workdir / "beam.ds"), "--mode", "holdout", "--out-dir", str(out)])
    assert code == 0 and (out / "holdout.png").exists()


def test_errors_return_nonzero(workdir, capsys):
    assert main(["generate", "--config", str(workdir / "missing.cfg"), "--out", str(workdir / "x.ds")]) == 1
    bad = workdir / "bad.cfg"
    bad.write_text("spans = 0.6\nnonsense = 1\n")
    assert main(["generate", "--config", str(bad), "--out", str(workdir / "x.ds")]) == 1
    assert "unknown key" in capsys.readouterr().err
    coarse = workdir / "coarse.cfg"
    coarse.write_text(CONFIG.replace("grid = 16", "grid = 8"))
    assert main(["generate", "--config", str(coarse), "--out", str(workdir / "x.ds")]) == 1
    assert "finer grid" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["predict", "--ckpt", "x", "--out", "y", "--force", "0"])
