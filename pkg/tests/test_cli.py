import json

import pytest

from sltkit.cli import main
from sltkit.metrics import read_report


@pytest.fixture(scope="module")
def trained(small_bench, tmp_path_factory):
    out = tmp_path_factory.mktemp("pt")
    rc = main(["pretrain", "--corpus", str(small_bench), "--out", str(out), "--max-steps", "4",
               "--batch-size", "4", "--eval-every", "2", "--log-every", "2", "--dev-max-len", "8"])
    assert rc == 0
    return out


def test_pretrain_outputs_and_run_config(trained):
    for name in ("best.ckpt", "last.ckpt", "train_log.jsonl", "run.json"):
        assert (trained / name).exists()
    run = json.loads((trained / "run.json").read_text())
    assert run["seed"] == 0 and run["max_steps"] == 4 and run["mixture"] == "baseline+mt"


def test_config_file_with_flag_override(small_bench, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"corpus": str(small_bench), "max_steps": 2, "batch_size": 9, "seed": 5,
                               "eval_every": 2, "log_every": 1, "dev_max_len": 4}))
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o"), "--batch-size", "3"]) == 0
    run = json.loads((tmp_path / "o" / "run.json").read_text())
    assert (run["batch_size"], run["max_steps"], run["seed"]) == (3, 2, 5)


def test_translate_prints_hypothesis(trained, small_bench, capsys):
    lmk = next((small_bench / "videos").glob("*.lmk"))
    assert main(["translate", "--checkpoint", str(trained / "best.ckpt"), str(lmk), "--max-len", "6",
                 "--beam-size", "2"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 1


def test_eval_and_report(trained, small_bench, tmp_path, capsys):
    ck = str(trained / "best.ckpt")
    common = ["--corpus", str(small_bench), "--max-len", "6", "--checkpoint", ck]
    assert main(["eval", *common, "--report", str(tmp_path / "r" / "pre.csv"), "--cascade", "pivot=en0"]) == 0
    rows = read_report(tmp_path / "r" / "pre.csv").rows
    assert [r.direction for r in rows] == ["sgn->en0", "sgn->xa", "sgn->xa (cascade via en0)"]
    assert all(r.stage == "pretrain" and r.seed == 0 for r in rows)
    assert main(["eval", *common, "--stage", "finetune", "--report", str(tmp_path / "r" / "ft.csv"),
                 "--directions", "sgn->en0,sgn->xa,sgn->xb"]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "r"), "--out", str(tmp_path / "rep")]) == 0
    out = capsys.readouterr().out
    assert "learned-metric" in out and "spearman[bleu]" in out
    assert (tmp_path / "rep" / "comparison.csv").exists()


@pytest.mark.parametrize("argv,code", [
    (["pretrain", "--nope"], 1),
    (["frobnicate"], 1),
    (["pretrain", "--corpus", "/does/not/exist", "--out", "x"], 1),
    (["pretrain", "--corpus", ".", "--out", "x", "--mixture", "weird"], 1),
    (["eval", "--corpus", "/does/not/exist", "--checkpoint", "/nope"], 1),
])
def test_usage_errors_exit_1(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code


def test_missing_direction_exits_2(trained, small_bench):
    assert main(["eval", "--checkpoint", str(trained / "best.ckpt"), "--corpus", str(small_bench),
                 "--directions", "sgn->zz"]) == 2


def test_bad_config_file_exits_1(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert main(["report", "--config", str(bad)]) == 1


def test_corrupt_checkpoint_exits_2(small_bench, tmp_path):
    ck = tmp_path / "bad.ckpt"
    ck.write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(ck), "--corpus", str(small_bench)]) == 2


def test_gen_command(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "b"), "--n-train", "2", "--n-dev", "1", "--n-test", "1",
                 "--n-tune", "1", "--mt-count", "5", "--seed", "4"]) == 0
    spec = json.loads((tmp_path / "b" / "spec.json").read_text())
    assert spec["seed"] == 4 and spec["n_train"] == 2
