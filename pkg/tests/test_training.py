import json

import numpy as np
import pytest

from sltkit.clips import ClipConfig
from sltkit.corpus import load_corpus
from sltkit.decode import DecodeConfig
from sltkit.errors import ConfigError, MissingDirection
from sltkit.mixture import preset
from sltkit.model.checkpoint import load_checkpoint
from sltkit.model.network import Seq2SeqModel, model_preset
from sltkit.training import (
    Segment, TrainConfig, corpus_segments, evaluate_segments, finetune, finetune_config, make_dev_evaluator,
    pretrain,
)


@pytest.fixture(scope="module")
def corpus(small_bench):
    return load_corpus(small_bench)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(max_steps=-1)
    assert finetune_config().batch_size == 32


def test_segments_per_direction(corpus):
    segs = corpus_segments(corpus, "test", ClipConfig(), [("sgn", "en0"), ("sgn", "xa")])
    assert list(segs) == [("sgn", "en0"), ("sgn", "xa")]
    assert all(s.target and len(s.frames) for s in segs[("sgn", "xa")])
    with pytest.raises(MissingDirection):
        corpus_segments(corpus, "test", ClipConfig(), [("sgn", "zz")])


def test_train_split_has_no_genuine_zero_shot_segments(corpus):
    assert ("sgn", "xa") not in corpus_segments(corpus, "train", ClipConfig())


def test_zero_steps_writes_initial_checkpoint(corpus, tmp_path):
    model = Seq2SeqModel(model_preset("tiny"), seed=0)
    res = pretrain(model, corpus, preset("baseline"), TrainConfig(max_steps=0), out_dir=tmp_path)
    best, meta = load_checkpoint(tmp_path / "best.ckpt")
    assert meta["step"] == 0 and res.best_step == 0
    assert all(np.array_equal(best.params[k], model.params[k]) for k in model.params)
    assert (tmp_path / "best.ckpt").read_bytes() == (tmp_path / "last.ckpt").read_bytes()


def test_log_reports_mixture_fraction(corpus):
    res = pretrain(Seq2SeqModel(model_preset("tiny"), seed=0), corpus, preset("baseline+mt"),
                   TrainConfig(batch_size=50, max_steps=4, log_every=4))
    frac = res.log[-1]["task_frac"]
    assert frac["mt"] == pytest.approx(0.9, abs=0.06)
    assert set(res.log[-1]["task_loss"]) == set(frac)


def _run(corpus, out):
    dev = corpus_segments(corpus, "dev", ClipConfig(), [("sgn", "en0")])
    ev = make_dev_evaluator(dev, DecodeConfig(beam_size=1, max_len=8))
    tcfg = TrainConfig(batch_size=4, max_steps=6, eval_every=3, log_every=2, seed=3)
    return pretrain(Seq2SeqModel(model_preset("tiny"), seed=3), corpus, preset("baseline+mt", p_mt=0.5),
                    tcfg, evaluator=ev, out_dir=out)


def test_pretrain_rerun_is_bit_identical(corpus, tmp_path):
    _run(corpus, tmp_path / "a")
    _run(corpus, tmp_path / "b")
    for name in ("train_log.jsonl", "best.ckpt", "last.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = [json.loads(x) for x in (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()]
    assert "config" in rows[0] and rows[0]["config"]["train"]["seed"] == 3
    assert [r["step"] for r in rows[1:]] == [0, 2, 3, 4, 6]
    assert all("dev" in r for r in rows[1:] if r["step"] in (0, 3, 6))


def test_best_checkpoint_tracks_dev_score(corpus, tmp_path):
    res = _run(corpus, tmp_path)
    scores = [r["dev"]["select"] for r in res.log if "dev" in r]
    assert res.best_score == max(scores)
    _, meta = load_checkpoint(tmp_path / "best.ckpt")
    assert meta["step"] == res.best_step


def test_finetune_empty_segments_is_identity():
    model = Seq2SeqModel(model_preset("tiny"), seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    res = finetune(model, [])
    assert all(np.array_equal(before[k], res.model.params[k]) for k in before)


def test_finetune_uses_slt_prompt_and_learns():
    rng = np.random.default_rng(0)
    segs = [Segment(rng.standard_normal((6, 255)).astype(np.float32), "x01 x02", "sgn", "xa")]
    model = Seq2SeqModel(model_preset("tiny", dropout=0.0), seed=0)
    res = finetune(model, segs, finetune_config(max_steps=150, learning_rate=1e-2, batch_size=2, log_every=10))
    assert res.log[-1]["loss"] < 0.1
    assert set(res.log[-1]["task_frac"]) == {"slt"}
    out = evaluate_segments(res.model, {("sgn", "xa"): segs}, DecodeConfig(beam_size=2, max_len=16))
    assert out[("sgn", "xa")]["hyps"] == ["x01 x02"]
    assert out[("sgn", "xa")]["bleu"] == 100.0
