"""Training loops: mixture pretraining with dev-based checkpoint selection, and SLT finetuning."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .clips import ClipConfig, caption_segment
from .corpus import Corpus
from .decode import DecodeConfig, decode_batch, segment_example
from .errors import ConfigError, MissingDirection
from .metrics import bleu, chrf
from .mixture import ExampleSource, Inventory, MixtureConfig, MixtureSampler
from .model.checkpoint import save_checkpoint
from .model.network import Seq2SeqModel, collate
from .model.optim import make_optimizer
from .model.tokenizer import ByteTokenizer
from .tasks import TaskExample, TaskKind

log = logging.getLogger(__name__)

TASK_ORDER = (TaskKind.SLT, TaskKind.ALIGN, TaskKind.MT, TaskKind.AUG_SLT)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_steps: int = 20000
    seed: int = 0
    optimizer: str = "adam"
    eval_every: int = 1000
    log_every: int = 100

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.eval_every < 1 or self.log_every < 1:
            raise ConfigError("eval_every and log_every must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


FINETUNE_DEFAULTS = dict(batch_size=32, learning_rate=5e-4)


def finetune_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**FINETUNE_DEFAULTS, "max_steps": 1000, "eval_every": 100, "log_every": 50, **overrides})


def train_step(model: Seq2SeqModel, batch, optimizer, rng: np.random.Generator | None) -> tuple[float, np.ndarray]:
    """One optimizer update; returns the batch loss and per-example summed NLL."""
    loss, grads, per_example = model.loss(batch, rng=rng)
    optimizer.update(model.params, grads)
    return loss, per_example


# -- evaluation sets ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Segment:
    """An aligned (frames, reference) pair for one translation direction."""

    frames: np.ndarray
    target: str
    sign_lang: str
    tgt_lang: str

    @property
    def direction(self) -> str:
        return f"{self.sign_lang}->{self.tgt_lang}"


def corpus_segments(corpus: Corpus, split: str, clip_cfg: ClipConfig,
                    directions: Sequence[tuple[str, str]] | None = None,
                    genuine_only: bool = True) -> dict[tuple[str, str], list[Segment]]:
    """One segment per caption, grouped by (sign language, caption language).

    Raises :class:`MissingDirection` when a requested direction has no captions in ``split``.
    """
    out: dict[tuple[str, str], list[Segment]] = {}
    want = None if directions is None else set(directions)
    for video in corpus.split(split):
        for cap in video.captions:
            if genuine_only and cap.augmented:
                continue
            key = (video.sign_lang, cap.lang)
            if want is not None and key not in want:
                continue
            out.setdefault(key, []).append(Segment(caption_segment(video, cap, clip_cfg), cap.text, *key))
    if want is not None:
        missing = sorted(want - set(out))
        if missing:
            raise MissingDirection(f"split {split!r} has no references for {missing}")
        out = {k: out[k] for k in directions}
    return out


def evaluate_segments(model: Seq2SeqModel, segments: Mapping[tuple[str, str], Sequence[Segment]],
                      decode_cfg: DecodeConfig, tok: ByteTokenizer | None = None
                      ) -> dict[tuple[str, str], dict]:
    """Decode every segment and score each direction: {direction: {bleu, chrf, hyps}}."""
    tok = tok or ByteTokenizer()
    out = {}
    for key, segs in segments.items():
        examples = [segment_example(s.frames, s.sign_lang, s.tgt_lang) for s in segs]
        hyps = decode_batch(model, examples, tok, decode_cfg)
        refs = [s.target for s in segs]
        out[key] = {"bleu": bleu(hyps, refs), "chrf": chrf(hyps, refs), "hyps": hyps}
    return out


Evaluator = Callable[[Seq2SeqModel], dict]


def make_dev_evaluator(segments: Mapping[tuple[str, str], Sequence[Segment]],
                       decode_cfg: DecodeConfig = DecodeConfig(beam_size=1)) -> Evaluator:
    """Evaluator returning per-direction scores plus ``select``, the mean ChrF used for selection."""

    def evaluate(model: Seq2SeqModel) -> dict:
        res = evaluate_segments(model, segments, decode_cfg)
        scores = {f"{s}->{t}": {"bleu": round(r["bleu"], 6), "chrf": round(r["chrf"], 6)} for (s, t), r in res.items()}
        select = float(np.mean([r["chrf"] for r in res.values()])) if res else 0.0
        return {"directions": scores, "select": select}

    return evaluate


# -- loops ----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Seq2SeqModel  # last-step model
    best: Seq2SeqModel
    best_step: int
    best_score: float | None
    log: list[dict] = field(default_factory=list)


class _RunLog:
    """JSON-lines training log whose first line records the resolved config."""

    def __init__(self, path: Path | None, header: dict):
        self.rows: list[dict] = []
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")
            self._fh.write(json.dumps({"config": header}, sort_keys=True) + "\n")

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._fh.write(json.dumps(row, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _run_loop(model: Seq2SeqModel, tcfg: TrainConfig, next_batch: Callable[[], list[TaskExample]],
              drop_rng: np.random.Generator, evaluator: Evaluator | None, out_dir: Path | None,
              header: dict, tok: ByteTokenizer) -> TrainResult:
    opt = make_optimizer(tcfg.optimizer, model.params, tcfg.learning_rate)
    runlog = _RunLog(None if out_dir is None else out_dir / "train_log.jsonl", header)
    meta = {"config": header}

    def save(name: str, m: Seq2SeqModel, step: int, dev: dict | None) -> None:
        if out_dir is not None:
            save_checkpoint(out_dir / name, m, {**meta, "step": step, "dev": dev})

    best, best_step, best_score, best_dev = model.copy(), 0, None, None
    if evaluator is not None and tcfg.max_steps > 0:
        best_dev = evaluator(model)
        best_score = best_dev["select"]
        runlog.write({"step": 0, "dev": best_dev})
    save("best.ckpt", best, 0, best_dev)

    acc_loss, acc_tok = 0.0, 0
    task_nll = {k: 0.0 for k in TASK_ORDER}
    task_tok = {k: 0 for k in TASK_ORDER}
    task_n = {k: 0 for k in TASK_ORDER}
    t0 = time.perf_counter()
    try:
        for step in range(1, tcfg.max_steps + 1):
            examples = next_batch()
            batch = collate(examples, tok, model.cfg)
            loss, per_ex = train_step(model, batch, opt, drop_rng)
            lens = batch.dec_valid.sum(-1)
            acc_loss += loss * int(lens.sum())
            acc_tok += int(lens.sum())
            for kind, nll, n in zip(batch.kinds, per_ex, lens):
                task_nll[kind] += float(nll)
                task_tok[kind] += int(n)
                task_n[kind] += 1

            row = None
            if step % tcfg.log_every == 0 or step == tcfg.max_steps:
                n_ex = sum(task_n.values())
                row = {
                    "step": step,
                    # full precision, so reruns can be compared exactly
                    "loss": acc_loss / max(acc_tok, 1),
                    "task_loss": {k.value: task_nll[k] / task_tok[k] for k in TASK_ORDER if task_tok[k]},
                    "task_frac": {k.value: round(task_n[k] / n_ex, 6) for k in TASK_ORDER if task_n[k]},
                }
                acc_loss, acc_tok = 0.0, 0
                task_nll = {k: 0.0 for k in TASK_ORDER}
                task_tok = {k: 0 for k in TASK_ORDER}
                task_n = {k: 0 for k in TASK_ORDER}
            if evaluator is not None and (step % tcfg.eval_every == 0 or step == tcfg.max_steps):
                dev = evaluator(model)
                row = row or {"step": step}
                row["dev"] = dev
                if best_score is None or dev["select"] > best_score:
                    best, best_step, best_score, best_dev = model.copy(), step, dev["select"], dev
                    save("best.ckpt", best, step, dev)
                log.info("step %d dev %.2f (best %.2f @ %d) %.1fs", step, dev["select"], best_score,
                         best_step, time.perf_counter() - t0)
            if row is not None:
                runlog.write(row)
    finally:
        runlog.close()
    if evaluator is None:
        best, best_step = model.copy(), tcfg.max_steps
        save("best.ckpt", best, best_step, None)
    save("last.ckpt", model, tcfg.max_steps, None)
    return TrainResult(model, best, best_step, best_score, runlog.rows)


def pretrain(model: Seq2SeqModel, corpus: Corpus, mix: MixtureConfig, tcfg: TrainConfig,
             clip_cfg: ClipConfig = ClipConfig(), evaluator: Evaluator | None = None,
             out_dir: str | Path | None = None, extra_meta: dict | None = None) -> TrainResult:
    """Multi-task pretraining on the train split with the given mixture.

    Three independent random streams (task draws, example construction,
    dropout) are spawned from ``tcfg.seed``, so a rerun with the same inputs
    reproduces the run bit for bit.
    """
    sampler = MixtureSampler(mix, Inventory.from_corpus(corpus, "train"))
    source = ExampleSource(corpus, clip_cfg, "train")
    mix_ss, data_ss, drop_ss = np.random.SeedSequence(tcfg.seed).spawn(3)
    mix_rng, data_rng = np.random.default_rng(mix_ss), np.random.default_rng(data_ss)

    def next_batch() -> list[TaskExample]:
        return [source.make_example(sampler.next_draw(mix_rng), data_rng) for _ in range(tcfg.batch_size)]

    header = {"stage": "pretrain", "train": tcfg.to_json(), "mixture": mix.to_json(),
              "model": model.cfg.to_json(), "clip": asdict(clip_cfg), **(extra_meta or {})}
    return _run_loop(model, tcfg, next_batch, np.random.default_rng(drop_ss), evaluator,
                     None if out_dir is None else Path(out_dir), header, ByteTokenizer())


def finetune(model: Seq2SeqModel, segments: Sequence[Segment], tcfg: TrainConfig | None = None,
             evaluator: Evaluator | None = None, out_dir: str | Path | None = None,
             extra_meta: dict | None = None) -> TrainResult:
    """SLT-only finetuning on aligned segments; the model is updated in place.

    With an empty segment list the model is returned unchanged.
    """
    tcfg = tcfg or finetune_config()
    if not segments:
        tcfg = replace(tcfg, max_steps=0)
    examples = [segment_example(s.frames, s.sign_lang, s.tgt_lang, s.target) for s in segments]
    order_ss, drop_ss = np.random.SeedSequence(tcfg.seed).spawn(2)
    order_rng = np.random.default_rng(order_ss)
    pool: list[int] = []

    def next_batch() -> list[TaskExample]:
        # epoch-wise shuffling; batches may straddle epoch boundaries
        out = []
        while len(out) < tcfg.batch_size:
            if not pool:
                pool.extend(order_rng.permutation(len(examples)).tolist())
            out.append(examples[pool.pop()])
        return out

    header = {"stage": "finetune", "train": tcfg.to_json(), "model": model.cfg.to_json(),
              "n_segments": len(segments), **(extra_meta or {})}
    return _run_loop(model, tcfg, next_batch, np.random.default_rng(drop_ss), evaluator,
                     None if out_dir is None else Path(out_dir), header, ByteTokenizer())
