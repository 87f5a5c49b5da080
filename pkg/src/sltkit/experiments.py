"""Ablation playbooks over the synthetic benchmark, shared by the CLI and the acceptance suite.

Each playbook trains a handful of small models and returns per-seed scores.
Runs are memoized per context, so playbooks that share a configuration (the
p_mt=0.5 model serves the transfer, zero-shot, sweep and finetuning
playbooks) train it once.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .clips import ClipConfig
from .corpus import Corpus, load_corpus
from .decode import DecodeConfig, cascade_texts, decode_batch, segment_example
from .errors import ConfigError
from .metrics import EvalReport, EvalRow, bleu, chrf
from .mixture import MixtureConfig, preset
from .model.network import Seq2SeqModel, model_preset
from .model.tokenizer import ByteTokenizer
from .synth import Benchmark, load_benchmark
from .training import (
    Segment, TrainConfig, corpus_segments, evaluate_segments, finetune, finetune_config,
    make_dev_evaluator, pretrain,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Budget:
    """Compute budget for desk-scale runs, sized so the acceptance suite fits a single CPU core."""

    unit_steps: int = 2000  # baseline pretraining steps
    batch_size: int = 32
    learning_rate: float = 3e-3
    eval_every: int = 500
    seeds: tuple[int, ...] = (0, 1, 2)
    model: str = "tiny"
    dev_max_len: int = 64
    test_beam: int = 5
    finetune_steps: int = 300
    finetune_eval_every: int = 50
    finetune_segments: int = 50
    pmt_values: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9)
    size_presets: tuple[str, ...] = ("tiny", "small")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class PretrainRun:
    name: str
    seed: int
    steps: int
    mixture: MixtureConfig
    model: Seq2SeqModel  # dev-selected checkpoint
    best_step: int
    dev: dict[str, dict]  # direction -> {"bleu", "chrf"}
    log: list[dict] = field(default_factory=list)


class ExperimentContext:
    """A loaded benchmark plus evaluation segments and a run cache."""

    def __init__(self, corpus_dir: str | Path, budget: Budget = Budget(), out_dir: str | Path | None = None):
        self.corpus_dir = Path(corpus_dir)
        self.corpus: Corpus = load_corpus(self.corpus_dir)
        self.bench: Benchmark = load_benchmark(self.corpus_dir)
        self.budget = budget
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.clip_cfg = ClipConfig()
        spec = self.bench.spec
        self.sign = spec.sign_langs[0]
        self.pivot = spec.pivot_lang
        self.zero_shot = spec.zero_shot_lang
        dirs = [(self.sign, self.pivot), (self.sign, self.zero_shot)]
        self.dev = corpus_segments(self.corpus, "dev", self.clip_cfg, dirs)
        self.test = corpus_segments(self.corpus, "test", self.clip_cfg, dirs)
        tune = corpus_segments(self.corpus, "tune", self.clip_cfg, [(self.sign, self.zero_shot)])
        self.tune = tune[(self.sign, self.zero_shot)][: budget.finetune_segments]
        self._runs: dict[tuple, PretrainRun] = {}
        self._evaluator = make_dev_evaluator(self.dev, DecodeConfig(beam_size=1, max_len=budget.dev_max_len))

    # -- helpers ------------------------------------------------------------------

    def direction(self, tgt: str) -> str:
        return f"{self.sign}->{tgt}"

    def _run_dir(self, *parts) -> Path | None:
        return None if self.out_dir is None else self.out_dir.joinpath(*map(str, parts))

    def pretrain(self, name: str, mix: MixtureConfig, steps: int, seed: int, model: str | None = None) -> PretrainRun:
        model = model or self.budget.model
        key = (json.dumps(mix.to_json(), sort_keys=True), steps, seed, model)
        if key in self._runs:
            return self._runs[key]
        b = self.budget
        tcfg = TrainConfig(batch_size=b.batch_size, learning_rate=b.learning_rate, max_steps=steps, seed=seed,
                           eval_every=b.eval_every, log_every=b.eval_every)
        net = Seq2SeqModel(model_preset(model), seed=seed)
        log.info("pretrain %s seed=%d steps=%d model=%s", name, seed, steps, model)
        res = pretrain(net, self.corpus, mix, tcfg, self.clip_cfg, self._evaluator,
                       self._run_dir(name, f"seed{seed}"), {"run": name, "seed": seed})
        dev = self._evaluator(res.best)["directions"]
        run = PretrainRun(name, seed, steps, mix, res.best, res.best_step, dev, res.log)
        self._runs[key] = run
        return run

    def test_scores(self, model: Seq2SeqModel, tgt: str, beam: int | None = None) -> dict:
        segs = {(self.sign, tgt): self.test[(self.sign, tgt)]}
        cfg = DecodeConfig(beam_size=beam or self.budget.test_beam, max_len=self.budget.dev_max_len)
        res = evaluate_segments(model, segs, cfg)[(self.sign, tgt)]
        return {"bleu": res["bleu"], "chrf": res["chrf"]}

    def cascade_scores(self, model: Seq2SeqModel, tgt: str) -> dict:
        """Video -> pivot text -> oracle MT, scored against the ``tgt`` references."""
        segs = self.test[(self.sign, tgt)]
        cfg = DecodeConfig(beam_size=self.budget.test_beam, max_len=self.budget.dev_max_len)
        pivots = decode_batch(model, [segment_example(s.frames, self.sign, self.pivot) for s in segs], ByteTokenizer(), cfg)
        hyps = cascade_texts(pivots, self.pivot, tgt, self.bench.oracle())
        refs = [s.target for s in segs]
        return {"bleu": bleu(hyps, refs), "chrf": chrf(hyps, refs)}

    def finetune(self, run: PretrainRun, segments: Sequence[Segment] | None = None) -> Seq2SeqModel:
        segments = self.tune if segments is None else segments
        b = self.budget
        model = run.model.copy()
        dev = {(self.sign, self.zero_shot): self.dev[(self.sign, self.zero_shot)]}
        ev = make_dev_evaluator(dev, DecodeConfig(beam_size=1, max_len=b.dev_max_len))
        tcfg = finetune_config(max_steps=b.finetune_steps, seed=run.seed, eval_every=b.finetune_eval_every,
                               log_every=b.finetune_eval_every)
        res = finetune(model, segments, tcfg, ev, self._run_dir(run.name, f"seed{run.seed}", "finetune"),
                       {"run": run.name, "seed": run.seed})
        return res.best

    # -- mixtures -----------------------------------------------------------------

    def mt_mixture(self, p_mt: float) -> MixtureConfig:
        return preset("baseline+mt", p_mt=p_mt)


@dataclass
class ExperimentResult:
    name: str
    # arm -> per-seed scores, e.g. {"baseline": [81.2, 84.0, 79.9]}
    scores: dict[str, list[float]]
    metric: str
    report: EvalReport = field(default_factory=lambda: EvalReport([]))
    notes: list[str] = field(default_factory=list)

    def means(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.scores.items()}

    def render(self) -> str:
        lines = [f"[{self.name}] {self.metric}"]
        for arm, vals in self.scores.items():
            lines.append(f"  {arm:<28} mean {np.mean(vals):6.2f}  per-seed " + " ".join(f"{v:6.2f}" for v in vals))
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"name": self.name, "metric": self.metric, "scores": self.scores, "means": self.means(),
                "notes": self.notes}


def _row(ctx: ExperimentContext, direction: str, stage: str, seed: int, sc: dict, ckpt: str) -> EvalRow:
    return EvalRow(ctx.corpus_dir.name, direction, stage, seed, sc["bleu"], sc["chrf"], ckpt)


def exp_learnability(ctx: ExperimentContext) -> ExperimentResult:
    b = ctx.budget
    runs = [ctx.pretrain("baseline", preset("baseline"), b.unit_steps, s) for s in b.seeds]
    d = ctx.direction(ctx.pivot)
    return ExperimentResult("learnability", {"baseline": [r.dev[d]["chrf"] for r in runs]}, f"dev ChrF {d}")


def exp_mt_transfer(ctx: ExperimentContext, p_mt: float = 0.5) -> ExperimentResult:
    """Baseline vs Baseline+MT at an equal number of SLT examples.

    The MT arm trains ``unit_steps / (1 - p_mt)`` steps, so its expected SLT
    example count matches the baseline's.
    """
    b = ctx.budget
    d = ctx.direction(ctx.pivot)
    steps = int(round(b.unit_steps / (1.0 - p_mt)))
    base = [ctx.pretrain("baseline", preset("baseline"), b.unit_steps, s) for s in b.seeds]
    mt = [ctx.pretrain(f"baseline+mt-p{p_mt}", ctx.mt_mixture(p_mt), steps, s) for s in b.seeds]
    return ExperimentResult("mt-transfer", {"baseline": [r.dev[d]["chrf"] for r in base],
                                            f"baseline+mt (p_mt={p_mt})": [r.dev[d]["chrf"] for r in mt]},
                            f"dev ChrF {d}")


def exp_zero_shot(ctx: ExperimentContext, p_mt: float = 0.5, with_finetune: bool = True,
                  with_cascade: bool = True) -> ExperimentResult:
    """Zero-shot video->B from SLT on other languages plus MT; optional finetuning and cascade arms."""
    b = ctx.budget
    d = ctx.direction(ctx.zero_shot)
    steps = int(round(b.unit_steps / (1.0 - p_mt)))
    scores: dict[str, list[float]] = {"baseline": [], f"zero-shot (p_mt={p_mt})": []}
    rows = []
    if with_cascade:
        scores[f"cascade via {ctx.pivot}"] = []
    if with_finetune:
        scores["zero-shot + finetune"] = []
    for s in b.seeds:
        base = ctx.pretrain("baseline", preset("baseline"), b.unit_steps, s)
        zs = ctx.pretrain(f"baseline+mt-p{p_mt}", ctx.mt_mixture(p_mt), steps, s)
        sb, sz = ctx.test_scores(base.model, ctx.zero_shot), ctx.test_scores(zs.model, ctx.zero_shot)
        scores["baseline"].append(sb["chrf"])
        scores[f"zero-shot (p_mt={p_mt})"].append(sz["chrf"])
        rows.append(_row(ctx, d, "pretrain", s, sz, f"baseline+mt-p{p_mt}"))
        sp = ctx.test_scores(zs.model, ctx.pivot)
        rows.append(_row(ctx, ctx.direction(ctx.pivot), "pretrain", s, sp, f"baseline+mt-p{p_mt}"))
        if with_cascade:
            sc = ctx.cascade_scores(zs.model, ctx.zero_shot)
            scores[f"cascade via {ctx.pivot}"].append(sc["chrf"])
            rows.append(_row(ctx, f"{d} (cascade via {ctx.pivot})", "pretrain", s, sc, f"baseline+mt-p{p_mt}"))
        if with_finetune:
            ft = ctx.finetune(zs)
            sf = ctx.test_scores(ft, ctx.zero_shot)
            scores["zero-shot + finetune"].append(sf["chrf"])
            rows.append(_row(ctx, d, "finetune", s, sf, f"baseline+mt-p{p_mt}+ft"))
            rows.append(_row(ctx, ctx.direction(ctx.pivot), "finetune", s,
                             ctx.test_scores(ft, ctx.pivot), f"baseline+mt-p{p_mt}+ft"))
    return ExperimentResult("zero-shot", scores, f"test ChrF {d}", EvalReport(rows))


def exp_augmentation(ctx: ExperimentContext, p_mt: float = 0.5, with_mt_aug: bool = True) -> ExperimentResult:
    """Baseline+Augmented SLT against the zero-shot model at the same number of training steps.

    The zero-shot model is the one from :func:`exp_zero_shot`, trained for
    ``unit_steps / (1 - p_mt)`` steps; the augmented arm gets as many steps.
    ``with_mt_aug`` adds Baseline+MT+Augmented SLT at the same budget for reference.
    """
    b = ctx.budget
    d = ctx.direction(ctx.zero_shot)
    steps = int(round(b.unit_steps / (1.0 - p_mt)))
    scores: dict[str, list[float]] = {"baseline+aug": [], f"zero-shot (p_mt={p_mt})": []}
    if with_mt_aug:
        scores[f"baseline+mt+aug (p_mt={p_mt})"] = []
    for s in b.seeds:
        a = ctx.pretrain("baseline+aug", preset("baseline+aug"), steps, s)
        z = ctx.pretrain(f"baseline+mt-p{p_mt}", ctx.mt_mixture(p_mt), steps, s)
        scores["baseline+aug"].append(ctx.test_scores(a.model, ctx.zero_shot)["chrf"])
        scores[f"zero-shot (p_mt={p_mt})"].append(ctx.test_scores(z.model, ctx.zero_shot)["chrf"])
        if with_mt_aug:
            m = ctx.pretrain(f"baseline+mt+aug-p{p_mt}", preset("baseline+mt+aug", p_mt=p_mt), steps, s)
            scores[f"baseline+mt+aug (p_mt={p_mt})"].append(ctx.test_scores(m.model, ctx.zero_shot)["chrf"])
    return ExperimentResult("augmentation", scores, f"test ChrF {d} at {steps} steps")


def exp_pmt_sweep(ctx: ExperimentContext, total_steps: int | None = None) -> ExperimentResult:
    """Zero-shot quality as a function of p_mt at a fixed total step budget."""
    b = ctx.budget
    total = total_steps or 2 * b.unit_steps
    d = ctx.direction(ctx.zero_shot)
    scores = {}
    for p in b.pmt_values:
        name = f"baseline+mt-p{p}"
        scores[f"p_mt={p}"] = [ctx.test_scores(ctx.pretrain(name, ctx.mt_mixture(p), total, s).model,
                                               ctx.zero_shot)["chrf"] for s in b.seeds]
    return ExperimentResult("pmt-sweep", scores, f"test ChrF {d} at {total} steps")


def exp_size_sweep(ctx: ExperimentContext, p_mt: float = 0.5) -> ExperimentResult:
    b = ctx.budget
    steps = int(round(b.unit_steps / (1.0 - p_mt)))
    scores = {}
    for size in b.size_presets:
        runs = [ctx.pretrain(f"baseline+mt-p{p_mt}-{size}", ctx.mt_mixture(p_mt), steps, s, model=size)
                for s in b.seeds]
        scores[f"{size} {ctx.pivot}"] = [ctx.test_scores(r.model, ctx.pivot)["chrf"] for r in runs]
        scores[f"{size} {ctx.zero_shot}"] = [ctx.test_scores(r.model, ctx.zero_shot)["chrf"] for r in runs]
    return ExperimentResult("size-sweep", scores, "test ChrF")


EXPERIMENTS: dict[str, Callable[[ExperimentContext], ExperimentResult]] = {
    "exp:mt-transfer": exp_mt_transfer,
    "exp:zero-shot": exp_zero_shot,
    "exp:augmentation": exp_augmentation,
    "exp:pmt-sweep": exp_pmt_sweep,
    "exp:size-sweep": exp_size_sweep,
}


def run_experiment(name: str, ctx: ExperimentContext) -> ExperimentResult:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[name](ctx)
