"""Command-line pipeline: gen, pretrain, finetune, translate, eval, report and exp.

Every option can also come from a JSON file passed with ``--config``; keys
use the option's long name with dashes turned into underscores, and flags
given on the command line win. Exit status: 0 success, 1 usage or config
error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .clips import ClipConfig, downsample_frames
from .corpus import load_corpus, load_landmarks
from .decode import DecodeConfig, cascade_texts, decode_batch, segment_example, translate_segment
from .errors import ConfigError, DataError, SltError
from .metrics import (
    EvalReport, bleu, chrf, EvalRow, comparison_csv, merge_reports, read_report, render_table, stage_correlations,
)
from .mixture import PRESETS as MIXTURE_PRESETS
from .mixture import MixtureConfig, preset
from .model.checkpoint import load_checkpoint
from .model.network import MODEL_PRESETS, ModelConfig, Seq2SeqModel, model_preset
from .model.tokenizer import ByteTokenizer
from .synth import BenchmarkSpec, gen_benchmark, load_benchmark
from .training import (
    TrainConfig, corpus_segments, evaluate_segments, finetune, finetune_config, make_dev_evaluator, pretrain,
)

log = logging.getLogger("sltkit")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 rather than argparse's 2 (which means data error here)."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _parse_direction(text: str) -> tuple[str, str]:
    parts = text.split("->")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"direction must look like 'sgn->en0', got {text!r}")
    return parts[0], parts[1]


def _directions(value: Any) -> list[tuple[str, str]] | None:
    if value is None:
        return None
    items = value.split(",") if isinstance(value, str) else list(value)
    return [_parse_direction(x.strip()) for x in items if x.strip()]


# -- configuration ----------------------------------------------------------------------

# defaults per command; the config file and then the command line override them
_DEFAULTS: dict[str, dict[str, Any]] = {
    "common": {"seed": 0, "out": None},
    "gen": {},
    "pretrain": {
        "corpus": None, "mixture": "baseline+mt", "p_mt": None, "align_weight": None, "mt_temperature": None,
        "augmented": None, "mt_directions": None, "model": "tiny", "max_steps": 20000, "batch_size": 256,
        "learning_rate": 1e-3, "optimizer": "adam", "eval_every": 1000, "log_every": 100, "dropout": None,
        "dev_directions": None, "dev_split": "dev", "dev_max_len": 64,
    },
    "finetune": {
        "corpus": None, "checkpoint": None, "split": "tune", "direction": None, "max_segments": 50,
        "max_steps": 1000, "batch_size": 32, "learning_rate": 5e-4, "optimizer": "adam", "eval_every": 100,
        "log_every": 50, "dev_split": "dev", "dev_max_len": 64,
    },
    "translate": {"checkpoint": None, "lmk": None, "sign_lang": "sgn", "tgt_lang": "en0",
                  "beam_size": 5, "max_len": 512, "length_penalty": 0.0},
    "eval": {"checkpoint": None, "corpus": None, "split": "test", "directions": None, "stage": "pretrain",
             "cascade": None, "benchmark": None, "report": None, "beam_size": 5, "max_len": 512,
             "length_penalty": 0.0},
    "report": {"reports": None},
    "exp": {"name": None, "corpus": None, "seeds": None, "unit_steps": None, "batch_size": None,
            "learning_rate": None},
}


@dataclass
class RunConfig:
    """Fully resolved settings of one command; written next to its outputs."""

    command: str
    seed: int
    out: Path | None
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if self.values.get(k) in (None, "")]
        if missing:
            raise ConfigError(f"{self.command}: missing required option(s) "
                              + ", ".join("--" + k.replace("_", "-") for k in missing))

    def require_paths(self, *keys: str) -> None:
        for k in keys:
            if not Path(self.values[k]).exists():
                raise ConfigError(f"{self.command}: --{k.replace('_', '-')} path {self.values[k]} does not exist")

    def to_json(self) -> dict:
        return {"command": self.command, "seed": self.seed, "out": None if self.out is None else str(self.out),
                **{k: (str(v) if isinstance(v, Path) else v) for k, v in self.values.items()}}

    def mixture(self) -> MixtureConfig:
        over = {k: self.values[k] for k in ("p_mt", "align_weight", "mt_temperature", "augmented")
                if self.values.get(k) is not None}
        dirs = _directions(self.values.get("mt_directions"))
        if dirs is not None:
            over["mt_directions"] = frozenset(dirs)
        return preset(self.values["mixture"], **over)

    def model_config(self) -> ModelConfig:
        over = {} if self.values.get("dropout") is None else {"dropout": float(self.values["dropout"])}
        return model_preset(self.values["model"], **over)

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(batch_size=int(v["batch_size"]), learning_rate=float(v["learning_rate"]),
                           max_steps=int(v["max_steps"]), seed=self.seed, optimizer=v["optimizer"],
                           eval_every=int(v["eval_every"]), log_every=int(v["log_every"]))

    def decode_config(self) -> DecodeConfig:
        v = self.values
        return DecodeConfig(int(v["beam_size"]), int(v["max_len"]), float(v["length_penalty"]))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def resolve(args: argparse.Namespace) -> RunConfig:
    cmd = args.command
    file_cfg = _load_config_file(args.config)
    merged = {**_DEFAULTS["common"], **_DEFAULTS.get(cmd, {})}
    if cmd == "gen":
        merged.update({k: None for k in asdict(BenchmarkSpec()) if k != "seed"})
    for k in list(merged):
        if k in file_cfg:
            merged[k] = file_cfg[k]
        cli = getattr(args, k, None)
        if cli is not None:
            merged[k] = cli
    seed = int(merged.pop("seed"))
    out = merged.pop("out")
    return RunConfig(cmd, seed, None if out is None else Path(out), merged)


# -- commands --------------------------------------------------------------------

def cmd_gen(rc: RunConfig) -> int:
    rc.out or _fail("gen: --out is required")
    fields = {k: v for k, v in rc.values.items() if v is not None}
    fields["seed"] = rc.seed
    spec = BenchmarkSpec.from_json(fields)
    manifest = gen_benchmark(spec, rc.out)
    print(f"wrote {len(manifest.videos)} videos and {len(manifest.mt_shards)} MT shards to {rc.out}")
    return 0


def _default_dev_directions(corpus_dir: Path, corpus) -> list[tuple[str, str]]:
    spec_file = corpus_dir / "spec.json"
    if spec_file.exists():
        spec = load_benchmark(corpus_dir).spec
        return [(spec.sign_langs[0], spec.pivot_lang), (spec.sign_langs[0], spec.zero_shot_lang)]
    return sorted({(v.sign_lang, c.lang) for v in corpus.split("dev") for c in v.captions if not c.augmented})


def _write_run_json(rc: RunConfig) -> None:
    rc.out.mkdir(parents=True, exist_ok=True)
    (rc.out / "run.json").write_text(json.dumps(rc.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_pretrain(rc: RunConfig) -> int:
    rc.require("corpus")
    rc.out or _fail("pretrain: --out is required")
    rc.require_paths("corpus")
    if rc["mixture"] not in MIXTURE_PRESETS:
        raise ConfigError(f"unknown mixture {rc['mixture']!r}; choose from {sorted(MIXTURE_PRESETS)}")
    if rc["model"] not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset {rc['model']!r}; choose from {sorted(MODEL_PRESETS)}")
    mix, mcfg, tcfg = rc.mixture(), rc.model_config(), rc.train_config()
    corpus_dir = Path(rc["corpus"])
    corpus = load_corpus(corpus_dir, ["train", rc["dev_split"]])
    dirs = _directions(rc["dev_directions"]) or _default_dev_directions(corpus_dir, corpus)
    dev = corpus_segments(corpus, rc["dev_split"], ClipConfig(), dirs)
    evaluator = make_dev_evaluator(dev, DecodeConfig(beam_size=1, max_len=int(rc["dev_max_len"])))
    _write_run_json(rc)
    model = Seq2SeqModel(mcfg, seed=rc.seed)
    res = pretrain(model, corpus, mix, tcfg, ClipConfig(), evaluator, rc.out, {"run": rc.to_json()})
    best = "n/a" if res.best_score is None else f"{res.best_score:.2f}"
    print(f"pretrained {tcfg.max_steps} steps; best dev ChrF {best} at step {res.best_step}; outputs in {rc.out}")
    return 0


def cmd_finetune(rc: RunConfig) -> int:
    rc.require("corpus", "checkpoint", "direction")
    rc.out or _fail("finetune: --out is required")
    rc.require_paths("corpus", "checkpoint")
    model, _ = load_checkpoint(rc["checkpoint"])
    direction = _parse_direction(rc["direction"])
    corpus = load_corpus(rc["corpus"], [rc["split"], rc["dev_split"]])
    segs = corpus_segments(corpus, rc["split"], ClipConfig(), [direction])[direction][: int(rc["max_segments"])]
    dev = corpus_segments(corpus, rc["dev_split"], ClipConfig(), [direction])
    evaluator = make_dev_evaluator(dev, DecodeConfig(beam_size=1, max_len=int(rc["dev_max_len"])))
    tcfg = finetune_config(**{k: v for k, v in asdict(rc.train_config()).items()})
    _write_run_json(rc)
    res = finetune(model, segs, tcfg, evaluator, rc.out, {"run": rc.to_json()})
    best = "n/a" if res.best_score is None else f"{res.best_score:.2f}"
    print(f"finetuned on {len(segs)} segments; best dev ChrF {best} at step {res.best_step}; outputs in {rc.out}")
    return 0


def cmd_translate(rc: RunConfig) -> int:
    rc.require("checkpoint", "lmk")
    rc.require_paths("checkpoint", "lmk")
    model, _ = load_checkpoint(rc["checkpoint"])
    cfg = ClipConfig()
    frames = downsample_frames(load_landmarks(rc["lmk"]), cfg.frame_stride).frames[: cfg.max_frames]
    print(translate_segment(model, frames, rc["sign_lang"], rc["tgt_lang"], rc.decode_config()))
    return 0


def _parse_cascade(value: str | None) -> str | None:
    if value is None:
        return None
    key, _, lang = value.partition("=")
    if key != "pivot" or not lang:
        raise ConfigError(f"--cascade expects pivot=<lang>, got {value!r}")
    return lang


def cmd_eval(rc: RunConfig) -> int:
    rc.require("checkpoint", "corpus")
    rc.require_paths("checkpoint", "corpus")
    if rc["stage"] not in ("pretrain", "finetune"):
        raise ConfigError(f"--stage must be pretrain or finetune, got {rc['stage']!r}")
    pivot = _parse_cascade(rc["cascade"])
    corpus_dir = Path(rc["corpus"])
    model, _ = load_checkpoint(rc["checkpoint"])
    corpus = load_corpus(corpus_dir, [rc["split"]])
    dirs = _directions(rc["directions"]) or _default_dev_directions(corpus_dir, corpus)
    segs = corpus_segments(corpus, rc["split"], ClipConfig(), dirs)
    dcfg = rc.decode_config()
    results = evaluate_segments(model, segs, dcfg)
    bench = rc["benchmark"] or corpus_dir.name
    ckpt = str(rc["checkpoint"])
    rows = [EvalRow(bench, f"{s}->{t}", rc["stage"], rc.seed, r["bleu"], r["chrf"], ckpt)
            for (s, t), r in results.items()]
    if pivot is not None:
        if not (corpus_dir / "spec.json").exists():
            raise DataError("--cascade needs a synthetic benchmark (spec.json) to supply the MT oracle")
        oracle = load_benchmark(corpus_dir).oracle()
        tok = ByteTokenizer()
        for (s, t), seg_list in segs.items():
            if t == pivot:
                continue
            pivots = decode_batch(model, [segment_example(x.frames, s, pivot) for x in seg_list], tok, dcfg)
            hyps = cascade_texts(pivots, pivot, t, oracle)
            refs = [x.target for x in seg_list]
            rows.append(EvalRow(bench, f"{s}->{t} (cascade via {pivot})", rc["stage"], rc.seed,
                                bleu(hyps, refs), chrf(hyps, refs), ckpt))
    report = EvalReport(rows)
    print(report.to_csv(), end="")
    path = rc["report"] or (None if rc.out is None else rc.out / "report.csv")
    if path is not None:
        report.write(path, append=True)
        Path(str(path) + ".run.json").write_text(json.dumps(rc.to_json(), indent=1, sort_keys=True) + "\n")
    return 0


def cmd_report(rc: RunConfig) -> int:
    rc.require("reports")
    paths: list[Path] = []
    for item in (rc["reports"] if isinstance(rc["reports"], list) else [rc["reports"]]):
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.csv")))
        elif p.exists():
            paths.append(p)
        else:
            raise ConfigError(f"report path {p} does not exist")
    if not paths:
        raise DataError("no report CSV files found")
    report = merge_reports(read_report(p) for p in paths)
    stages = {r.stage for r in report.rows}
    if not {"pretrain", "finetune"} <= stages:
        log.warning("reports hold only %s rows; the stage comparison will be one-sided", sorted(stages))
    print(render_table(report), end="")
    for c in stage_correlations(report):
        print(c.render())
    if rc.out is not None:
        rc.out.mkdir(parents=True, exist_ok=True)
        (rc.out / "comparison.csv").write_text(comparison_csv(report))
        (rc.out / "table.txt").write_text(render_table(report))
        (rc.out / "correlations.json").write_text(json.dumps(
            [asdict(c) for c in stage_correlations(report)], indent=1) + "\n")
    return 0


def cmd_exp(rc: RunConfig) -> int:
    from .experiments import EXPERIMENTS, Budget, ExperimentContext, run_experiment

    rc.require("name", "corpus")
    if rc["name"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {rc['name']!r}; choose from {sorted(EXPERIMENTS)}")
    corpus_dir = Path(rc["corpus"])
    if not (corpus_dir / "manifest.json").exists():
        log.info("generating the default benchmark in %s", corpus_dir)
        gen_benchmark(BenchmarkSpec(seed=rc.seed), corpus_dir)
    over: dict[str, Any] = {}
    if rc["seeds"] is not None:
        seeds = rc["seeds"]
        over["seeds"] = tuple(int(s) for s in (seeds.split(",") if isinstance(seeds, str) else seeds))
    for k in ("unit_steps", "batch_size", "learning_rate"):
        if rc[k] is not None:
            over[k] = type(getattr(Budget(), k))(rc[k])
    ctx = ExperimentContext(corpus_dir, Budget(**over), rc.out)
    result = run_experiment(rc["name"], ctx)
    print(result.render())
    if rc.out is not None:
        rc.out.mkdir(parents=True, exist_ok=True)
        (rc.out / "result.json").write_text(json.dumps({**result.to_json(), "budget": ctx.budget.to_json(),
                                                        "run": rc.to_json()}, indent=1) + "\n")
        if result.report.rows:
            result.report.write(rc.out / "report.csv")
    return 0


def _fail(msg: str):
    raise ConfigError(msg)


COMMANDS = {"gen": cmd_gen, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "translate": cmd_translate,
            "eval": cmd_eval, "report": cmd_report, "exp": cmd_exp}


# -- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys provide option values")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="sltkit", description="Multi-task sign language translation toolkit.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate the synthetic benchmark")
    for name, typ in (("n_train", int), ("n_dev", int), ("n_test", int), ("n_tune", int),
                      ("gesture_count", int), ("frames_per_gesture", int), ("noise_sigma", float),
                      ("mt_count", int)):
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)

    def add_train(sp):
        sp.add_argument("--corpus", help="corpus directory")
        sp.add_argument("--max-steps", dest="max_steps", type=int)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
        sp.add_argument("--optimizer", choices=["adam", "adafactor"])
        sp.add_argument("--eval-every", dest="eval_every", type=int)
        sp.add_argument("--log-every", dest="log_every", type=int)
        sp.add_argument("--dev-split", dest="dev_split")
        sp.add_argument("--dev-max-len", dest="dev_max_len", type=int)

    pt = sub.add_parser("pretrain", parents=[common], help="multi-task pretraining")
    add_train(pt)
    pt.add_argument("--mixture", help=f"mixture preset: {', '.join(MIXTURE_PRESETS)}")
    pt.add_argument("--p-mt", dest="p_mt", type=float)
    pt.add_argument("--align-weight", dest="align_weight", type=float)
    pt.add_argument("--mt-temperature", dest="mt_temperature", type=float)
    pt.add_argument("--augmented", action=argparse.BooleanOptionalAction, default=None)
    pt.add_argument("--mt-directions", dest="mt_directions", help="comma-separated, e.g. en0->xa,xa->en0")
    pt.add_argument("--model", help=f"model preset: {', '.join(MODEL_PRESETS)}")
    pt.add_argument("--dropout", type=float)
    pt.add_argument("--dev-directions", dest="dev_directions", help="comma-separated, e.g. sgn->en0,sgn->xa")

    ft = sub.add_parser("finetune", parents=[common], help="SLT finetuning on aligned segments")
    add_train(ft)
    ft.add_argument("--checkpoint")
    ft.add_argument("--split")
    ft.add_argument("--direction", help="e.g. sgn->xa")
    ft.add_argument("--max-segments", dest="max_segments", type=int)

    tr = sub.add_parser("translate", parents=[common], help="translate one .lmk landmark file")
    tr.add_argument("--checkpoint")
    tr.add_argument("lmk", nargs="?", help="landmark file")
    tr.add_argument("--sign-lang", dest="sign_lang")
    tr.add_argument("--tgt-lang", dest="tgt_lang")
    tr.add_argument("--beam-size", dest="beam_size", type=int)
    tr.add_argument("--max-len", dest="max_len", type=int)
    tr.add_argument("--length-penalty", dest="length_penalty", type=float)

    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint on a corpus split")
    ev.add_argument("--checkpoint")
    ev.add_argument("--corpus")
    ev.add_argument("--split")
    ev.add_argument("--directions", help="comma-separated, e.g. sgn->en0,sgn->xa")
    ev.add_argument("--stage", choices=["pretrain", "finetune"])
    ev.add_argument("--cascade", help="pivot=<lang>: add cascaded rows through the MT oracle")
    ev.add_argument("--benchmark", help="benchmark name for the report (default: corpus dir name)")
    ev.add_argument("--report", help="CSV file to append rows to (default: OUT/report.csv)")
    ev.add_argument("--beam-size", dest="beam_size", type=int)
    ev.add_argument("--max-len", dest="max_len", type=int)
    ev.add_argument("--length-penalty", dest="length_penalty", type=float)

    rp = sub.add_parser("report", parents=[common], help="tables and stage correlations from report CSVs")
    rp.add_argument("reports", nargs="*", default=None, help="report CSV files or directories")

    ex = sub.add_parser("exp", parents=[common], help="run an ablation playbook on the synthetic benchmark")
    ex.add_argument("name", nargs="?", help="one of exp:mt-transfer, exp:zero-shot, exp:augmentation, "
                                             "exp:pmt-sweep, exp:size-sweep")
    ex.add_argument("--corpus", help="benchmark directory (generated when missing)")
    ex.add_argument("--seeds", help="comma-separated model seeds (default 0,1,2)")
    ex.add_argument("--unit-steps", dest="unit_steps", type=int)
    ex.add_argument("--batch-size", dest="batch_size", type=int)
    ex.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "report" and not args.reports:
            args.reports = None
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s: %(message)s")
        rc = resolve(args)
        return COMMANDS[args.command](rc)
    except SltError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
