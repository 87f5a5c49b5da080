"""Synthetic signed-language testbed with exact MT oracles.

A toy sign language is a lexicon of G gestures, each rendered as k frames of a
fixed random 255-dim direction modulated by a half sine. Toy spoken languages
name gestures through a bijective word map and may reverse word order, so
translation between any two of them is exact and invertible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (
    LANDMARK_DIM,
    Caption,
    CaptionedVideo,
    CorpusManifest,
    LandmarkStream,
    MtPair,
    MtShard,
    VideoEntry,
    save_video,
    write_manifest,
    write_mt_corpus,
)
from .errors import ConfigError, OracleUndefined, UnknownGesture, UnknownWord
from .tasks import augment_video

TOY_FPS = 10.0
ORDERS = ("identity", "reversed")


@dataclass(frozen=True, eq=False)
class ToyLexicon:
    basis: np.ndarray  # (G, 255), unit rows
    frames_per_gesture: int = 10
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.frames_per_gesture < 2:
            raise ConfigError("frames_per_gesture must be >= 2")

    @classmethod
    def generate(cls, gesture_count: int = 16, frames_per_gesture: int = 10,
                 noise_sigma: float = 0.02, seed: int = 0) -> "ToyLexicon":
        rng = np.random.default_rng(seed)
        basis = rng.standard_normal((gesture_count, LANDMARK_DIM))
        basis /= np.linalg.norm(basis, axis=1, keepdims=True)
        return cls(basis, frames_per_gesture, noise_sigma)

    @property
    def gesture_count(self) -> int:
        return len(self.basis)

    @property
    def gesture_seconds(self) -> float:
        return self.frames_per_gesture / TOY_FPS


@dataclass(frozen=True)
class ToyLanguage:
    code: str
    word_map: tuple[str, ...]  # gesture id -> word
    order: str = "identity"

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ConfigError(f"order must be one of {ORDERS}, got {self.order!r}")
        if len(set(self.word_map)) != len(self.word_map):
            raise ConfigError(f"{self.code}: word map is not injective")
        if any(not w or any(ch.isspace() for ch in w) for w in self.word_map):
            raise ConfigError(f"{self.code}: words must be non-empty and whitespace-free")

    @classmethod
    def build(cls, code: str, prefix: str, gesture_count: int, order: str = "identity",
              perm: Sequence[int] | None = None, width: int = 0) -> "ToyLanguage":
        perm = range(gesture_count) if perm is None else perm
        return cls(code, tuple(f"{prefix}{p:0{width}d}" for p in perm), order)

    def words(self, gestures: Sequence[int]) -> list[str]:
        out = [self.word_map[g] for g in gestures]
        return out[::-1] if self.order == "reversed" else out

    def render(self, gestures: Sequence[int]) -> str:
        return " ".join(self.words(gestures))

    def parse(self, text: str) -> list[int]:
        """Inverse of :meth:`render`: gesture ids in signing order."""
        index = {w: g for g, w in enumerate(self.word_map)}
        try:
            ids = [index[w] for w in text.split()]
        except KeyError as exc:
            raise UnknownWord(exc.args[0]) from None
        return ids[::-1] if self.order == "reversed" else ids


def toy_mt(text: str, src: ToyLanguage, tgt: ToyLanguage) -> str:
    return tgt.render(src.parse(text))


def make_oracle(languages: Sequence[ToyLanguage]):
    """Wrap :func:`toy_mt` as a ``(text, src_code, tgt_code) -> text`` oracle."""
    by_code = {lang.code: lang for lang in languages}

    def oracle(text: str, src: str, tgt: str) -> str:
        if src not in by_code or tgt not in by_code:
            raise OracleUndefined(src, tgt)
        return toy_mt(text, by_code[src], by_code[tgt])

    return oracle


def render_sentence(gestures: Sequence[int], lex: ToyLexicon, rng: np.random.Generator) -> LandmarkStream:
    k = lex.frames_per_gesture
    if any(g < 0 or g >= lex.gesture_count for g in gestures):
        raise UnknownGesture(f"gesture ids must lie in [0, {lex.gesture_count})")
    if not gestures:
        return LandmarkStream(TOY_FPS, np.zeros((0, LANDMARK_DIM), np.float32))
    envelope = np.sin(np.pi * np.arange(k) / k)
    frames = (envelope[None, :, None] * lex.basis[list(gestures)][:, None, :]).reshape(-1, LANDMARK_DIM)
    if lex.noise_sigma > 0:
        frames = frames + rng.normal(0.0, lex.noise_sigma, frames.shape)
    return LandmarkStream(TOY_FPS, frames.astype(np.float32))


def gen_video(video_id: str, sign_lang: str, sentences: Sequence[Sequence[int]], lex: ToyLexicon,
              lang: ToyLanguage | Sequence[ToyLanguage], rng: np.random.Generator) -> CaptionedVideo:
    """Sign ``sentences`` back to back and caption each one in every language given."""
    langs = [lang] if isinstance(lang, ToyLanguage) else list(lang)
    parts, captions = [], []
    t = 0
    for sent in sentences:
        parts.append(render_sentence(sent, lex, rng).frames)
        start, end = t * lex.gesture_seconds, (t + len(sent)) * lex.gesture_seconds
        t += len(sent)
        if sent:
            captions.extend(Caption(start, end, lg.render(sent), lg.code) for lg in langs)
    frames = np.concatenate(parts) if parts else np.zeros((0, LANDMARK_DIM), np.float32)
    stream = LandmarkStream(TOY_FPS, frames)
    return CaptionedVideo(video_id, sign_lang, stream, tuple(captions), stream.duration_s)


@dataclass
class LanguageSpec:
    code: str
    prefix: str
    order: str = "identity"
    # share of gesture ids whose word number differs from the pivot's (0 = pure cognate)
    permute_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.permute_fraction <= 1.0:
            raise ConfigError(f"{self.code}: permute_fraction must lie in [0, 1]")


def partial_derangement(gesture_count: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Identity except on a random subset of ``round(fraction * G)`` ids, which are cycled.

    Every id in the subset moves, so exactly that many words are non-cognates.
    A subset of one cannot move and is treated as empty.
    """
    perm = np.arange(gesture_count)
    k = int(round(fraction * gesture_count))
    if k < 2:
        return perm
    subset = rng.permutation(gesture_count)[:k]
    perm[subset] = np.roll(subset, 1)
    return perm


def _default_languages() -> list[LanguageSpec]:
    return [
        LanguageSpec("en0", "w"),
        LanguageSpec("xa", "x", permute_fraction=0.5),
        LanguageSpec("xb", "v", permute_fraction=0.5),
        LanguageSpec("xc", "u"),
        LanguageSpec("xd", "t"),
    ]


@dataclass
class BenchmarkSpec:
    seed: int = 0
    n_train: int = 200
    n_dev: int = 20
    n_test: int = 20
    n_tune: int = 20
    gesture_count: int = 16
    frames_per_gesture: int = 10
    noise_sigma: float = 0.02
    sign_langs: list[str] = field(default_factory=lambda: ["sgn"])
    languages: list[LanguageSpec] = field(default_factory=_default_languages)
    pivot_lang: str = "en0"
    zero_shot_lang: str = "xa"
    # extra languages with genuine train captions; the zero-shot language must not be one
    seen_langs: list[str] = field(default_factory=lambda: ["xb", "xc", "xd"])
    # MT of the pivot captions; covering the seen languages too shows the model
    # genuine and augmented targets that differ only in the <aug> tag
    augment_langs: list[str] = field(default_factory=lambda: ["xa", "xb", "xc", "xd"])
    mt_pairs: list[tuple[str, str]] = field(
        default_factory=lambda: [("en0", "xa"), ("en0", "xb"), ("en0", "xc"), ("en0", "xd")])
    mt_count: int = 1000
    sentence_len: tuple[int, int] = (2, 4)
    sentences_per_video: tuple[int, int] = (2, 4)
    mt_sentence_len: tuple[int, int] = (1, 6)
    word_width: int = 2

    @classmethod
    def from_json(cls, data: dict) -> "BenchmarkSpec":
        data = dict(data)
        if "languages" in data:
            data["languages"] = [LanguageSpec(**d) for d in data["languages"]]
        for key in ("sentence_len", "sentences_per_video", "mt_sentence_len"):
            if key in data:
                data[key] = tuple(data[key])
        if "mt_pairs" in data:
            data["mt_pairs"] = [tuple(p) for p in data["mt_pairs"]]
        return cls(**data)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Benchmark:
    """Everything needed to regenerate or interpret a synthetic corpus."""

    spec: BenchmarkSpec
    lexicons: dict[str, ToyLexicon]
    languages: dict[str, ToyLanguage]

    @classmethod
    def from_spec(cls, spec: BenchmarkSpec) -> "Benchmark":
        root = np.random.SeedSequence(spec.seed)
        lex_seeds, lang_seeds = root.spawn(2)
        lexicons = {
            sl: ToyLexicon.generate(spec.gesture_count, spec.frames_per_gesture, spec.noise_sigma, int(s.generate_state(1)[0]))
            for sl, s in zip(spec.sign_langs, lex_seeds.spawn(len(spec.sign_langs)))
        }
        languages = {}
        for ls, s in zip(spec.languages, lang_seeds.spawn(len(spec.languages))):
            perm = partial_derangement(spec.gesture_count, ls.permute_fraction, np.random.default_rng(s))
            languages[ls.code] = ToyLanguage.build(ls.code, ls.prefix, spec.gesture_count, ls.order, perm, spec.word_width)
        if spec.pivot_lang not in languages or spec.zero_shot_lang not in languages:
            raise ConfigError("pivot and zero-shot languages must be among the benchmark languages")
        unknown = sorted((set(spec.seen_langs) | set(spec.augment_langs)) - set(languages))
        if unknown:
            raise ConfigError(f"seen/augment languages {unknown} are not among the benchmark languages")
        if spec.zero_shot_lang in spec.seen_langs or spec.zero_shot_lang == spec.pivot_lang:
            raise ConfigError(f"zero-shot language {spec.zero_shot_lang!r} must not have genuine train captions")
        return cls(spec, lexicons, languages)

    def oracle(self):
        return make_oracle(list(self.languages.values()))


SPLITS = ("train", "dev", "test", "tune")


def _random_sentence(rng: np.random.Generator, spec: BenchmarkSpec, bounds: tuple[int, int]) -> list[int]:
    n = int(rng.integers(bounds[0], bounds[1] + 1))
    return [int(g) for g in rng.integers(0, spec.gesture_count, n)]


def _augment_pivot(video: CaptionedVideo, oracle, pivot: str, langs: list[str]) -> CaptionedVideo:
    """Augment from the pivot captions only, keeping the other genuine captions as they are."""
    if not langs:
        return video
    pivot_only = video.with_captions(video.captions_for(pivot))
    added = [c for c in augment_video(pivot_only, oracle, langs).captions if c.augmented]
    return video.with_captions(video.captions + tuple(added))


def gen_benchmark(spec: BenchmarkSpec, out_dir: str | Path) -> CorpusManifest:
    """Write a complete synthetic corpus (videos, captions, MT TSVs, manifest, spec.json).

    Train videos carry genuine captions in the pivot and ``spec.seen_langs``,
    plus augmented captions (MT of the pivot captions) in ``spec.augment_langs``,
    which may overlap the genuine ones.
    The other splits carry genuine captions in every language, so the
    zero-shot direction has references outside of train.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bench = Benchmark.from_spec(spec)
    oracle = bench.oracle()
    pivot = bench.languages[spec.pivot_lang]
    train_langs = [pivot] + [bench.languages[c] for c in spec.seen_langs if c != pivot.code]
    all_langs = list(bench.languages.values())
    counts = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test, "tune": spec.n_tune}

    seq = np.random.SeedSequence(spec.seed).spawn(3)[2]
    video_seeds, mt_seed = seq.spawn(2)
    entries = []
    split_seeds = video_seeds.spawn(len(spec.sign_langs) * len(SPLITS))
    for i, sign in enumerate(spec.sign_langs):
        lex = bench.lexicons[sign]
        for j, split in enumerate(SPLITS):
            rng = np.random.default_rng(split_seeds[i * len(SPLITS) + j])
            for n in range(counts[split]):
                n_sent = int(rng.integers(spec.sentences_per_video[0], spec.sentences_per_video[1] + 1))
                sentences = [_random_sentence(rng, spec, spec.sentence_len) for _ in range(n_sent)]
                vid = f"{sign}-{split}-{n:04d}"
                if split == "train":
                    video = gen_video(vid, sign, sentences, lex, train_langs, rng)
                    video = _augment_pivot(video, oracle, pivot.code,
                                           [c for c in spec.augment_langs if c != pivot.code])
                else:
                    video = gen_video(vid, sign, sentences, lex, all_langs, rng)
                save_video(out, video)
                entries.append(VideoEntry(vid, sign, split, video.duration_s))

    shards = []
    (out / "mt").mkdir(exist_ok=True)
    for (src, tgt), s in zip(spec.mt_pairs, mt_seed.spawn(len(spec.mt_pairs))):
        rng = np.random.default_rng(s)
        pairs = []
        for _ in range(spec.mt_count):
            sent = _random_sentence(rng, spec, spec.mt_sentence_len)
            pairs.append(MtPair(bench.languages[src].render(sent), bench.languages[tgt].render(sent), src, tgt))
        rel = f"mt/{src}-{tgt}.tsv"
        write_mt_corpus(out / rel, pairs)
        shards.append(MtShard(src, tgt, rel, len(pairs)))

    manifest = CorpusManifest(entries, shards)
    write_manifest(out / "manifest.json", manifest)
    (out / "spec.json").write_text(json.dumps(spec.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def load_benchmark(corpus_dir: str | Path) -> Benchmark:
    data = json.loads((Path(corpus_dir) / "spec.json").read_text(encoding="utf-8"))
    return Benchmark.from_spec(BenchmarkSpec.from_json(data))
