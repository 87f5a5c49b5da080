"""Pretraining data mixtures over SLT, alignment, MT and augmented SLT.

Per step: MT with probability ``p_mt``; otherwise alignment with probability
``align_weight`` and SLT (or augmented SLT) for the rest. Sign languages are
drawn in proportion to their total video duration, MT language pairs by
temperature sampling over example counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .clips import ClipConfig, sample_clip
from .corpus import Corpus, CaptionedVideo, MtPair
from .errors import ConfigError, EmptyInventory
from .tasks import TaskExample, TaskKind, build_alignment, build_mt, build_slt


@dataclass(frozen=True)
class MixtureConfig:
    p_mt: float = 0.9
    align_weight: float = 0.04
    mt_temperature: float = 5.0
    augmented: bool = False
    # enabled (src, tgt) MT directions; None enables both directions of every shard
    mt_directions: frozenset[tuple[str, str]] | None = None
    # sign language -> caption languages usable as SLT targets; None means all in the corpus
    slt_target_langs: Mapping[str, Sequence[str]] | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_mt <= 1.0:
            raise ConfigError(f"p_mt must lie in [0, 1], got {self.p_mt}")
        if not 0.0 <= self.align_weight <= 1.0:
            raise ConfigError(f"align_weight must lie in [0, 1], got {self.align_weight}")
        if not self.mt_temperature >= 1.0:
            raise ConfigError(f"mt_temperature must be >= 1, got {self.mt_temperature}")
        if self.mt_directions is not None:
            object.__setattr__(self, "mt_directions", frozenset(tuple(d) for d in self.mt_directions))

    def to_json(self) -> dict:
        return {
            "p_mt": self.p_mt,
            "align_weight": self.align_weight,
            "mt_temperature": self.mt_temperature,
            "augmented": self.augmented,
            "mt_directions": None if self.mt_directions is None else sorted(list(d) for d in self.mt_directions),
            "slt_target_langs": None if self.slt_target_langs is None else {
                k: list(v) for k, v in sorted(self.slt_target_langs.items())
            },
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "MixtureConfig":
        data = dict(data)
        if data.get("mt_directions") is not None:
            data["mt_directions"] = frozenset(tuple(d) for d in data["mt_directions"])
        return cls(**data)


PRESETS = {
    "baseline": dict(p_mt=0.0, augmented=False),
    "baseline+mt": dict(p_mt=0.9, augmented=False),
    "baseline+aug": dict(p_mt=0.0, augmented=True),
    "baseline+mt+aug": dict(p_mt=0.9, augmented=True),
}


def preset(name: str, **overrides) -> MixtureConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown mixture preset {name!r}; choose from {sorted(PRESETS)}")
    return MixtureConfig(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class MixtureDraw:
    task_kind: TaskKind
    source: str  # sign language, or MT source language
    target_lang: str


def temperature_weights(counts: Mapping, temperature: float) -> dict:
    """``p_l = n_l^(1/T) / sum_m n_m^(1/T)``."""
    if not counts:
        raise EmptyInventory("no languages to sample from")
    if temperature < 1:
        raise ConfigError(f"temperature must be >= 1, got {temperature}")
    if any(n <= 0 for n in counts.values()):
        raise ConfigError("all counts must be positive")
    # scale by the max count first so the result depends on ratios only
    top = max(counts.values())
    powered = {k: math.exp(math.log(n / top) / temperature) for k, n in counts.items()}
    total = math.fsum(powered.values())
    return {k: v / total for k, v in powered.items()}


@dataclass
class Inventory:
    """What a corpus split offers to the sampler, precomputed once."""

    # sign language -> total duration
    durations: dict[str, float]
    # sign language -> {caption language: provenances present, genuine (False) first}
    caption_langs: dict[str, dict[str, tuple[bool, ...]]]
    # unordered MT pair (as stored) -> count
    mt_counts: dict[tuple[str, str], int] = field(default_factory=dict)

    @classmethod
    def from_corpus(cls, corpus: Corpus, split: str = "train") -> "Inventory":
        videos = corpus.split(split)
        durations: dict[str, float] = {}
        found: dict[str, dict[str, set[bool]]] = {}
        for v in videos:
            durations[v.sign_lang] = durations.get(v.sign_lang, 0.0) + v.duration_s
            per = found.setdefault(v.sign_lang, {})
            for lang, aug in v.caption_sources():
                per.setdefault(lang, set()).add(aug)
        langs = {s: {lang: tuple(sorted(flags)) for lang, flags in per.items()} for s, per in found.items()}
        return cls(durations, langs, {k: len(v) for k, v in corpus.mt.items()})


def _mt_options(cfg: MixtureConfig, inv: Inventory) -> dict[tuple[str, str], list[tuple[str, str]]]:
    """Stored pair -> enabled directions for it, in a fixed order."""
    out = {}
    for pair in sorted(inv.mt_counts):
        dirs = [pair, (pair[1], pair[0])]
        if cfg.mt_directions is not None:
            dirs = [d for d in dirs if d in cfg.mt_directions]
        if dirs:
            out[pair] = dirs
    return out


class MixtureSampler:
    """Draws task/language decisions step by step from one random stream."""

    def __init__(self, cfg: MixtureConfig, inventory: Inventory):
        self.cfg = cfg
        self.inventory = inventory
        self._mt_dirs = _mt_options(cfg, inventory)
        if cfg.p_mt > 0:
            if not self._mt_dirs:
                raise EmptyInventory("MT branch enabled but no MT directions are available")
            weights = temperature_weights({p: inventory.mt_counts[p] for p in self._mt_dirs}, cfg.mt_temperature)
            self._mt_pairs = list(self._mt_dirs)
            self._mt_probs = np.array([weights[p] for p in self._mt_pairs])
        # sign language -> [(caption language, usable provenances)]
        self._slt_targets: dict[str, list[tuple[str, tuple[bool, ...]]]] = {}
        for sign, langs in sorted(inventory.caption_langs.items()):
            allowed = None if cfg.slt_target_langs is None else set(cfg.slt_target_langs.get(sign, ()))
            targets = []
            for lang, flags in sorted(langs.items()):
                usable = tuple(f for f in flags if cfg.augmented or not f)
                if usable and (allowed is None or lang in allowed):
                    targets.append((lang, usable))
            if targets:
                self._slt_targets[sign] = targets
        if cfg.p_mt < 1:
            if not self._slt_targets:
                raise EmptyInventory("SLT branch enabled but no sign language has usable captions")
            self._signs = sorted(self._slt_targets)
            dur = np.array([inventory.durations[s] for s in self._signs], dtype=np.float64)
            if not (dur > 0).all():
                raise EmptyInventory("sign language with zero total duration")
            self._sign_probs = dur / dur.sum()

    def next_draw(self, rng: np.random.Generator) -> MixtureDraw:
        cfg = self.cfg
        if cfg.p_mt > 0 and rng.random() < cfg.p_mt:
            pair = self._mt_pairs[int(rng.choice(len(self._mt_pairs), p=self._mt_probs))]
            dirs = self._mt_dirs[pair]
            src, tgt = dirs[int(rng.integers(len(dirs)))]
            return MixtureDraw(TaskKind.MT, src, tgt)
        align = rng.random() < cfg.align_weight
        sign = self._signs[int(rng.choice(len(self._signs), p=self._sign_probs))]
        targets = self._slt_targets[sign]
        genuine = [lang for lang, flags in targets if False in flags]
        # alignment needs real timestamps, so it only uses genuine captions
        if align and genuine:
            lang = genuine[int(rng.integers(len(genuine)))]
            return MixtureDraw(TaskKind.ALIGN, sign, lang)
        lang, flags = targets[int(rng.integers(len(targets)))]
        # the language is uniform; a second draw picks the provenance only when both exist
        aug = flags[int(rng.integers(len(flags)))] if len(flags) > 1 else flags[0]
        return MixtureDraw(TaskKind.AUG_SLT if aug else TaskKind.SLT, sign, lang)


def next_draw(cfg: MixtureConfig, inventory: Inventory, rng: np.random.Generator) -> MixtureDraw:
    return MixtureSampler(cfg, inventory).next_draw(rng)


class ExampleSource:
    """Turns draws into concrete :class:`TaskExample` objects from a loaded corpus."""

    def __init__(self, corpus: Corpus, clip_cfg: ClipConfig, split: str = "train"):
        self.clip_cfg = clip_cfg
        self.mt: dict[tuple[str, str], list[MtPair]] = corpus.mt
        self._videos: dict[tuple[str, str, bool], list[CaptionedVideo]] = {}
        self._weights: dict[tuple[str, str, bool], np.ndarray] = {}
        for v in corpus.split(split):
            for lang, aug in sorted(v.caption_sources()):
                self._videos.setdefault((v.sign_lang, lang, aug), []).append(v)
        for key, vids in self._videos.items():
            d = np.array([v.duration_s for v in vids])
            self._weights[key] = d / d.sum()

    def make_example(self, draw: MixtureDraw, rng: np.random.Generator) -> TaskExample:
        if draw.task_kind is TaskKind.MT:
            key = (draw.source, draw.target_lang)
            if key in self.mt:
                pairs, flip = self.mt[key], False
            elif key[::-1] in self.mt:
                pairs, flip = self.mt[key[::-1]], True
            else:
                raise EmptyInventory(f"no MT data for {key[0]}->{key[1]}")
            pair = pairs[int(rng.integers(len(pairs)))]
            return build_mt(pair.reversed() if flip else pair)
        aug = draw.task_kind is TaskKind.AUG_SLT
        key = (draw.source, draw.target_lang, aug)
        if key not in self._videos:
            raise EmptyInventory(f"no videos for {draw.source}->{draw.target_lang} (augmented={aug})")
        vids = self._videos[key]
        video = vids[int(rng.choice(len(vids), p=self._weights[key]))]
        clip = sample_clip(video, self.clip_cfg, rng, video.captions_for(draw.target_lang, aug))
        if draw.task_kind is TaskKind.ALIGN:
            return build_alignment(clip, draw.source, draw.target_lang)
        return build_slt(clip, draw.source, draw.target_lang, augmented=aug)


def with_overrides(cfg: MixtureConfig, **kw) -> MixtureConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
