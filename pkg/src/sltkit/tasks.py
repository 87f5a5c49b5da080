"""Task prompts and targets for SLT, alignment, MT and augmented SLT examples."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .clips import Clip
from .corpus import Caption, CaptionedVideo, MtPair
from .errors import MixedLanguage, OracleUndefined


class TaskKind(str, enum.Enum):
    SLT = "slt"
    ALIGN = "align"
    MT = "mt"
    AUG_SLT = "aug_slt"


SLT_TOKEN = "<slt>"
ALIGN_TOKEN = "<align>"
MT_TOKEN = "<mt>"
AUG_TOKEN = "<aug>"


@dataclass(frozen=True, eq=False)
class TaskExample:
    prompt_text: str
    frames: np.ndarray | None
    target_text: str
    task_kind: TaskKind
    direction: tuple[str, str]

    def __post_init__(self):
        needs_frames = self.task_kind is not TaskKind.MT
        if needs_frames != (self.frames is not None):
            raise ValueError(f"{self.task_kind.value} example frames presence is wrong")


def slt_prompt(sign_lang: str, tgt_lang: str, augmented: bool = False) -> str:
    tag = f"{SLT_TOKEN} {AUG_TOKEN}" if augmented else SLT_TOKEN
    return f"{tag} translate {sign_lang} to {tgt_lang}:"


def align_prompt(sign_lang: str, tgt_lang: str) -> str:
    return f"{ALIGN_TOKEN} align {sign_lang} captions in {tgt_lang}:"


def mt_prompt(src_lang: str, tgt_lang: str, src_text: str) -> str:
    return f"{MT_TOKEN} translate {src_lang} to {tgt_lang}: {src_text}"


def _check_covered(clip: Clip, tgt_lang: str, augmented: bool | None = None) -> None:
    for c in clip.covered:
        if c.lang != tgt_lang:
            raise MixedLanguage(f"{clip.video_id}: caption in {c.lang}, expected {tgt_lang}")
        if augmented is not None and c.augmented != augmented:
            raise MixedLanguage(f"{clip.video_id}: genuine and augmented captions mixed in one clip")


def build_slt(clip: Clip, sign_lang: str, tgt_lang: str, augmented: bool = False) -> TaskExample:
    _check_covered(clip, tgt_lang, augmented)
    target = " ".join(c.text for c in clip.covered)
    kind = TaskKind.AUG_SLT if augmented else TaskKind.SLT
    return TaskExample(slt_prompt(sign_lang, tgt_lang, augmented), clip.frames, target, kind, (sign_lang, tgt_lang))


def serialize_alignment_target(clip: Clip) -> str:
    return "\n".join(
        f"{c.start_s - clip.clip_start_s:.2f} {c.end_s - clip.clip_start_s:.2f} {c.text}"
        for c in clip.covered
    )


def build_alignment(clip: Clip, sign_lang: str, tgt_lang: str) -> TaskExample:
    _check_covered(clip, tgt_lang)
    return TaskExample(
        align_prompt(sign_lang, tgt_lang), clip.frames, serialize_alignment_target(clip),
        TaskKind.ALIGN, (sign_lang, tgt_lang),
    )


def build_mt(pair: MtPair) -> TaskExample:
    return TaskExample(
        mt_prompt(pair.src_lang, pair.tgt_lang, pair.src_text), None, pair.tgt_text,
        TaskKind.MT, (pair.src_lang, pair.tgt_lang),
    )


# (text, src_lang, tgt_lang) -> text; raises OracleUndefined for unsupported pairs
MtOracle = Callable[[str, str, str], str]


def augment_video(video: CaptionedVideo, oracle: MtOracle, tgt_langs: Sequence[str]) -> CaptionedVideo:
    """Add one machine-translated caption per (original caption, target language)."""
    if not tgt_langs:
        return video
    added: list[Caption] = []
    for cap in video.captions:
        if cap.augmented:
            continue
        for lang in tgt_langs:
            if lang == cap.lang:
                continue
            text = oracle(cap.text, cap.lang, lang)
            if text is None:
                raise OracleUndefined(cap.lang, lang)
            added.append(Caption(cap.start_s, cap.end_s, text, lang, augmented=True))
    return video.with_captions(video.captions + tuple(added))
