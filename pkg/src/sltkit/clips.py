"""Clip-level view of a captioned video: stride, random N-second windows, covered captions."""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Caption, CaptionedVideo, LandmarkStream
from .errors import ConfigError, EmptyVideo

log = logging.getLogger(__name__)

MAX_CLIP_FRAMES = 512


@dataclass(frozen=True)
class ClipConfig:
    clip_seconds: float = 34.0
    frame_stride: int = 2
    max_resample: int = 10
    max_frames: int = MAX_CLIP_FRAMES

    def __post_init__(self):
        if not self.clip_seconds > 0:
            raise ConfigError(f"clip_seconds must be positive, got {self.clip_seconds}")
        if self.frame_stride < 1:
            raise ConfigError(f"frame_stride must be >= 1, got {self.frame_stride}")
        if self.max_resample < 1:
            raise ConfigError(f"max_resample must be >= 1, got {self.max_resample}")


@dataclass(frozen=True, eq=False)
class Clip:
    video_id: str
    clip_start_s: float
    clip_end_s: float
    frames: np.ndarray
    covered: tuple[Caption, ...]
    fps: float = 0.0


def downsample_frames(stream: LandmarkStream, stride: int) -> LandmarkStream:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if stride == 1:
        return stream
    return LandmarkStream(stream.fps / stride, stream.frames[::stride])


def covered_captions(captions: Sequence[Caption], clip_start_s: float, clip_end_s: float) -> list[Caption]:
    """Captions whose whole closed interval lies inside ``[clip_start_s, clip_end_s]``.

    ``captions`` must be sorted by start time; a bisection skips the ones that
    begin before the window.
    """
    starts = [c.start_s for c in captions]
    lo = bisect.bisect_left(starts, clip_start_s)
    out = []
    for c in captions[lo:]:
        if c.start_s > clip_end_s:
            break
        if c.end_s <= clip_end_s:
            out.append(c)
    return out


def clip_window(video: CaptionedVideo, start_s: float, cfg: ClipConfig,
                captions: Sequence[Caption] | None = None) -> Clip:
    """Cut the clip starting at ``start_s`` (stride applied to the whole stream first)."""
    if len(video.stream) == 0:
        raise EmptyVideo(video.video_id)
    stream = downsample_frames(video.stream, cfg.frame_stride)
    end_s = min(start_s + cfg.clip_seconds, video.duration_s)
    first = int(np.ceil(start_s * stream.fps - 1e-9))
    last = int(np.ceil(end_s * stream.fps - 1e-9))
    frames = stream.frames[first:max(last, first)]
    if len(frames) > cfg.max_frames:
        frames = frames[: cfg.max_frames]
    caps = video.captions if captions is None else captions
    return Clip(video.video_id, start_s, end_s, frames, tuple(covered_captions(caps, start_s, end_s)), stream.fps)


def sample_clip(video: CaptionedVideo, cfg: ClipConfig, rng: np.random.Generator,
                captions: Sequence[Caption] | None = None) -> Clip:
    """Draw a random ``cfg.clip_seconds`` window and the captions it fully covers.

    ``captions`` restricts coverage to a subset (one target language); it
    defaults to all of the video's captions. Windows without any covered
    caption are redrawn up to ``cfg.max_resample`` times.
    """
    if len(video.stream) == 0:
        raise EmptyVideo(video.video_id)
    slack = max(0.0, video.duration_s - cfg.clip_seconds)
    clip = None
    for _ in range(cfg.max_resample):
        start = float(rng.uniform(0.0, slack)) if slack > 0 else 0.0
        clip = clip_window(video, start, cfg, captions)
        if clip.covered or slack == 0:
            return clip
    log.debug("clip from %s has no covered caption after %d draws", video.video_id, cfg.max_resample)
    return clip


def caption_segment(video: CaptionedVideo, caption: Caption, cfg: ClipConfig) -> np.ndarray:
    """Post-stride frames spanning exactly one caption, used as an aligned evaluation segment."""
    stream = downsample_frames(video.stream, cfg.frame_stride)
    first = int(np.ceil(caption.start_s * stream.fps - 1e-9))
    last = int(np.ceil(caption.end_s * stream.fps - 1e-9))
    return stream.frames[first:max(last, first)][: cfg.max_frames]
