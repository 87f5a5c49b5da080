"""On-disk corpus formats: caption JSONL, binary landmark streams, MT TSVs, manifest."""

from __future__ import annotations

import json
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DimMismatch, IntervalError, MalformedLine, TruncatedFile

LANDMARK_DIM = 255
LANDMARK_MAGIC = b"SLMK"
LANDMARK_VERSION = 1
_HEADER = struct.Struct("<4sIfII")

MANIFEST_VERSION = 1
DURATION_TOLERANCE_S = 0.5


@dataclass(frozen=True)
class Caption:
    start_s: float
    end_s: float
    text: str
    lang: str
    augmented: bool = False

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise IntervalError(f"caption interval [{self.start_s}, {self.end_s}] is empty")
        if self.start_s < 0:
            raise IntervalError(f"negative start {self.start_s}")
        if not self.text.strip():
            raise DataError("caption text is blank")

    def to_json(self) -> dict:
        return {
            "start_s": self.start_s,
            "end_s": self.end_s,
            "text": self.text,
            "lang": self.lang,
            "augmented": self.augmented,
        }


@dataclass(frozen=True, eq=False)
class LandmarkStream:
    fps: float
    frames: np.ndarray  # (n_frames, 255) float32

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            frames = frames.reshape(-1, LANDMARK_DIM)
        if frames.shape[1] != LANDMARK_DIM:
            raise DimMismatch(frames.shape[1])
        if not np.isfinite(frames).all():
            raise DataError("landmark frames contain non-finite values")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", frames)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.fps

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LandmarkStream):
            return NotImplemented
        return self.fps == other.fps and np.array_equal(self.frames, other.frames)


@dataclass(frozen=True, eq=False)
class CaptionedVideo:
    video_id: str
    sign_lang: str
    stream: LandmarkStream
    captions: tuple[Caption, ...]
    duration_s: float = -1.0

    def __post_init__(self):
        caps = tuple(sorted(self.captions, key=lambda c: c.start_s))
        object.__setattr__(self, "captions", caps)
        if self.duration_s < 0:
            object.__setattr__(self, "duration_s", self.stream.duration_s)
        for c in caps:
            if c.end_s > self.duration_s + 1e-9:
                raise IntervalError(
                    f"{self.video_id}: caption [{c.start_s}, {c.end_s}] exceeds duration {self.duration_s}"
                )

    def caption_sources(self) -> set[tuple[str, bool]]:
        """Every (language, augmented) combination present among the captions."""
        return {(c.lang, c.augmented) for c in self.captions}

    def captions_for(self, lang: str, augmented: bool | None = None) -> list[Caption]:
        return [
            c for c in self.captions
            if c.lang == lang and (augmented is None or c.augmented == augmented)
        ]

    def with_captions(self, captions: Iterable[Caption]) -> "CaptionedVideo":
        return replace(self, captions=tuple(captions))

    def __eq__(self, other) -> bool:
        if not isinstance(other, CaptionedVideo):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.sign_lang == other.sign_lang
            and self.captions == other.captions
            and self.stream == other.stream
        )


@dataclass(frozen=True)
class MtPair:
    src_text: str
    tgt_text: str
    src_lang: str
    tgt_lang: str

    def __post_init__(self):
        if self.src_lang == self.tgt_lang:
            raise DataError(f"MT pair with identical languages {self.src_lang}")
        if not self.src_text.strip() or not self.tgt_text.strip():
            raise DataError("MT pair with empty text")

    def reversed(self) -> "MtPair":
        return MtPair(self.tgt_text, self.src_text, self.tgt_lang, self.src_lang)


# -- captions -----------------------------------------------------------------

_REQUIRED = ("start_s", "end_s", "text", "lang")


def load_captions(path: str | Path) -> list[Caption]:
    captions = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, str(exc)) from None
            if not isinstance(rec, dict):
                raise MalformedLine(line_no, "not a JSON object")
            missing = [k for k in _REQUIRED if k not in rec]
            if missing:
                raise MalformedLine(line_no, f"missing {', '.join(missing)}")
            try:
                start, end = float(rec["start_s"]), float(rec["end_s"])
                text, lang = rec["text"], rec["lang"]
                augmented = rec.get("augmented", False)
            except (TypeError, ValueError) as exc:
                raise MalformedLine(line_no, str(exc)) from None
            if not isinstance(text, str) or not isinstance(lang, str) or not isinstance(augmented, bool):
                raise MalformedLine(line_no, "wrong field type")
            if not (math.isfinite(start) and math.isfinite(end)):
                raise MalformedLine(line_no, "non-finite timestamp")
            if start >= end:
                raise IntervalError(f"line {line_no}: start_s {start} >= end_s {end}")
            try:
                captions.append(Caption(start, end, text, lang, augmented))
            except IntervalError:
                raise
            except DataError as exc:
                raise MalformedLine(line_no, str(exc)) from None
    captions.sort(key=lambda c: c.start_s)
    return captions


def write_captions(path: str | Path, captions: Iterable[Caption]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in captions:
            fh.write(json.dumps(c.to_json(), ensure_ascii=False) + "\n")


# -- landmarks ----------------------------------------------------------------

def load_landmarks(path: str | Path) -> LandmarkStream:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}")
    magic, version, fps, dim, n_frames = _HEADER.unpack_from(raw)
    if magic != LANDMARK_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != LANDMARK_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if dim != LANDMARK_DIM:
        raise DimMismatch(dim)
    expected = _HEADER.size + 4 * dim * n_frames
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n_frames, dim)
    return LandmarkStream(float(fps), body.astype(np.float32))


def write_landmarks(path: str | Path, stream: LandmarkStream) -> None:
    frames = np.ascontiguousarray(stream.frames, dtype="<f4")
    header = _HEADER.pack(LANDMARK_MAGIC, LANDMARK_VERSION, stream.fps, LANDMARK_DIM, len(frames))
    Path(path).write_bytes(header + frames.tobytes())


# -- MT text ------------------------------------------------------------------

def load_mt_corpus(path: str | Path, src_lang: str, tgt_lang: str) -> list[MtPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise MalformedLine(line_no, f"expected 2 columns, found {len(cols)}")
            try:
                pairs.append(MtPair(cols[0], cols[1], src_lang, tgt_lang))
            except DataError as exc:
                raise MalformedLine(line_no, str(exc)) from None
    return pairs


def write_mt_corpus(path: str | Path, pairs: Iterable[MtPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.src_text}\t{p.tgt_text}\n")


# -- manifest -----------------------------------------------------------------

@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    sign_lang: str
    split: str
    duration_s: float


@dataclass(frozen=True)
class MtShard:
    src_lang: str
    tgt_lang: str
    path: str
    count: int


@dataclass
class CorpusManifest:
    videos: list[VideoEntry]
    mt_shards: list[MtShard]
    duration_totals: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.videos = sorted(self.videos, key=lambda v: v.video_id)
        computed = _duration_totals(self.videos)
        if not self.duration_totals:
            self.duration_totals = computed
            return
        for split, totals in computed.items():
            declared = self.duration_totals.get(split, {})
            for lang, total in totals.items():
                got = declared.get(lang)
                if got is None or abs(got - total) > 1e-6:
                    raise DataError(
                        f"manifest duration total for {split}/{lang} is {declared.get(lang)}, videos sum to {total}"
                    )

    def language_durations(self, split: str = "train") -> dict[str, float]:
        return dict(self.duration_totals.get(split, {}))

    def split(self, name: str) -> list[VideoEntry]:
        return [v for v in self.videos if v.split == name]

    def mt_counts(self) -> dict[tuple[str, str], int]:
        return {(s.src_lang, s.tgt_lang): s.count for s in self.mt_shards}

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "videos": [
                {
                    "video_id": v.video_id,
                    "sign_lang": v.sign_lang,
                    "split": v.split,
                    "duration_s": v.duration_s,
                    "captions": f"videos/{v.video_id}.captions.jsonl",
                    "landmarks": f"videos/{v.video_id}.lmk",
                }
                for v in self.videos
            ],
            "mt_shards": [
                {"src_lang": s.src_lang, "tgt_lang": s.tgt_lang, "path": s.path, "count": s.count}
                for s in self.mt_shards
            ],
            "duration_totals": self.duration_totals,
        }


def _duration_totals(videos: Sequence[VideoEntry]) -> dict[str, dict[str, float]]:
    acc: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for v in videos:
        acc[v.split][v.sign_lang].append(v.duration_s)
    return {s: {lang: math.fsum(ds) for lang, ds in sorted(per.items())} for s, per in sorted(acc.items())}


def write_manifest(path: str | Path, manifest: CorpusManifest) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> CorpusManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid manifest JSON: {exc}") from None
    if data.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {data.get('version')}")
    try:
        videos = [
            VideoEntry(v["video_id"], v["sign_lang"], v["split"], float(v["duration_s"]))
            for v in data["videos"]
        ]
        shards = [
            MtShard(s["src_lang"], s["tgt_lang"], s["path"], int(s["count"]))
            for s in data.get("mt_shards", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad manifest entry: {exc}") from None
    return CorpusManifest(videos, shards, data.get("duration_totals", {}))


def load_video(root: str | Path, entry: VideoEntry) -> CaptionedVideo:
    root = Path(root)
    stream = load_landmarks(root / "videos" / f"{entry.video_id}.lmk")
    if abs(stream.duration_s - entry.duration_s) > DURATION_TOLERANCE_S:
        raise DataError(
            f"{entry.video_id}: stream lasts {stream.duration_s:.3f}s, manifest declares {entry.duration_s:.3f}s"
        )
    captions = load_captions(root / "videos" / f"{entry.video_id}.captions.jsonl")
    # the header-derived duration is authoritative
    return CaptionedVideo(entry.video_id, entry.sign_lang, stream, tuple(captions), stream.duration_s)


def save_video(root: str | Path, video: CaptionedVideo) -> None:
    vdir = Path(root) / "videos"
    vdir.mkdir(parents=True, exist_ok=True)
    write_landmarks(vdir / f"{video.video_id}.lmk", video.stream)
    write_captions(vdir / f"{video.video_id}.captions.jsonl", video.captions)


@dataclass
class Corpus:
    """A fully loaded corpus directory."""

    root: Path
    manifest: CorpusManifest
    videos: dict[str, list[CaptionedVideo]]  # split -> videos sorted by id
    mt: dict[tuple[str, str], list[MtPair]]

    def split(self, name: str) -> list[CaptionedVideo]:
        return self.videos.get(name, [])


def load_corpus(root: str | Path, splits: Sequence[str] | None = None) -> Corpus:
    root = Path(root)
    manifest = load_manifest(root / "manifest.json")
    videos: dict[str, list[CaptionedVideo]] = defaultdict(list)
    for entry in manifest.videos:
        if splits is not None and entry.split not in splits:
            continue
        videos[entry.split].append(load_video(root, entry))
    mt = {}
    for shard in manifest.mt_shards:
        pairs = load_mt_corpus(root / shard.path, shard.src_lang, shard.tgt_lang)
        if len(pairs) != shard.count:
            raise DataError(f"{shard.path}: manifest says {shard.count} pairs, file has {len(pairs)}")
        mt[(shard.src_lang, shard.tgt_lang)] = pairs
    return Corpus(root, manifest, dict(videos), mt)
