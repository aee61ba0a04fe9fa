"""Core data model and file IO: segments, embeddings and RTTM annotations."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CountMismatchError,
    DimensionMismatchError,
    FormatError,
    InvalidSegmentError,
    NonFiniteError,
)

logger = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"XVE1"
SEGMENTS_HEADER = ("recording_id", "channel", "onset", "duration")
# tolerance for comparing times built from repeated float arithmetic
TIME_EPS = 1e-9


@dataclass(frozen=True)
class TimedSegment:
    recording_id: str
    channel: int
    onset: float
    duration: float

    def __post_init__(self):
        if not self.recording_id:
            raise InvalidSegmentError("empty recording id")
        if self.channel < 0:
            raise InvalidSegmentError(f"negative channel {self.channel}")
        if not (math.isfinite(self.onset) and math.isfinite(self.duration)):
            raise InvalidSegmentError("non-finite segment time")
        if self.onset < 0:
            raise InvalidSegmentError(f"negative onset {self.onset}")
        if self.duration <= 0:
            raise InvalidSegmentError(f"non-positive duration {self.duration}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Time-stamped embeddings for one channel of one or more recordings.

    Row ``i`` of ``vectors`` belongs to ``segments[i]``. The array is stored
    as float64 and flagged read-only.
    """

    segments: tuple[TimedSegment, ...]
    vectors: np.ndarray

    def __post_init__(self):
        segments = tuple(self.segments)
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatchError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[0] != len(segments):
            raise CountMismatchError(
                f"{len(segments)} segments but {vectors.shape[0]} vectors")
        if not np.all(np.isfinite(vectors)):
            raise NonFiniteError("embedding vectors contain NaN or Inf")
        keys = [(s.recording_id, s.onset) for s in segments]
        if any(a > b for a, b in zip(keys, keys[1:])):
            raise InvalidSegmentError("segments must be sorted by (recording_id, onset)")
        vectors.setflags(write=False)
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "vectors", vectors)

    def __len__(self):
        return len(self.segments)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def recording_ids(self) -> list[str]:
        return list(dict.fromkeys(s.recording_id for s in self.segments))

    def with_vectors(self, vectors) -> "EmbeddingSet":
        return EmbeddingSet(self.segments, vectors)

    def split_by_recording(self) -> dict[str, "EmbeddingSet"]:
        out = {}
        idx = np.arange(len(self.segments))
        for rec, group in groupby(idx, key=lambda i: self.segments[i].recording_id):
            rows = list(group)
            out[rec] = EmbeddingSet(tuple(self.segments[i] for i in rows), self.vectors[rows])
        return out


@dataclass(frozen=True)
class Turn:
    """One RTTM speaker turn."""

    recording_id: str
    onset: float
    duration: float
    speaker: str

    def __post_init__(self):
        if not self.speaker:
            raise InvalidSegmentError("empty speaker label")
        if not self.duration > 0:
            raise InvalidSegmentError(f"non-positive duration {self.duration}")
        if self.onset < 0:
            raise InvalidSegmentError(f"negative onset {self.onset}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True)
class Annotation:
    """Diarization output: timed, possibly overlapping speaker turns."""

    turns: tuple[Turn, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))

    def __len__(self):
        return len(self.turns)

    def __iter__(self):
        return iter(self.turns)

    @property
    def recording_ids(self) -> list[str]:
        return list(dict.fromkeys(t.recording_id for t in self.turns))

    @property
    def speakers(self) -> list[str]:
        return sorted({t.speaker for t in self.turns})

    def for_recording(self, recording_id: str) -> "Annotation":
        return Annotation(tuple(t for t in self.turns if t.recording_id == recording_id))

    def sorted(self) -> "Annotation":
        return Annotation(tuple(sorted(self.turns, key=lambda t: (t.recording_id, t.onset, t.speaker))))

    def __add__(self, other: "Annotation") -> "Annotation":
        return Annotation(self.turns + other.turns)


# ---------------------------------------------------------------------------
# Segments TSV
# ---------------------------------------------------------------------------

def write_segments(segments: Iterable[TimedSegment], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(SEGMENTS_HEADER) + "\n")
        for s in segments:
            f.write(f"{s.recording_id}\t{s.channel}\t{s.onset!r}\t{s.duration!r}\n")


def read_segments(path) -> list[TimedSegment]:
    segments = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if lineno == 1 and tuple(parts) == SEGMENTS_HEADER:
                continue
            if len(parts) != 4:
                raise FormatError(f"expected 4 tab-separated columns, got {len(parts)}", lineno)
            rec, chan, onset, dur = parts
            try:
                segments.append(TimedSegment(rec, int(chan), float(onset), float(dur)))
            except ValueError as e:
                raise FormatError(str(e), lineno) from None
    return segments


# ---------------------------------------------------------------------------
# Embedding vectors (binary)
# ---------------------------------------------------------------------------

def write_vectors(vectors: np.ndarray, path) -> None:
    """Write ``XVE1`` + u32 N + u32 D + N*D little-endian float32, row-major."""
    vectors = np.asarray(vectors)
    if vectors.ndim != 2:
        raise DimensionMismatchError(f"vectors must be 2-D, got shape {vectors.shape}")
    n, d = vectors.shape
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(struct.pack("<II", n, d))
        f.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())


def read_vectors(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: missing {EMBEDDING_MAGIC!r} header")
    n, d = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * n * d
    if len(data) != expected:
        raise DimensionMismatchError(
            f"{path}: header says {n}x{d} ({expected} bytes) but file has {len(data)} bytes")
    vectors = np.frombuffer(data, dtype="<f4", offset=12, count=n * d).reshape(n, d)
    return vectors.astype(np.float64)


def read_embeddings(segments_path, vectors_path) -> EmbeddingSet:
    segments = read_segments(segments_path)
    vectors = read_vectors(vectors_path)
    if len(segments) != vectors.shape[0]:
        raise CountMismatchError(
            f"{segments_path} has {len(segments)} segments, {vectors_path} has {vectors.shape[0]} vectors")
    return EmbeddingSet(tuple(segments), vectors)


def write_embeddings(embeddings: EmbeddingSet, segments_path, vectors_path) -> None:
    write_segments(embeddings.segments, segments_path)
    write_vectors(embeddings.vectors, vectors_path)


# ---------------------------------------------------------------------------
# RTTM
# ---------------------------------------------------------------------------

def format_rttm_line(turn: Turn) -> str:
    return (f"SPEAKER {turn.recording_id} 1 {turn.onset:.3f} {turn.duration:.3f} "
            f"<NA> <NA> {turn.speaker} <NA> <NA>")


def write_rttm(annotation: Annotation, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for turn in annotation.turns:
            f.write(format_rttm_line(turn) + "\n")


def parse_rttm(lines: Iterable[str]) -> Annotation:
    turns = []
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "SPEAKER":
            raise FormatError(f"expected record type SPEAKER, got {parts[0]!r}", lineno)
        if len(parts) < 8:
            raise FormatError(f"expected at least 8 fields, got {len(parts)}", lineno)
        try:
            onset, duration = float(parts[3]), float(parts[4])
        except ValueError:
            raise FormatError("onset/duration are not numbers", lineno) from None
        if duration < 0:
            raise FormatError(f"negative duration {duration}", lineno)
        if duration == 0:
            logger.warning("RTTM line %d has zero duration; skipped", lineno)
            continue
        try:
            turns.append(Turn(parts[1], onset, duration, parts[7]))
        except InvalidSegmentError as e:
            raise FormatError(str(e), lineno) from None
    return Annotation(tuple(turns))


def read_rttm(path) -> Annotation:
    with open(path, encoding="utf-8") as f:
        return parse_rttm(f)


# ---------------------------------------------------------------------------
# Sub-segmentation and timeline helpers
# ---------------------------------------------------------------------------

def uniform_subsegments(speech_regions: Sequence[TimedSegment], window: float = 1.5,
                        step: float = 0.25) -> list[TimedSegment]:
    """Cut speech regions into overlapping fixed-length windows.

    Windows start every ``step`` seconds and are truncated at the region end.
    A trailing window shorter than ``step`` is absorbed by its predecessor,
    and a region shorter than ``window`` becomes a single sub-segment.
    """
    if window <= 0:
        raise InvalidSegmentError(f"window must be positive, got {window}")
    if step <= 0 or step > window:
        raise InvalidSegmentError(f"step must be in (0, window], got {step}")
    out = []
    for region in sorted(speech_regions, key=lambda s: (s.recording_id, s.onset)):
        end = region.offset
        if region.duration <= window + TIME_EPS:
            out.append(region)
            continue
        pieces = []
        k = 0
        while True:
            start = region.onset + k * step
            if start >= end - TIME_EPS:
                break
            stop = min(start + window, end)
            if stop - start < step - TIME_EPS and pieces:
                prev_start, prev_stop = pieces[-1]
                pieces[-1] = (prev_start, max(prev_stop, stop))
            else:
                pieces.append((start, stop))
            k += 1
        out.extend(TimedSegment(region.recording_id, region.channel, a, b - a) for a, b in pieces)
    return out


def effective_boundaries(segments: Sequence[TimedSegment]) -> np.ndarray:
    """Non-overlapping (start, end) per segment using the midpoint rule.

    Where consecutive segments of the same recording overlap, the boundary
    is moved to the middle of the overlap. Gaps are left alone.
    """
    bounds = np.array([[s.onset, s.offset] for s in segments], dtype=np.float64).reshape(-1, 2)
    for i in range(len(segments) - 1):
        a, b = segments[i], segments[i + 1]
        if a.recording_id != b.recording_id:
            continue
        if a.offset > b.onset:
            mid = 0.5 * (a.offset + b.onset)
            bounds[i, 1] = mid
            bounds[i + 1, 0] = mid
    # sub-segments fully nested in a neighbour's overlap can end up inverted
    bounds[:, 1] = np.maximum(bounds[:, 0], bounds[:, 1])
    return bounds


def labels_to_annotation(segments: Sequence[TimedSegment], labels: Sequence,
                         label_names=None) -> Annotation:
    """Turn per-segment labels into merged speaker turns (midpoint rule).

    Adjacent segments with the same label whose effective intervals touch
    are merged into one turn. ``label_names`` (a callable or mapping) turns
    a label into its speaker string; by default ``str(label)`` is used.
    """
    if len(segments) != len(labels):
        raise CountMismatchError(f"{len(segments)} segments but {len(labels)} labels")
    bounds = effective_boundaries(segments)
    turns = []
    cur = None  # [rec, start, end, label]
    for seg, (start, end), lab in zip(segments, bounds, labels):
        if end - start <= 0:
            continue
        if (cur is not None and cur[0] == seg.recording_id and cur[3] == lab
                and abs(cur[2] - start) <= TIME_EPS):
            cur[2] = end
            continue
        if cur is not None:
            turns.append(cur)
        cur = [seg.recording_id, start, end, lab]
    if cur is not None:
        turns.append(cur)
    if label_names is None:
        name = str
    elif callable(label_names):
        name = label_names
    else:
        name = label_names.__getitem__
    return Annotation(tuple(Turn(rec, float(s), float(e - s), name(lab)) for rec, s, e, lab in turns))
