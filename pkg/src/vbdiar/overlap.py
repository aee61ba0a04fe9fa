"""Overlapped-speech detection on embeddings and second-speaker assignment."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import DimensionMismatchError, FormatError, SingleClassError, DiarizationError
from .types_io import TIME_EPS, Annotation, EmbeddingSet, TimedSegment, Turn, effective_boundaries

FRAME = 0.01
OVERLAP_LABELS = {"overlap": True, "clean": False}


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.array(np.atleast_1d(self.weights), dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or not np.isfinite(self.bias):
            raise DiarizationError("logistic model parameters must be a finite vector and bias")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise DimensionMismatchError(f"model dim {self.dim}, data dim {x.shape[1]}")
        return expit(x @ self.weights + self.bias)


@dataclass(frozen=True)
class OverlapSegment:
    recording_id: str
    onset: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise DiarizationError(f"non-positive overlap duration {self.duration}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


def _as_bool_labels(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in OVERLAP_LABELS:
                raise DiarizationError(f"overlap label must be 'overlap' or 'clean', got {lab!r}")
            out.append(OVERLAP_LABELS[lab])
        else:
            out.append(bool(lab))
    return np.array(out, dtype=bool)


def _objective(params, x, y, l2):
    w, b = params[:-1], params[-1]
    z = x @ w + b
    # y in {-1, +1}; log(1 + exp(-y z)) computed stably
    loss = np.mean(np.logaddexp(0.0, -y * z)) + 0.5 * l2 * (w @ w)
    coef = -y * expit(-y * z) / len(y)
    return loss, np.append(x.T @ coef + l2 * w, coef.sum())


def train_overlap_classifier(data: EmbeddingSet, labels, l2: float = 1e-2, tol: float = 1e-8,
                             max_iter: int = 1000, return_trace: bool = False):
    """L2-regularised logistic regression (bias unpenalised) fitted by L-BFGS.

    ``labels`` are booleans or the strings ``"overlap"`` / ``"clean"``.
    With ``return_trace`` the objective after every iteration is returned too.
    """
    y_bool = _as_bool_labels(labels)
    if len(y_bool) != len(data):
        raise DimensionMismatchError(f"{len(data)} embeddings but {len(y_bool)} labels")
    if y_bool.all() or not y_bool.any():
        raise SingleClassError("overlap classifier needs both overlap and clean examples")
    x = data.vectors
    y = np.where(y_bool, 1.0, -1.0)
    x0 = np.zeros(x.shape[1] + 1)
    trace = [_objective(x0, x, y, l2)[0]]
    result = minimize(_objective, x0, args=(x, y, l2), jac=True, method="L-BFGS-B",
                      callback=lambda p: trace.append(_objective(p, x, y, l2)[0]),
                      options={"gtol": tol, "ftol": 0.0, "maxiter": max_iter})
    model = LogisticModel(result.x[:-1], result.x[-1])
    return (model, trace) if return_trace else model


def _merge_marked(segments: Sequence[TimedSegment], marked: np.ndarray) -> list[OverlapSegment]:
    bounds = effective_boundaries(segments)
    out = []
    cur = None
    for seg, (start, end), flag in zip(segments, bounds, marked):
        if not flag or end <= start:
            continue
        if cur is not None and cur[0] == seg.recording_id and abs(cur[2] - start) <= TIME_EPS:
            cur[2] = end
            continue
        if cur is not None:
            out.append(OverlapSegment(cur[0], cur[1], cur[2] - cur[1]))
        cur = [seg.recording_id, start, end]
    if cur is not None:
        out.append(OverlapSegment(cur[0], cur[1], cur[2] - cur[1]))
    return out


def detect_overlap(model: LogisticModel, data: EmbeddingSet, prob_threshold: float = 0.5) -> list[OverlapSegment]:
    """Mark sub-segments with ``P(overlap) >= prob_threshold`` and merge
    neighbouring marks (midpoint boundaries between overlapping windows)."""
    if data.dim != model.dim:
        raise DimensionMismatchError(f"model dim {model.dim}, data dim {data.dim}")
    if len(data) == 0:
        return []
    marked = model.predict_proba(data.vectors) >= prob_threshold
    return _merge_marked(data.segments, marked)


def _frame_edges(onset: float, offset: float, frame: float) -> np.ndarray:
    n = max(1, int(np.ceil((offset - onset) / frame - 1e-6)))
    edges = np.round(onset + frame * np.arange(n + 1), 9)
    edges[-1] = offset
    return edges


def _distances(centers: np.ndarray, turns) -> np.ndarray:
    lo = np.array([t.onset for t in turns])
    hi = np.array([t.offset for t in turns])
    c = centers[:, None]
    gap = np.where(c < lo, lo - c, np.where(c >= hi, c - hi, 0.0))
    return gap.min(axis=1)


def assign_second_speaker(diarization: Annotation, overlaps: Sequence[OverlapSegment],
                          frame: float = FRAME) -> Annotation:
    """Label every frame of each overlap segment with its two temporally
    closest speakers.

    Distance from a frame centre to a speaker is 0 inside one of its turns
    and the gap to the nearest turn edge otherwise; ties go to the lower
    speaker label. Existing turns are kept, new ones are only added.
    """
    added = []
    for ov in overlaps:
        turns = [t for t in diarization if t.recording_id == ov.recording_id]
        speakers = sorted({t.speaker for t in turns})
        if len(speakers) < 2:
            continue
        edges = _frame_edges(ov.onset, ov.offset, frame)
        centers = 0.5 * (edges[:-1] + edges[1:])
        dist = np.stack([_distances(centers, [t for t in turns if t.speaker == s]) for s in speakers], axis=1)
        closest = np.argsort(dist, axis=1, kind="stable")[:, :2]
        for k, spk in enumerate(speakers):
            new = (closest == k).any(axis=1) & (dist[:, k] > 0)
            start = None
            for f, flag in enumerate(np.append(new, False)):
                if flag and start is None:
                    start = f
                elif not flag and start is not None:
                    added.append(Turn(ov.recording_id, float(edges[start]),
                                      float(edges[f] - edges[start]), spk))
                    start = None
    return Annotation(diarization.turns + tuple(added)).sorted()


def overlap_regions(annotation: Annotation) -> list[OverlapSegment]:
    """Regions where two or more speakers are active at once."""
    out = []
    for rec in annotation.recording_ids:
        events = []
        for t in annotation.for_recording(rec):
            events += [(t.onset, 1), (t.offset, -1)]
        # net change per instant, so back-to-back turns do not split a region
        deltas = {}
        for time, delta in events:
            deltas[time] = deltas.get(time, 0) + delta
        active, start = 0, None
        for time in sorted(deltas):
            active += deltas[time]
            if active >= 2 and start is None:
                start = time
            elif active < 2 and start is not None:
                if time > start:
                    out.append(OverlapSegment(rec, start, time - start))
                start = None
    return out


def overlap_labels_from_reference(segments: Sequence[TimedSegment], reference: Annotation) -> np.ndarray:
    """True for sub-segments of which more than half is overlapped speech
    in ``reference``."""
    regions = overlap_regions(reference)
    out = np.zeros(len(segments), dtype=bool)
    for i, seg in enumerate(segments):
        covered = sum(max(0.0, min(seg.offset, r.offset) - max(seg.onset, r.onset))
                      for r in regions if r.recording_id == seg.recording_id)
        out[i] = covered > 0.5 * seg.duration
    return out


def save_logistic(model: LogisticModel, path) -> None:
    with open(path, "wb") as f:
        f.write(b"LGR1" + struct.pack("<I", model.dim))
        f.write(np.ascontiguousarray(np.append(model.weights, model.bias), dtype="<f8").tobytes())


def load_logistic(path) -> LogisticModel:
    data = Path(path).read_bytes()
    if data[:4] != b"LGR1":
        raise FormatError(f"{path}: expected magic b'LGR1', found {data[:4]!r}")
    (d,) = struct.unpack("<I", data[4:8])
    if len(data) != 8 + 8 * (d + 1):
        raise FormatError(f"{path}: size does not match dimension {d}")
    params = np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64)
    return LogisticModel(params[:d], float(params[d]))
