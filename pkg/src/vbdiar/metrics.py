"""Diarization error rate with optimal one-to-one speaker mapping.

Scoring uses exact interval arithmetic: the timeline of each recording is
cut at every reference, hypothesis and no-score boundary, and each
elementary interval is scored with the NIST conventions::

    miss          += d * max(0, |R| - |H|)
    false alarm   += d * max(0, |H| - |R|)
    speaker error += d * (min(|R|, |H|) - #correctly mapped speakers)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyReferenceError
from .types_io import Annotation


@dataclass(frozen=True)
class DerBreakdown:
    miss: float
    false_alarm: float
    speaker_error: float
    total_speech: float

    @property
    def der(self) -> float:
        return (self.miss + self.false_alarm + self.speaker_error) / self.total_speech

    def __str__(self):
        return (f"DER {100 * self.der:.2f}% (miss {self.miss:.3f}s, false alarm "
                f"{self.false_alarm:.3f}s, speaker error {self.speaker_error:.3f}s, "
                f"scored speech {self.total_speech:.3f}s)")

    def tsv(self) -> str:
        return "\t".join(f"{v:.6f}" for v in
                         (self.miss, self.false_alarm, self.speaker_error, self.total_speech, self.der))


def _elementary(ref: Annotation, hyp: Annotation, collar: float = 0.0, score_overlap: bool = True):
    """Yield ``(duration, ref_speakers, hyp_speakers)`` for every scored
    elementary interval of a single recording (sweep over boundaries)."""
    turns = [(t.onset, t.offset, ("ref", t.speaker)) for t in ref]
    turns += [(t.onset, t.offset, ("hyp", t.speaker)) for t in hyp]
    if collar > 0:
        for t in ref:
            for edge in (t.onset, t.offset):
                turns.append((max(edge - collar, 0.0), edge + collar, ("skip", None)))
    events = {}
    for lo, hi, label in turns:
        if hi > lo:
            events.setdefault(lo, []).append((label, +1))
            events.setdefault(hi, []).append((label, -1))
    active = {}
    points = sorted(events)
    for a, b in zip(points, points[1:]):
        for label, delta in events[a]:
            active[label] = active.get(label, 0) + delta
            if active[label] == 0:
                del active[label]
        if ("skip", None) in active:
            continue
        r = frozenset(s for kind, s in active if kind == "ref")
        h = frozenset(s for kind, s in active if kind == "hyp")
        if not score_overlap and len(r) > 1:
            continue
        if r or h:
            yield b - a, r, h


def _mapping_for_intervals(intervals):
    ref_labels = sorted({s for _, r, _ in intervals for s in r})
    hyp_labels = sorted({s for _, _, h in intervals for s in h})
    if not ref_labels or not hyp_labels:
        return {}
    overlap = np.zeros((len(hyp_labels), len(ref_labels)))
    hi = {s: k for k, s in enumerate(hyp_labels)}
    ri = {s: k for k, s in enumerate(ref_labels)}
    for d, r, h in intervals:
        for sh in h:
            for sr in r:
                overlap[hi[sh], ri[sr]] += d
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return {hyp_labels[i]: ref_labels[j] for i, j in zip(rows, cols)}


def optimal_mapping(ref: Annotation, hyp: Annotation, collar: float = 0.0,
                    score_overlap: bool = True) -> dict[str, dict[str, str]]:
    """Per-recording hypothesis -> reference speaker mapping that maximises
    the total correctly attributed time."""
    out = {}
    for rec in dict.fromkeys(ref.recording_ids + hyp.recording_ids):
        intervals = list(_elementary(ref.for_recording(rec), hyp.for_recording(rec), collar, score_overlap))
        out[rec] = _mapping_for_intervals(intervals)
    return out


def compute_der(ref: Annotation, hyp: Annotation, collar: float = 0.0,
                score_overlap: bool = True) -> DerBreakdown:
    """Time-weighted DER after optimal speaker mapping (per recording).

    ``collar`` removes +-collar seconds around every reference boundary from
    scoring; with ``score_overlap=False`` regions where the reference has
    more than one speaker are ignored.
    """
    miss = fa = err = total = 0.0
    for rec in dict.fromkeys(ref.recording_ids + hyp.recording_ids):
        intervals = list(_elementary(ref.for_recording(rec), hyp.for_recording(rec), collar, score_overlap))
        mapping = _mapping_for_intervals(intervals)
        for d, r, h in intervals:
            n_ref, n_hyp = len(r), len(h)
            correct = sum(1 for s in h if mapping.get(s) in r)
            total += d * n_ref
            miss += d * max(0, n_ref - n_hyp)
            fa += d * max(0, n_hyp - n_ref)
            err += d * (min(n_ref, n_hyp) - correct)
    if total <= 0:
        raise EmptyReferenceError("reference contains no scored speech")
    return DerBreakdown(miss, fa, err, total)
