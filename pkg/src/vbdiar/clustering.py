"""Agglomerative clustering of PLDA score matrices and multi-channel fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DiarizationError, DimensionMismatchError, NonFiniteError

LINKAGES = ("average",)


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    scores: np.ndarray

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DimensionMismatchError(f"score matrix must be square, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise NonFiniteError("score matrix contains NaN or Inf")
        if s.size and np.max(np.abs(s - s.T)) > 1e-10 * max(1.0, np.max(np.abs(s))):
            raise DiarizationError("score matrix is not symmetric")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def n(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class AhcConfig:
    """``threshold`` stops merging; ``under_cluster_offset`` is added to it so
    that more clusters survive (used to initialise the VB-HMM)."""

    threshold: float = 0.0
    under_cluster_offset: float = 0.0
    linkage: str = "average"

    def __post_init__(self):
        if self.linkage not in LINKAGES:
            raise DiarizationError(f"unsupported linkage {self.linkage!r}; choose from {LINKAGES}")

    @property
    def stop_threshold(self) -> float:
        return self.threshold + self.under_cluster_offset


def _as_scores(s) -> np.ndarray:
    return s.scores if isinstance(s, ScoreMatrix) else ScoreMatrix(s).scores


def relabel_by_first_appearance(labels) -> np.ndarray:
    mapping = {}
    return np.array([mapping.setdefault(l, len(mapping)) for l in labels], dtype=int)


def _agglomerate(scores: np.ndarray):
    """Yield ``(kept_id, absorbed_id, similarity)`` for successive
    average-linkage merges, best pair first.

    Clusters are identified by their smallest member index; ties on the
    best similarity go to the lexicographically smallest id pair.
    """
    n = scores.shape[0]
    sums = scores.copy()
    sizes = np.ones(n)
    # avg[i, j] for active i < j only, -inf elsewhere
    avg = np.where(np.triu(np.ones((n, n), dtype=bool), k=1), scores, -np.inf)
    active = np.ones(n, dtype=bool)
    for _ in range(n - 1):
        i, j = divmod(int(np.argmax(avg)), n)
        yield i, j, float(avg[i, j])
        sums[i, :] += sums[j, :]
        sums[:, i] += sums[:, j]
        sizes[i] += sizes[j]
        active[j] = False
        avg[j, :] = -np.inf
        avg[:, j] = -np.inf
        others = np.flatnonzero(active)
        fresh = sums[i, others] / (sizes[i] * sizes[others])
        before, after = others < i, others > i
        avg[others[before], i] = fresh[before]
        avg[i, others[after]] = fresh[after]


def ahc_merges(s) -> list[tuple[int, int, float]]:
    """Full merge history down to one cluster (see :func:`_agglomerate`)."""
    return list(_agglomerate(_as_scores(s)))


def ahc_cluster(s, cfg: AhcConfig = AhcConfig()) -> np.ndarray:
    """Average-linkage AHC; stops once the best pair scores below
    ``cfg.threshold + cfg.under_cluster_offset``.

    Returns cluster ids ``0..K-1`` numbered by first appearance.
    """
    scores = _as_scores(s)
    owner = np.arange(scores.shape[0])
    for keep, absorbed, sim in _agglomerate(scores):
        if sim < cfg.stop_threshold:
            break
        owner[owner == absorbed] = keep
    return relabel_by_first_appearance(owner)


def threshold_for_n_clusters(s, n_clusters: int) -> float:
    """A stopping threshold at which :func:`ahc_cluster` yields ``n_clusters``.

    Picks the midpoint between the last accepted and the first rejected
    merge similarity.
    """
    scores = _as_scores(s)
    n = scores.shape[0]
    if not 1 <= n_clusters <= n:
        raise DiarizationError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    merges = ahc_merges(scores)
    sims = [m[2] for m in merges]
    n_merges = n - n_clusters
    upper = sims[n_merges - 1] if n_merges > 0 else np.inf
    lower = sims[n_merges] if n_merges < len(sims) else -np.inf
    if np.isinf(upper) and np.isinf(lower):
        return 0.0
    if np.isinf(upper):
        return lower + 1.0
    if np.isinf(lower):
        return upper - 1.0
    return 0.5 * (upper + lower)


def fuse_scores(matrices: Sequence) -> ScoreMatrix:
    """Element-wise mean of per-channel score matrices."""
    if len(matrices) == 0:
        raise DiarizationError("cannot fuse an empty list of score matrices")
    arrays = [_as_scores(m) for m in matrices]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionMismatchError(f"score matrix sizes differ: {shape} vs {a.shape}")
    return ScoreMatrix(np.mean(arrays, axis=0))
