"""Synthetic conversations drawn from a PLDA model, for end-to-end checks.

Speaker turns follow a first-order chain that stays with the current
speaker with probability ``loop_p`` and otherwise jumps uniformly to one of
the other speakers. Embeddings are sampled as ``m + V y_s + e`` with
``y_s ~ N(0, I)``, ``B = V V^T`` and ``e ~ N(0, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DiarizationError
from .plda import PldaModel
from .types_io import Annotation, EmbeddingSet, TimedSegment, Turn, effective_boundaries, labels_to_annotation


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int
    plda: PldaModel
    loop_p: float = 0.99
    n_subsegments: int = 400
    overlap_fraction: float = 0.0
    seed: int = 0
    window: float = 1.5
    step: float = 0.25
    recording_id: str = "synth"

    def __post_init__(self):
        if self.n_speakers < 1:
            raise DiarizationError("n_speakers must be >= 1")
        if not 0.0 < self.loop_p < 1.0:
            raise DiarizationError("loop_p must lie in (0, 1)")
        if self.n_subsegments < 1:
            raise DiarizationError("n_subsegments must be >= 1")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise DiarizationError("overlap_fraction must lie in [0, 1)")


def speaker_name(k: int) -> str:
    return f"S{k}"


def sample_speaker_sequence(n_speakers: int, length: int, loop_p: float, rng) -> np.ndarray:
    states = np.empty(length, dtype=int)
    states[0] = rng.integers(n_speakers)
    stay = rng.random(length) < loop_p
    jumps = rng.integers(max(n_speakers - 1, 1), size=length)
    for t in range(1, length):
        if stay[t] or n_speakers == 1:
            states[t] = states[t - 1]
        else:
            # uniform over the other speakers
            j = jumps[t]
            states[t] = j + (j >= states[t - 1])
    return states


def _nearest_other(states: np.ndarray, t: int):
    n = len(states)
    for dist in range(1, n):
        for u in (t - dist, t + dist):
            if 0 <= u < n and states[u] != states[t]:
                return int(states[u])
    return None


def _simulate(cfg: SynthConfig, n_channels: int):
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_subsegments
    states = sample_speaker_sequence(cfg.n_speakers, n, cfg.loop_p, rng)
    model = cfg.plda
    evals, evecs = np.linalg.eigh(model.across_class)
    v = evecs * np.sqrt(np.maximum(evals, 0.0))
    latent = rng.standard_normal((cfg.n_speakers, model.dim))
    clean = model.mean + (latent @ v.T)[states]
    chol_w = np.linalg.cholesky(model.within_class)
    channels = [clean + rng.standard_normal(clean.shape) @ chol_w.T for _ in range(n_channels)]

    segments = tuple(TimedSegment(cfg.recording_id, 0, k * cfg.step, cfg.window) for k in range(n))
    reference = labels_to_annotation(segments, states, label_names=speaker_name)

    n_overlap = int(round(cfg.overlap_fraction * n))
    if n_overlap and cfg.n_speakers > 1:
        chosen = np.sort(rng.choice(n, size=n_overlap, replace=False))
        bounds = effective_boundaries(segments)
        second = []
        for t in chosen:
            other = _nearest_other(states, t)
            if other is None:
                continue
            start, end = bounds[t]
            if second and second[-1][2] == other and abs(second[-1][1] - start) < 1e-9:
                second[-1][1] = end
            else:
                second.append([start, end, other])
        reference = reference + Annotation(tuple(
            Turn(cfg.recording_id, float(a), float(b - a), speaker_name(s)) for a, b, s in second))
    return segments, channels, states, reference.sorted()


def synth_generate(cfg: SynthConfig) -> tuple[EmbeddingSet, Annotation]:
    """One synthetic recording and its reference annotation (deterministic in ``cfg.seed``)."""
    segments, channels, _, reference = _simulate(cfg, 1)
    return EmbeddingSet(segments, channels[0]), reference


def synth_multichannel(cfg: SynthConfig, n_channels: int) -> tuple[list[EmbeddingSet], Annotation]:
    """Same conversation seen by ``n_channels`` channels with independent
    within-class noise."""
    if n_channels < 1:
        raise DiarizationError("n_channels must be >= 1")
    segments, channels, _, reference = _simulate(cfg, n_channels)
    return [EmbeddingSet(segments, x) for x in channels], reference


def synth_states(cfg: SynthConfig) -> np.ndarray:
    """True per-sub-segment speaker indices of :func:`synth_generate`."""
    return _simulate(cfg, 1)[2]


def default_synth_plda(dim: int = 16) -> PldaModel:
    """Zero mean, across-class variances decaying linearly from 3 to 0.3
    and isotropic within-class variance 2."""
    if dim < 1:
        raise DiarizationError("dim must be >= 1")
    return PldaModel(np.zeros(dim), np.diag(np.linspace(3.0, 0.3, dim)), 2.0 * np.eye(dim))


def random_plda(dim: int, rng, across_scale: float = 1.0, within_scale: float = 1.0) -> PldaModel:
    """A random well-conditioned PLDA model (for tests and demos)."""
    def spd(scale):
        a = rng.standard_normal((dim, dim))
        return scale * (a @ a.T / dim + 0.5 * np.eye(dim))
    return PldaModel(rng.standard_normal(dim), spd(across_scale), spd(within_scale))
