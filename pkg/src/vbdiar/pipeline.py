"""End-to-end diarization: transform -> PLDA scoring -> AHC -> VB-HMM -> overlap."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

from .clustering import AhcConfig, ahc_cluster, fuse_scores
from .errors import DiarizationError, StageError, TimelineMismatchError
from .overlap import LogisticModel, assign_second_speaker, detect_overlap
from .plda import (
    PldaModel,
    WhiteningTransform,
    apply_transform,
    interpolate_plda,
    lda_from_plda,
    pairwise_llr,
    project_model,
)
from .types_io import Annotation, EmbeddingSet, TimedSegment, labels_to_annotation
from .vbhmm import VbhmmConfig, vb_inference

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    window: float = 1.5
    step: float = 0.25
    ahc: AhcConfig = field(default_factory=lambda: AhcConfig(threshold=0.0, under_cluster_offset=2.0))
    vbhmm: VbhmmConfig = field(default_factory=VbhmmConfig)
    plda_alpha: float = 0.5
    lda_dim: int | None = None
    vbhmm_enabled: bool = True
    overlap_enabled: bool = False
    overlap_threshold: float = 0.5


@dataclass(frozen=True)
class PipelineModels:
    """Models shared read-only by all recordings.

    ``plda_indomain``, when given, is averaged into ``plda`` with weight
    ``1 - PipelineConfig.plda_alpha``.
    """

    plda: PldaModel
    transform: WhiteningTransform | None = None
    plda_indomain: PldaModel | None = None
    overlap: LogisticModel | None = None

    def scoring_plda(self, alpha: float) -> PldaModel:
        if self.plda_indomain is None:
            return self.plda
        return interpolate_plda(self.plda, self.plda_indomain, alpha)


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, DiarizationError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _preprocess(embeddings: EmbeddingSet, models: PipelineModels) -> EmbeddingSet:
    if models.transform is None:
        return embeddings
    with _stage("transform"):
        return apply_transform(models.transform, embeddings)


def _speaker_names(k):
    return f"spk{k}"


def diarize_single_channel(embeddings: EmbeddingSet, speech_regions: Sequence[TimedSegment] | None,
                           models: PipelineModels, cfg: PipelineConfig = PipelineConfig()) -> Annotation:
    """Diarize one recording from its sub-segment embeddings."""
    if len(embeddings) == 0 or (speech_regions is not None and len(speech_regions) == 0):
        logger.warning("no speech to diarize; returning an empty annotation")
        return Annotation()
    x = _preprocess(embeddings, models)
    with _stage("plda"):
        plda = models.scoring_plda(cfg.plda_alpha)
        scores = pairwise_llr(plda, x)
    if not cfg.vbhmm_enabled:
        with _stage("ahc"):
            labels = ahc_cluster(scores, replace(cfg.ahc, under_cluster_offset=0.0))
        return labels_to_annotation(x.segments, labels, _speaker_names)
    with _stage("ahc"):
        labels = ahc_cluster(scores, cfg.ahc)
    with _stage("lda"):
        proj = lda_from_plda(plda, cfg.lda_dim or plda.dim)
        xp = proj.apply(x)
        model_p = project_model(plda, proj)
    with _stage("vbhmm"):
        annotation, state = vb_inference(xp, model_p, labels, cfg.vbhmm)
    logger.info("%s: %d initial clusters -> %d speakers after %d VB iterations",
                x.segments[0].recording_id, labels.max() + 1, state.n_speakers, len(state.elbo_trace))
    if cfg.overlap_enabled and models.overlap is not None:
        with _stage("overlap"):
            overlaps = detect_overlap(models.overlap, x, cfg.overlap_threshold)
            annotation = assign_second_speaker(annotation, overlaps)
    return annotation


def diarize_multichannel(per_channel: Sequence[EmbeddingSet], models: PipelineModels,
                         cfg: PipelineConfig = PipelineConfig()) -> Annotation:
    """AHC on the average of per-channel PLDA score matrices (no VB-HMM)."""
    if not per_channel:
        raise DiarizationError("no channels given")
    timeline = [(s.recording_id, s.onset, s.duration) for s in per_channel[0].segments]
    for k, ch in enumerate(per_channel[1:], 1):
        if [(s.recording_id, s.onset, s.duration) for s in ch.segments] != timeline:
            raise TimelineMismatchError(f"channel {k} does not share the segment timeline of channel 0")
    if not timeline:
        logger.warning("no speech to diarize; returning an empty annotation")
        return Annotation()
    with _stage("plda"):
        plda = models.scoring_plda(cfg.plda_alpha)
        matrices = [pairwise_llr(plda, _preprocess(ch, models)) for ch in per_channel]
    with _stage("fusion"):
        fused = fuse_scores(matrices)
    with _stage("ahc"):
        labels = ahc_cluster(fused, replace(cfg.ahc, under_cluster_offset=0.0))
    return labels_to_annotation(per_channel[0].segments, labels, _speaker_names)


def diarize_recordings(embeddings: EmbeddingSet, models: PipelineModels, cfg: PipelineConfig = PipelineConfig(),
                       speech_regions: Sequence[TimedSegment] | None = None, jobs: int = 1) -> Annotation:
    """Run :func:`diarize_single_channel` on every recording; output keeps input order."""
    per_rec = embeddings.split_by_recording()
    regions = None
    if speech_regions is not None:
        regions = {rec: [r for r in speech_regions if r.recording_id == rec] for rec in per_rec}

    def run(rec):
        return diarize_single_channel(per_rec[rec], None if regions is None else regions[rec], models, cfg)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(run, per_rec))
    out = Annotation()
    for ann in results:
        out = out + ann
    return out


def diarize_recordings_multichannel(per_channel: Sequence[EmbeddingSet], models: PipelineModels,
                                    cfg: PipelineConfig = PipelineConfig(), jobs: int = 1) -> Annotation:
    splits = [ch.split_by_recording() for ch in per_channel]
    recs = list(splits[0])
    for k, sp in enumerate(splits[1:], 1):
        if list(sp) != recs:
            raise TimelineMismatchError(f"channel {k} covers different recordings than channel 0")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda rec: diarize_multichannel([sp[rec] for sp in splits], models, cfg), recs))
    out = Annotation()
    for ann in results:
        out = out + ann
    return out


# ---------------------------------------------------------------------------
# key = value configuration files
# ---------------------------------------------------------------------------

_AHC_KEYS = {"ahc_threshold": "threshold", "under_cluster_offset": "under_cluster_offset", "linkage": "linkage"}
_VB_KEYS = {f.name: f.name for f in fields(VbhmmConfig)}
_TOP_KEYS = {"window": float, "step": float, "alpha": float, "lda_dim": int,
             "overlap": bool, "overlap_threshold": float, "vbhmm": bool}


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DiarizationError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _to_bool(v: str) -> bool:
    lowered = str(v).lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise DiarizationError(f"not a boolean: {v!r}")


def config_from_mapping(values: dict, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Build a config from string or typed values; unknown keys are ignored."""
    ahc_kw, vb_kw, top_kw = {}, {}, {}
    for key, value in values.items():
        if value is None:
            continue
        if key in _AHC_KEYS:
            ahc_kw[_AHC_KEYS[key]] = value if key == "linkage" else float(value)
        elif key in _VB_KEYS:
            typ = int if key == "max_iters" else float
            vb_kw[key] = typ(value)
        elif key in _TOP_KEYS:
            typ = _TOP_KEYS[key]
            top_kw[key] = _to_bool(value) if typ is bool else typ(value)
    cfg = replace(base, ahc=replace(base.ahc, **ahc_kw), vbhmm=replace(base.vbhmm, **vb_kw))
    rename = {"alpha": "plda_alpha", "overlap": "overlap_enabled", "vbhmm": "vbhmm_enabled"}
    return replace(cfg, **{rename.get(k, k): v for k, v in top_kw.items()})
