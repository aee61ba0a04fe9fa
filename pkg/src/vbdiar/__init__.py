"""Speaker diarization of embeddings: PLDA scoring, AHC and VB-HMM clustering."""

from .clustering import AhcConfig, ScoreMatrix, ahc_cluster, fuse_scores
from .errors import DiarizationError
from .metrics import DerBreakdown, compute_der, optimal_mapping
from .overlap import (
    LogisticModel,
    OverlapSegment,
    assign_second_speaker,
    detect_overlap,
    train_overlap_classifier,
)
from .pipeline import PipelineConfig, PipelineModels, diarize_multichannel, diarize_single_channel
from .plda import (
    PldaModel,
    Projection,
    WhiteningTransform,
    apply_transform,
    estimate_transform,
    interpolate_plda,
    lda_from_plda,
    pairwise_llr,
    project_model,
    train_plda_em,
)
from .synth import SynthConfig, default_synth_plda, synth_generate, synth_multichannel
from .types_io import (
    Annotation,
    EmbeddingSet,
    TimedSegment,
    Turn,
    read_embeddings,
    read_rttm,
    uniform_subsegments,
    write_embeddings,
    write_rttm,
)
from .vbhmm import VbhmmConfig, VbState, vb_inference

__version__ = "0.1.0"
