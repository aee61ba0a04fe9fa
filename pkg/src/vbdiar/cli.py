"""Command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on data errors (bad or
inconsistent input files, failed pipeline stages).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path


from .errors import DiarizationError
from .metrics import compute_der
from .overlap import load_logistic, overlap_labels_from_reference, save_logistic, train_overlap_classifier
from .pipeline import (
    PipelineConfig,
    PipelineModels,
    config_from_mapping,
    diarize_recordings,
    diarize_recordings_multichannel,
    parse_config_text,
)
from .plda import (
    apply_transform,
    estimate_transform,
    load_plda,
    load_transform,
    save_plda,
    save_transform,
    train_plda_em,
)
from .synth import SynthConfig, default_synth_plda, synth_multichannel
from .types_io import (
    EmbeddingSet,
    format_rttm_line,
    read_embeddings,
    read_rttm,
    read_segments,
    read_vectors,
    uniform_subsegments,
    write_rttm,
    write_segments,
    write_vectors,
)

logger = logging.getLogger("vbdiar")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_model_args(p):
    p.add_argument("--plda", required=True, help="PLDA model file (PLD1)")
    p.add_argument("--plda-indomain", help="in-domain PLDA model averaged with --plda")
    p.add_argument("--alpha", type=float, help="weight of --plda in the interpolation (default 0.5)")
    p.add_argument("--transform", help="centering/whitening transform file (WHT1); never re-estimated")
    p.add_argument("--config", help="key = value configuration file; flags override it")
    p.add_argument("--ahc-threshold", type=float)
    p.add_argument("--under-cluster-offset", type=float)
    p.add_argument("--jobs", type=int, default=1, help="recordings processed in parallel")
    p.add_argument("--seed", type=int, default=0,
                   help="recorded for reproducibility; inference has no random steps")
    p.add_argument("--rttm-out", help="output RTTM (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vbdiar", description="Embedding-level speaker diarization.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("diarize", parents=[common], help="AHC + VB-HMM diarization of single-channel recordings")
    p.add_argument("--embeddings", required=True, help="embedding vectors (XVE1)")
    p.add_argument("--segments", required=True, help="sub-segment timing TSV")
    p.add_argument("--vad", help="speech regions TSV; recordings without speech give no output")
    _add_model_args(p)
    p.add_argument("--lda-dim", type=int)
    p.add_argument("--fa", type=float)
    p.add_argument("--fb", type=float)
    p.add_argument("--loop-p", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--no-vbhmm", action="store_true", help="stop after AHC")
    p.add_argument("--overlap-model", help="logistic overlap detector (LGR1)")
    p.add_argument("--overlap-threshold", type=float)

    p = sub.add_parser("diarize-mc", parents=[common], help="multi-channel diarization by score fusion and AHC")
    p.add_argument("--embeddings", required=True, nargs="+", help="one XVE1 file per channel")
    p.add_argument("--segments", required=True, help="sub-segment timing TSV shared by all channels")
    _add_model_args(p)

    p = sub.add_parser("train-plda", parents=[common], help="train a two-covariance PLDA model by EM")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--labels", required=True, help="one speaker label per line, aligned with --segments")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--transform-out", help="estimate a transform, apply it before training and save it here")
    p.add_argument("--no-length-norm", action="store_true")
    p.add_argument("--plda-out", required=True)

    p = sub.add_parser("train-overlap", parents=[common], help="train the logistic overlap detector")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--segments", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--labels", help="'overlap' or 'clean' per line, aligned with --segments")
    group.add_argument("--ref", help="reference RTTM; overlap labels are derived from it")
    p.add_argument("--transform", help="transform applied before training")
    p.add_argument("--l2", type=float, default=1e-2)
    p.add_argument("--model-out", required=True)

    p = sub.add_parser("score", parents=[common], help="diarization error rate of a hypothesis RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float, default=0.0)
    p.add_argument("--no-score-overlap", action="store_true")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic conversation drawn from a PLDA model")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-speakers", type=int, default=3)
    p.add_argument("--n-subsegments", type=int, default=400)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--loop-p", type=float, default=0.98)
    p.add_argument("--overlap-fraction", type=float, default=0.0)
    p.add_argument("--n-channels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--recording-id", default="synth")

    p = sub.add_parser("subsegment", parents=[common], help="cut speech regions into overlapping windows")
    p.add_argument("--vad", required=True, help="speech regions TSV")
    p.add_argument("--window", type=float, default=1.5)
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--out", required=True, help="sub-segment TSV")
    return parser


def _read_lines(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg = config_from_mapping(parse_config_text(Path(args.config).read_text(encoding="utf-8")), cfg)
    flags = {
        "ahc_threshold": args.ahc_threshold,
        "under_cluster_offset": args.under_cluster_offset,
        "alpha": args.alpha,
    }
    for name in ("lda_dim", "fa", "fb", "loop_p", "max_iters", "overlap_threshold"):
        flags[name] = getattr(args, name, None)
    cfg = config_from_mapping(flags, cfg)
    if getattr(args, "no_vbhmm", False):
        cfg = replace(cfg, vbhmm_enabled=False)
    if getattr(args, "overlap_model", None):
        cfg = replace(cfg, overlap_enabled=True)
    return cfg


def _models(args) -> PipelineModels:
    return PipelineModels(
        plda=load_plda(args.plda),
        transform=load_transform(args.transform) if args.transform else None,
        plda_indomain=load_plda(args.plda_indomain) if args.plda_indomain else None,
        overlap=load_logistic(args.overlap_model) if getattr(args, "overlap_model", None) else None,
    )


def _emit(annotation, path):
    if path:
        write_rttm(annotation, path)
    else:
        sys.stdout.writelines(format_rttm_line(t) + "\n" for t in annotation)


def cmd_diarize(args):
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    cfg = _config(args)
    data = read_embeddings(args.segments, args.embeddings)
    regions = read_segments(args.vad) if args.vad else None
    result = diarize_recordings(data, _models(args), cfg, speech_regions=regions, jobs=args.jobs)
    _emit(result, args.rttm_out)


def cmd_diarize_mc(args):
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    cfg = _config(args)
    segments = read_segments(args.segments)
    channels = [EmbeddingSet(segments, read_vectors(path)) for path in args.embeddings]
    result = diarize_recordings_multichannel(channels, _models(args), cfg, jobs=args.jobs)
    _emit(result, args.rttm_out)


def cmd_train_plda(args):
    data = read_embeddings(args.segments, args.embeddings)
    labels = _read_lines(args.labels)
    if args.transform_out:
        transform = estimate_transform(data, use_length_norm=not args.no_length_norm)
        data = apply_transform(transform, data)
        save_transform(transform, args.transform_out)
    model = train_plda_em(data, labels, iterations=args.iterations)
    save_plda(model, args.plda_out)
    logger.info("trained PLDA on %d embeddings of %d speakers", len(data), len(set(labels)))


def cmd_train_overlap(args):
    data = read_embeddings(args.segments, args.embeddings)
    if args.transform:
        data = apply_transform(load_transform(args.transform), data)
    if args.ref:
        labels = overlap_labels_from_reference(data.segments, read_rttm(args.ref))
    else:
        labels = _read_lines(args.labels)
    save_logistic(train_overlap_classifier(data, labels, l2=args.l2), args.model_out)


def cmd_score(args):
    result = compute_der(read_rttm(args.ref), read_rttm(args.hyp), collar=args.collar,
                         score_overlap=not args.no_score_overlap)
    print(result)
    print(result.tsv())


def cmd_synth(args):
    if args.n_channels < 1 or args.dim < 1:
        raise UsageError("--n-channels and --dim must be >= 1")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = default_synth_plda(args.dim)
    cfg = SynthConfig(args.n_speakers, model, loop_p=args.loop_p, n_subsegments=args.n_subsegments,
                      overlap_fraction=args.overlap_fraction, seed=args.seed, recording_id=args.recording_id)
    channels, reference = synth_multichannel(cfg, args.n_channels)
    write_segments(channels[0].segments, out / "segments.tsv")
    for k, ch in enumerate(channels):
        name = "vectors.xve" if args.n_channels == 1 else f"vectors.ch{k}.xve"
        write_vectors(ch.vectors, out / name)
    write_rttm(reference, out / "ref.rttm")
    save_plda(model, out / "plda.bin")


def cmd_subsegment(args):
    regions = read_segments(args.vad)
    write_segments(uniform_subsegments(regions, args.window, args.step), args.out)


COMMANDS = {
    "diarize": cmd_diarize,
    "diarize-mc": cmd_diarize_mc,
    "train-plda": cmd_train_plda,
    "train-overlap": cmd_train_overlap,
    "score": cmd_score,
    "synth": cmd_synth,
    "subsegment": cmd_subsegment,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        print(f"vbdiar: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DiarizationError, OSError, ValueError) as e:
        print(f"vbdiar: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
