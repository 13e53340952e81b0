"""Command-line front end: synthesize data, build archives, classify, evaluate.

Four subcommands wire the pipeline end to end.  Exit codes are stable:
0 success, 1 runtime or numeric failure, 2 usage or validation failure.
All randomness flows from ``--seed``; ``--workers`` bounds internal
parallelism and never changes any output byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import dataio, docio
from .archive import BuildConfig, build_archive, load_archive, save_archive
from .errors import ArchiveFormatError, SigArchiveError, ValidationError
from .evaluation import evaluate_predictions
from .inference import DECISION_CLASSIFIED, DECISION_REJECTED, InferenceConfig, classify_batch
from .rank import EnsembleConfig

_PREDICTION_HEADER = ("sample_id", "decision", "label", "score", "attribution")
_TRUTH_HEADER = ("sample_id", "label", "novel")
_CURVE_HEADER = ("threshold", "coverage", "risk")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _nonneg_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(value) and value >= 0.0):
        raise argparse.ArgumentTypeError("must be finite and >= 0")
    return value


def _unit_fraction(text: str) -> float:
    value = _nonneg_float(text)
    if value >= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return value


def _sibling_path(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _write_csv(path, rows) -> None:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def cmd_synth(args: argparse.Namespace) -> int:
    if args.n_features < args.n_classes:
        raise ValidationError(
            "--n-features must be >= --n-classes so every class gets its own features")
    spec = dataio.SynthSpec(
        n_features=args.n_features,
        n_classes=args.n_classes,
        samples_per_class=args.samples_per_class,
        signature_overlap=args.overlap,
        noise_sigma=args.noise,
        holdout_class=args.holdout_class,
        seed=args.seed,
    )
    dataset, truth = dataio.generate_synthetic(spec)
    dataio.save_csv(dataset, args.out_features, args.out_labels)
    docio.write_document(truth.to_document(), args.out_truth)
    print(f"wrote {dataset.features.n_samples} samples x "
          f"{dataset.features.n_features} features across "
          f"{len(dataset.label_set)} classes "
          f"({args.out_features}, {args.out_labels}, {args.out_truth})")
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    dataset = dataio.load_csv(args.features, args.labels)
    normalized, params = dataio.normalize(dataset, args.normalization)
    cfg = BuildConfig(
        ensemble=EnsembleConfig(
            k_min=args.k_min,
            k_max=args.k_max,
            n_perturbations=args.n_perturbations,
            noise_epsilon=args.noise_epsilon,
            silhouette_threshold=args.silhouette_threshold,
            base_seed=args.seed,
        ),
        purity_threshold=args.purity_threshold,
        min_cluster_size=args.min_cluster_size,
        max_depth=args.max_depth,
        seed=args.seed,
    )
    report_path = args.report if args.report else _sibling_path(args.archive, ".report.json")
    attempted: list[Path] = []
    try:
        archive, report = build_archive(normalized.features, normalized.labels,
                                        cfg, workers=args.workers)
        # The scaling fitted at build time travels inside the archive so
        # cmd_classify can apply the identical transform to new samples.
        archive = replace(archive, build_config={**archive.build_config,
                                                 "normalization": params.to_snapshot()})
        attempted.append(Path(args.archive))
        save_archive(archive, args.archive)
        attempted.append(Path(report_path))
        docio.write_document(report.to_document(), report_path)
    except BaseException:
        for p in attempted:
            p.unlink(missing_ok=True)
        raise
    print(f"archived {len(archive.entries)} signatures covering "
          f"{report.n_archived}/{report.n_samples} samples; "
          f"{report.n_unresolved} unresolved ({args.archive}, {report_path})")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    archive = load_archive(args.archive)
    features = dataio.load_features_csv(args.features)
    snapshot = archive.build_config.get("normalization")
    try:
        if snapshot is not None:
            params = dataio.NormalizationParams.from_snapshot(snapshot)
            features = dataio.apply_normalization(features, params)
        if features.n_features != archive.n_features:
            raise ValidationError(
                f"data has {features.n_features} features, archive expects "
                f"{archive.n_features}")
    except ValidationError as exc:
        # A shape disagreement between two well-formed artifacts is a
        # processing failure, not a usage error.
        raise SigArchiveError(str(exc)) from exc

    cfg = InferenceConfig(t=args.threshold, score_tolerance=args.score_tolerance)
    predictions, failures = classify_batch(features, archive, cfg, workers=args.workers)

    label_by_path = {e.path: e.label for e in archive.entries}
    rows = [list(_PREDICTION_HEADER)]
    for p in predictions:
        rows.append([p.sample_id, p.decision, label_by_path[p.attribution],
                     docio.format_float(p.score), p.attribution])
    _write_csv(args.output, rows)

    for f in failures:
        print(f"error: sample {f.sample_id!r}: {f.message}", file=sys.stderr)
    n_classified = sum(1 for p in predictions if p.decision == DECISION_CLASSIFIED)
    print(f"classified {n_classified}/{features.n_samples} samples "
          f"({len(predictions) - n_classified} rejected) -> {args.output}")
    return 1 if failures else 0


def _read_table(path, expected_header: tuple[str, ...]) -> list[list[str]]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"file not found: {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = tuple(rows[0])
    if header != expected_header:
        missing = [c for c in expected_header if c not in header]
        if missing:
            raise ValidationError(
                f"{path}: missing required column(s): {', '.join(missing)}")
        raise ValidationError(
            f"{path}: expected header {','.join(expected_header)!r}, "
            f"got {','.join(header)!r}")
    width = len(expected_header)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValidationError(
                f"{path}: row {lineno} has {len(row)} cells, expected {width}")
    return rows[1:]


_NOVEL_VALUES = {"0": False, "false": False, "1": True, "true": True}


def cmd_evaluate(args: argparse.Namespace) -> int:
    pred_rows = _read_table(args.predictions, _PREDICTION_HEADER)
    if not pred_rows:
        raise ValidationError(f"{args.predictions}: no prediction rows")
    truth_rows = _read_table(args.truth, _TRUTH_HEADER)

    truth: dict[str, tuple[str, bool]] = {}
    for lineno, (sid, label, novel_text) in enumerate(truth_rows, start=2):
        if sid in truth:
            raise ValidationError(
                f"{args.truth}: duplicate sample id {sid!r} at row {lineno}")
        flag = _NOVEL_VALUES.get(novel_text.strip().lower())
        if flag is None:
            raise ValidationError(
                f"{args.truth}: row {lineno}: novel must be 0/1/true/false, "
                f"got {novel_text!r}")
        truth[sid] = (label, flag)

    decisions, predicted, scores, truth_labels, novel_flags = [], [], [], [], []
    seen_ids = set()
    for lineno, (sid, decision, label, score_text, _attribution) in enumerate(
            pred_rows, start=2):
        if decision not in (DECISION_CLASSIFIED, DECISION_REJECTED):
            raise ValidationError(
                f"{args.predictions}: row {lineno}: unknown decision {decision!r}")
        if not label:
            raise ValidationError(
                f"{args.predictions}: row {lineno}: empty label; rejected rows "
                f"must still carry the attributed label")
        try:
            score = float(score_text)
        except ValueError:
            raise ValidationError(
                f"{args.predictions}: row {lineno}: score is not a number: "
                f"{score_text!r}") from None
        if sid not in truth:
            raise ValidationError(
                f"sample ids disagree between {args.predictions} and {args.truth}: "
                f"no truth row for {sid!r}")
        if sid in seen_ids:
            raise ValidationError(
                f"{args.predictions}: duplicate sample id {sid!r} at row {lineno}")
        seen_ids.add(sid)
        decisions.append(decision)
        predicted.append(label)
        scores.append(score)
        truth_labels.append(truth[sid][0])
        novel_flags.append(truth[sid][1])
    unmatched = [sid for sid in truth if sid not in seen_ids]
    if unmatched:
        raise ValidationError(
            f"sample ids disagree between {args.predictions} and {args.truth}: "
            f"{len(unmatched)} truth row(s) without predictions "
            f"(first: {unmatched[0]!r})")

    report = evaluate_predictions(decisions, predicted, scores, truth_labels, novel_flags)
    docio.write_document(report.to_document(), args.report)
    curve_path = args.curve if args.curve else _sibling_path(args.report, ".curve.csv")
    _write_csv(curve_path, [list(_CURVE_HEADER)] + [
        [docio.format_float(p.threshold), docio.format_float(p.coverage),
         docio.format_float(p.risk)]
        for p in report.rc_curve
    ])

    def fmt(value):
        return "n/a" if value is None else f"{value:.4f}"

    print(f"aurc {report.aurc:.6f}, coverage {report.operating_coverage:.4f}, "
          f"macro-f1 {fmt(report.metrics.macro_f1)}, "
          f"rejection seen {fmt(report.rejection.seen)} / "
          f"novel {fmt(report.rejection.novel)} ({args.report}, {curve_path})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigarchive",
        description="Hierarchical latent-signature archives with reject-option "
                    "classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--n-features", type=_positive_int, default=40)
    p.add_argument("--n-classes", type=_positive_int, default=3)
    p.add_argument("--samples-per-class", type=_positive_int, default=50)
    p.add_argument("--overlap", type=_unit_fraction, default=0.1,
                   help="maximum pairwise cosine between class signatures")
    p.add_argument("--noise", type=_nonneg_float, default=0.02,
                   help="additive Gaussian noise sigma (truncated at zero)")
    p.add_argument("--holdout-class", default=None,
                   help="class name recorded as the intended novel class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-features", default="features.csv")
    p.add_argument("--out-labels", default="labels.csv")
    p.add_argument("--out-truth", default="truth.json")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("build", help="build a signature archive from labeled data")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--archive", required=True, help="output archive path")
    p.add_argument("--report", default=None,
                   help="output build-report path (default: <archive>.report.json)")
    p.add_argument("--k-min", type=_positive_int, default=1)
    p.add_argument("--k-max", type=_positive_int, default=8)
    p.add_argument("--n-perturbations", type=_positive_int, default=30)
    p.add_argument("--noise-epsilon", type=_unit_fraction, default=0.03)
    p.add_argument("--silhouette-threshold", type=float, default=0.75)
    p.add_argument("--purity-threshold", type=float, default=1.0)
    p.add_argument("--min-cluster-size", type=_positive_int, default=10)
    p.add_argument("--max-depth", type=int, default=8)
    p.add_argument("--normalization", default=dataio.MODE_PER_FEATURE_MAX,
                   choices=[dataio.MODE_PER_FEATURE_MAX, dataio.MODE_NONE])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1,
                   help="parallelism bound; outputs are identical for any value")
    p.set_defaults(handler=cmd_build)

    p = sub.add_parser("classify", help="classify samples against an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True, help="output predictions CSV")
    p.add_argument("--threshold", type=float, default=1.0,
                   help="minimum reconstruction score to classify")
    p.add_argument("--score-tolerance", type=_nonneg_float, default=1e-9)
    p.add_argument("--workers", type=_positive_int, default=1,
                   help="parallelism bound; outputs are identical for any value")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--predictions", required=True,
                   help="CSV written by the classify subcommand")
    p.add_argument("--truth", required=True,
                   help="CSV with header sample_id,label,novel")
    p.add_argument("--report", required=True, help="output report path")
    p.add_argument("--curve", default=None,
                   help="output risk-coverage CSV (default: <report>.curve.csv)")
    p.set_defaults(handler=cmd_evaluate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValidationError, ArchiveFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SigArchiveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
