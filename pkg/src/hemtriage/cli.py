"""Command-line orchestration of the triage pipeline.

Subcommands cover the full chain: synth, slice-train, slice-predict, oof,
stack-train, stack-apply, optimize, evaluate, report. Every output goes
through an atomic write, all randomness flows from explicit --seed flags, and
a command exits 0 only when every declared output was produced.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import folds, gbdt, metrics, slicemodel, stacker, svgplots, synth, thresholds
from .errors import ConfigError, FormatError, PipelineError
from .fileio import atomic_write_text
from .volume import (HEMORRHAGE_TYPES, WindowSpec, load_manifest, load_manifest_volumes,
                     load_slice_labels)

_DECISION_COLUMNS = ("scan_id",) + HEMORRHAGE_TYPES


def _parse_windows(text: str) -> tuple[WindowSpec, ...]:
    try:
        specs = tuple(WindowSpec(*(float(part) for part in chunk.split(":")))
                      for chunk in text.split(","))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot parse --windows {text!r}: {exc}") from exc
    if len(specs) != 3:
        raise ConfigError("--windows needs exactly three center:width pairs")
    return specs


def _volumes_with_slice_labels(manifest_path, slice_labels_path, volumes_root=None):
    """Load manifest volumes so every one carries a per-slice label matrix.

    Scans absent from the per-slice CSV (or when no CSV is given) broadcast
    their scan label to every slice, with a warning: that is a coarser truth.
    """
    import warnings

    from .volume import CtVolume, ScanLabels

    volumes = load_manifest_volumes(manifest_path, slice_labels_path, volumes_root)
    out = []
    for volume in volumes:
        if volume.labels.slice_labels is not None:
            out.append(volume)
            continue
        warnings.warn(f"{volume.scan_id}: no per-slice labels; broadcasting scan labels")
        matrix = np.tile(volume.labels.vector(), (volume.num_slices, 1))
        labels = ScanLabels.from_vector(volume.labels.vector(), slice_labels=matrix)
        out.append(CtVolume(volume.scan_id, volume.patient_id, volume.slices,
                            volume.slice_thickness_mm, labels=labels))
    return out


def _manifest_truths(rows) -> np.ndarray:
    return np.array([row.labels.vector() for row in rows], dtype=bool)


def _scan_scores(rows, probs_by_scan) -> np.ndarray:
    missing = [row.scan_id for row in rows if row.scan_id not in probs_by_scan]
    if missing:
        raise ConfigError(f"probability CSV lacks scans: {missing[:5]}")
    return np.array([thresholds.aggregate_scan(probs_by_scan[row.scan_id]) for row in rows])


def cmd_synth(args) -> None:
    config = synth.SynthConfig(
        num_scans=args.scans,
        positive_fraction=tuple(args.positive_fraction / 5.0 for _ in range(5)),
        slices_min=args.slices_min,
        slices_max=args.slices_max,
        height=args.height,
        width=args.width,
        noise_sigma=args.noise_sigma,
        distractor_fraction=args.distractor_fraction,
        paired_scan_fraction=args.paired_fraction,
        seed=args.seed,
    )
    dataset = synth.generate(config)
    paths = synth.write_dataset(dataset, args.out)
    positives = sum(1 for v in dataset.volumes if v.labels.any)
    print(f"wrote {len(dataset.volumes)} scans ({positives} positive) under {args.out}")
    print(f"manifest: {paths['manifest']}")


def _reference_config(rounds):
    config = slicemodel.DEFAULT_REFERENCE_CONFIG
    if rounds is not None:
        import dataclasses
        config = dataclasses.replace(config, rounds=rounds)
    return config


def cmd_slice_train(args) -> None:
    windows = _parse_windows(args.windows)
    volumes = _volumes_with_slice_labels(args.manifest, args.slice_labels, args.volumes)
    features = np.concatenate([slicemodel.volume_features(v, windows) for v in volumes])
    labels = np.concatenate([v.labels.slice_labels for v in volumes])
    classifier = slicemodel.train_reference_classifier(
        features, labels, _reference_config(args.rounds), seed=args.seed)
    slicemodel.save_slice_model(classifier, windows, args.out)
    print(f"trained {classifier.identity} on {features.shape[0]} slices -> {args.out}")


def cmd_slice_predict(args) -> None:
    classifier, windows = slicemodel.load_slice_model(args.model)
    volumes = load_manifest_volumes(args.manifest, volumes_root=args.volumes)
    probs = {v.scan_id: slicemodel.predict_slices(v, [classifier], windows) for v in volumes}
    slicemodel.save_slice_probs(probs, args.out)
    print(f"predicted {sum(p.shape[0] for p in probs.values())} slices -> {args.out}")


def cmd_oof(args) -> None:
    windows = _parse_windows(args.windows)
    rows = load_manifest(args.manifest)
    volumes = _volumes_with_slice_labels(args.manifest, args.slice_labels, args.volumes)
    assignment = folds.assign_folds(rows, args.folds, seed=args.seed)
    train_fn = slicemodel.reference_train_fn(windows, _reference_config(args.rounds))
    oof = folds.generate_oof(volumes, assignment, train_fn, windows, seed=args.seed)
    out_dir = Path(args.out)
    folds.save_fold_csv(rows, assignment, out_dir / "folds.csv")
    slicemodel.save_slice_probs(oof, out_dir / "oof_probs.csv")
    print(f"{args.folds}-fold out-of-fold predictions -> {out_dir / 'oof_probs.csv'}")


def cmd_stack_train(args) -> None:
    import warnings

    probs = slicemodel.load_slice_probs(args.oof)
    if args.slice_labels is not None:
        labels = load_slice_labels(args.slice_labels)
    elif args.manifest is not None:
        # Scan-level-only truth: broadcast each scan's label to its slices.
        labels = {}
        scan_labels = {row.scan_id: row.labels.vector() for row in load_manifest(args.manifest)}
        for scan_id, rows in probs.items():
            if scan_id not in scan_labels:
                raise ConfigError(f"manifest lacks scan {scan_id}")
            warnings.warn(f"{scan_id}: no per-slice labels; broadcasting scan labels")
            labels[scan_id] = np.tile(scan_labels[scan_id], (rows.shape[0], 1))
    else:
        raise ConfigError("stack-train needs --slice-labels or --manifest")
    presets = gbdt.default_presets(seed=args.seed, rounds=args.rounds)
    ensemble = stacker.train_stacker(probs, labels, args.delta_s, presets)
    stacker.save_stacker_model(ensemble, args.delta_s, args.out)
    print(f"stacker (delta_s={args.delta_s}, {len(presets)} presets) -> {args.out}")


def cmd_stack_apply(args) -> None:
    ensemble, stored_delta_s = stacker.load_stacker_model(args.model)
    if args.delta_s is not None and args.delta_s != stored_delta_s:
        raise ConfigError(f"--delta-s {args.delta_s} does not match the model's "
                          f"delta_s={stored_delta_s}")
    probs = slicemodel.load_slice_probs(args.probs)
    refined = stacker.apply_stacker_all(ensemble, probs, stored_delta_s)
    slicemodel.save_slice_probs(refined, args.out)
    print(f"refined {len(refined)} scans -> {args.out}")


def cmd_optimize(args) -> None:
    rows = load_manifest(args.manifest)
    probs = slicemodel.load_slice_probs(args.probs)
    vectors = _scan_scores(rows, probs)
    truths = _manifest_truths(rows)
    best, achieved = thresholds.optimize_thresholds(
        vectors, truths, objective=args.objective, budget=args.budget, seed=args.seed)
    thresholds.save_thresholds(best, args.out)
    print(f"best {args.objective}={achieved:.4f} at "
          f"{[round(v, 4) for v in best.as_array()]} -> {args.out}")


def _load_decisions(path, rows) -> np.ndarray:
    table = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(_DECISION_COLUMNS) - set(reader.fieldnames):
            raise FormatError(f"{path}: decisions CSV must have columns {_DECISION_COLUMNS}")
        for record in reader:
            cells = [record[t] for t in HEMORRHAGE_TYPES]
            if any(cell not in ("0", "1") for cell in cells):
                raise FormatError(f"{path}: decision cells must be 0 or 1, got {cells}")
            table[record["scan_id"]] = [cell == "1" for cell in cells]
    missing = [row.scan_id for row in rows if row.scan_id not in table]
    if missing:
        raise ConfigError(f"decisions CSV lacks scans: {missing[:5]}")
    return np.array([table[row.scan_id] for row in rows], dtype=bool)


def cmd_evaluate(args) -> None:
    rows = load_manifest(args.manifest)
    truths = _manifest_truths(rows)
    if (args.decisions is None) == (args.probs is None):
        raise ConfigError("evaluate needs exactly one of --probs or --decisions")
    if args.decisions is not None:
        decisions = _load_decisions(args.decisions, rows)
        scores = None
    else:
        if args.thresholds is None:
            raise ConfigError("--probs evaluation needs --thresholds")
        threshold_set = thresholds.load_thresholds(args.thresholds)
        scores = _scan_scores(rows, slicemodel.load_slice_probs(args.probs))
        decisions, _ = thresholds.binarize_slice(scores, threshold_set)
    report = metrics.build_report(decisions, truths, scores)
    out_dir = Path(args.out)
    metrics.save_report(report, out_dir / "report.csv", out_dir / "report.txt")
    any_row = report.row("any")
    print(f"any-type: tp={any_row.cm.tp} fn={any_row.cm.fn} tn={any_row.cm.tn} "
          f"fp={any_row.cm.fp} -> {out_dir / 'report.csv'}")


def cmd_report(args) -> None:
    rows = load_manifest(args.manifest)
    truths = _manifest_truths(rows)
    threshold_set = thresholds.load_thresholds(args.thresholds)
    scores = _scan_scores(rows, slicemodel.load_slice_probs(args.probs))
    decisions, _ = thresholds.binarize_slice(scores, threshold_set)
    out_dir = Path(args.out)
    label_scores = {label: scores[:, t] for t, label in enumerate(HEMORRHAGE_TYPES)}
    label_scores["any"] = scores.max(axis=1)
    label_truths = {label: truths[:, t] for t, label in enumerate(HEMORRHAGE_TYPES)}
    label_truths["any"] = truths.any(axis=1)
    label_decisions = {label: decisions[:, t] for t, label in enumerate(HEMORRHAGE_TYPES)}
    label_decisions["any"] = decisions.any(axis=1)
    label_thresholds = dict(zip(HEMORRHAGE_TYPES, threshold_set.as_array()))

    _write_roc(out_dir, label_scores, label_truths)
    _write_cumulative(out_dir, label_decisions, label_truths)
    _write_boxplots(out_dir, label_scores, label_truths, label_thresholds)
    _write_ci_summary(out_dir, metrics.build_report(decisions, truths, scores))
    print(f"report artifacts -> {out_dir}")


def _write_roc(out_dir, label_scores, label_truths) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("label", "fpr", "tpr"))
    series = []
    for label in metrics.REPORT_LABELS:
        points = metrics.roc_points(label_scores[label], label_truths[label])
        for fpr, tpr in points:
            writer.writerow((label, repr(float(fpr)), repr(float(tpr))))
        series.append((label, points[:, 0], points[:, 1]))
    atomic_write_text(out_dir / "roc_curves.csv", buf.getvalue())
    svg = svgplots.line_chart(series, title="Receiver operating curves",
                              x_label="false positive rate", y_label="true positive rate",
                              x_range=(0.0, 1.0), y_range=(0.0, 1.0), diagonal=True)
    atomic_write_text(out_dir / "roc_curves.svg", svg)


def _write_cumulative(out_dir, label_decisions, label_truths) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("label", "scan_index", "prediction_cumulative", "truth_cumulative"))
    for label in metrics.REPORT_LABELS:
        curves = metrics.cumulative_curves(label_decisions[label], label_truths[label])
        for i, (d, t) in enumerate(zip(curves.decision_curve, curves.truth_curve)):
            writer.writerow((label, i, int(d), int(t)))
        index = np.arange(1, len(curves.decision_curve) + 1)
        svg = svgplots.line_chart(
            [("prediction", index, curves.decision_curve),
             ("ground truth", index, curves.truth_curve, True)],
            title=f"Cumulative positive cases: {label} "
                  f"(net {curves.final_difference:+d}, disagreements {curves.disagreements})",
            x_label="scans in review order", y_label="cumulative positives")
        atomic_write_text(out_dir / f"cumulative_{label}.svg", svg)
    atomic_write_text(out_dir / "cumulative_curves.csv", buf.getvalue())


def _write_boxplots(out_dir, label_scores, label_truths, label_thresholds) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("label", "truth_class", "median", "q1", "q3",
                     "whisker_low", "whisker_high", "num_outliers"))
    groups = []
    for label in metrics.REPORT_LABELS:
        by_class = metrics.boxplot_stats_by_class(label_scores[label], label_truths[label])
        for truth_class in (0, 1):
            stats = by_class[truth_class]
            writer.writerow((label, truth_class, repr(stats.median), repr(stats.q1),
                             repr(stats.q3), repr(stats.whisker_low),
                             repr(stats.whisker_high), len(stats.outliers)))
            marker = label_thresholds.get(label)
            groups.append((f"{label}{'+' if truth_class else '-'}", stats, marker))
    atomic_write_text(out_dir / "boxplot_stats.csv", buf.getvalue())
    svg = svgplots.box_chart(groups, title="Predicted probability by truth class",
                             y_label="probability")
    atomic_write_text(out_dir / "boxplot.svg", svg)


def _write_ci_summary(out_dir, report) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("label", "measure", "value_pct", "ci_half_width_pct"))
    for row in report.rows:
        writer.writerow((row.label, "acc", f"{100 * row.stats.acc:.2f}",
                         f"{100 * row.ci_acc:.2f}"))
        if row.stats.bacc is not None:
            writer.writerow((row.label, "bacc", f"{100 * row.stats.bacc:.2f}",
                             f"{100 * row.ci_bacc:.2f}"))
    atomic_write_text(out_dir / "ci_summary.csv", buf.getvalue())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hemtriage",
        description="Desk-scale head-CT hemorrhage triage pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scans", type=int, default=100)
    p.add_argument("--positive-fraction", type=float, default=0.3,
                   help="any-type positive fraction, split evenly over the 5 types")
    p.add_argument("--slices-min", type=int, default=10)
    p.add_argument("--slices-max", type=int, default=18)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--width", type=int, default=48)
    p.add_argument("--noise-sigma", type=float, default=4.0)
    p.add_argument("--distractor-fraction", type=float, default=0.0)
    p.add_argument("--paired-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("slice-train", help="train the reference slice classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--volumes", default=None, help="root for manifest paths (default: manifest dir)")
    p.add_argument("--slice-labels", default=None)
    p.add_argument("--windows", default="40:80,80:200,40:380")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slice_train)

    p = sub.add_parser("slice-predict", help="per-slice probabilities for a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--volumes", default=None, help="root for manifest paths (default: manifest dir)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slice_predict)

    p = sub.add_parser("oof", help="patient-grouped folds and out-of-fold predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--volumes", default=None, help="root for manifest paths (default: manifest dir)")
    p.add_argument("--slice-labels", default=None)
    p.add_argument("--windows", default="40:80,80:200,40:380")
    p.add_argument("--folds", type=int, default=8)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="directory for folds.csv and oof_probs.csv")
    p.set_defaults(func=cmd_oof)

    p = sub.add_parser("stack-train", help="train the inter-slice stacking ensemble")
    p.add_argument("--oof", required=True, help="out-of-fold slice probability CSV")
    p.add_argument("--slice-labels", default=None)
    p.add_argument("--manifest", default=None,
                   help="scan-level labels to broadcast when no per-slice CSV exists")
    p.add_argument("--delta-s", type=int, default=2)
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stack_train)

    p = sub.add_parser("stack-apply", help="refine slice probabilities with a stacker")
    p.add_argument("--model", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--delta-s", type=int, default=None,
                   help="must match the model's window if given")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stack_apply)

    p = sub.add_parser("optimize", help="search decision thresholds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--probs", required=True, help="refined slice probability CSV")
    p.add_argument("--objective", default="any_bacc", choices=sorted(thresholds.OBJECTIVES))
    p.add_argument("--budget", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="confusion matrices and derived statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--probs", default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--decisions", default=None, help="scan-level decisions CSV instead of --probs")
    p.add_argument("--out", required=True, help="directory for report.csv and report.txt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="ROC, cumulative, box-plot, and CI artifacts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
