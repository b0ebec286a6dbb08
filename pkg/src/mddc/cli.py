"""Command-line surface for the cleaning workflow.

Six subcommands cover the pipeline stages: ``inject`` (corrupt a snapshot
with ledgered noise), ``oracle`` (synthesize detector predictions),
``detect`` (score and type clusters), ``clean`` (apply corrections),
``eval`` (recognition / modification / PRF reports), and ``diff``
(annotation-level snapshot comparison).

Every command is deterministic given its flags and seed, never mutates its
inputs, and writes all outputs under ``--out``. Values resolve as: command
line > ``--config`` file > built-in defaults. The effective configuration
is stored as ``run_config.json`` next to each command's outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset, metrics, noise, oracle, pipeline
from .errors import DataError

PIPELINE_DEFAULTS = {
    "merge_iou": 0.4,
    "delta": 0.5,
    "tau": 0.9,
    "alpha": 0.8,
    "prune_mode": "threshold",
    "prune_value": 0.5,
    "score_classes_only": False,
    "split_clusters_by_class": False,
    "min_score_for_removal": 0.0,
    "match_any_type": False,
}

NOISE_DEFAULTS = {
    "noise_rate": 0.1,
    "noise_mix": "0.25,0.25,0.25,0.25",
    "noise_band": "0.1,0.5",
    "seed": 0,
}

ORACLE_DEFAULTS = {
    "recall": 1.0,
    "sigma": 0.0,
    "confusion": 0.0,
    "fp_rate": 0.0,
    "score_mean": 1.0,
    "score_concentration": 0.0,
    "seed": 0,
}


class Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse help (0) or usage error (1)
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.handler(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal invariant violations
        print(f"internal error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 3


def build_parser() -> Parser:
    parser = Parser(prog="mddc", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inject", help="corrupt annotations with seeded, ledgered noise")
    _add_io_flags(p, preds=False)
    p.add_argument("--noise-rate", type=float, help="fraction of boxes to corrupt (default 0.1)")
    p.add_argument("--noise-mix", help="delete,spurious,relocate,relabel weights (default uniform)")
    p.add_argument("--noise-band", help="target IoU band for relocations (default 0.1,0.5)")
    p.add_argument("--seed", type=int, help="noise seed (default 0)")
    p.add_argument("--validation", action="store_true", default=None,
                   help="mark the output directory as a protected validation split")
    p.set_defaults(handler=cmd_inject)

    p = sub.add_parser("oracle", help="generate synthetic detector predictions")
    _add_io_flags(p, preds=False)
    p.add_argument("--exact", action="store_true", default=None,
                   help="identity detector: every box, unmoved, score 1.0")
    p.add_argument("--recall", type=float, help="probability a box yields a prediction (default 1.0)")
    p.add_argument("--sigma", type=float, help="center/size jitter as a fraction of box size (default 0)")
    p.add_argument("--confusion", type=float, help="probability a predicted class is resampled (default 0)")
    p.add_argument("--fp-rate", type=float, help="expected false positives per image (default 0)")
    p.add_argument("--score-mean", type=float, help="mean confidence of correct predictions (default 1.0)")
    p.add_argument("--score-concentration", type=float,
                   help="Beta concentration of correct-prediction scores; 0 = constant (default 0)")
    p.add_argument("--seed", type=int, help="oracle seed (default 0)")
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("detect", help="score clusters and type annotation errors")
    _add_io_flags(p, preds=True)
    _add_pipeline_flags(p)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("clean", help="apply corrections to flagged clusters")
    _add_io_flags(p, preds=True)
    _add_pipeline_flags(p)
    p.add_argument("--validation", action="store_true", default=None,
                   help="mark the output directory as a protected validation split")
    p.set_defaults(handler=cmd_clean)

    p = sub.add_parser("eval", help="score the pipeline against ledger and reference")
    _add_io_flags(p, preds=True)
    _add_pipeline_flags(p)
    p.add_argument("--ledger", help="noise ledger written by inject")
    p.add_argument("--reference", help="reference labels directory (pre-noise truth)")
    p.add_argument("--cleaned", help="cleaned labels directory to judge")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("diff", help="compare two snapshots at annotation level")
    p.add_argument("before", help="labels directory of the older snapshot")
    p.add_argument("after", help="labels directory of the newer snapshot")
    p.add_argument("--classes", required=True, help="classes.txt shared by both snapshots")
    p.add_argument("--out", help="directory for diff.jsonl (omit to print only)")
    p.add_argument("--config", help="JSON config file (flags still win)")
    p.set_defaults(handler=cmd_diff)

    return parser


def _add_io_flags(p, preds: bool):
    p.add_argument("--labels", required=True, help="labels directory (one .txt per image)")
    p.add_argument("--classes", required=True, help="classes file, one name per line")
    if preds:
        p.add_argument("--preds", required=True, help="predictions directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (flags still win)")


def _add_pipeline_flags(p):
    p.add_argument("--merge-iou", type=float, help="cluster merge IoU (default 0.4)")
    p.add_argument("--delta", type=float, help="location-error IoU threshold (default 0.5)")
    p.add_argument("--tau", type=float, help="score needed to add a missing annotation (default 0.9)")
    p.add_argument("--alpha", type=float, help="EMA weight for quality scores (default 0.8)")
    p.add_argument("--prune-mode", choices=["threshold", "fraction"],
                   help="how rank-and-prune flags clusters (default threshold)")
    p.add_argument("--prune-value", type=float,
                   help="threshold on the score, or fraction of clusters (default 0.5)")
    p.add_argument("--score-classes-only", action="store_true", default=None,
                   help="exclude the background entry from the scored range")
    p.add_argument("--split-clusters-by-class", action="store_true", default=None,
                   help="never link two ground-truth boxes of different classes")
    p.add_argument("--min-score-for-removal", type=float,
                   help="suppress removals unless a cluster prediction scores at least "
                        "this value; conservative mode for low-recall detectors (default off)")
    p.add_argument("--match-any-type", action="store_true", default=None,
                   help="recognition metric ignores the error type (diagnostics)")


def _load_config_file(args) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except ValueError as exc:
        raise DataError(f"bad config file {p}: {exc}") from None
    if not isinstance(data, dict):
        raise DataError(f"config file {p} must hold a JSON object")
    return data


def _resolve(args, defaults: dict) -> dict:
    """Merge flag values over config-file values over defaults."""
    file_values = _load_config_file(args)
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            out[key] = file_values[key]
        else:
            out[key] = default
    return out


def _run_config(config: dict) -> pipeline.RunConfig:
    return pipeline.RunConfig(
        merge_iou=config["merge_iou"],
        delta=config["delta"],
        tau=config["tau"],
        alpha=config["alpha"],
        prune_mode=config["prune_mode"],
        prune_value=config["prune_value"],
        score_classes_only=bool(config["score_classes_only"]),
        split_clusters_by_class=bool(config["split_clusters_by_class"]),
        min_score_for_removal=config["min_score_for_removal"],
        match_any_type=bool(config["match_any_type"]),
    )


def _write_run_config(out_dir: Path, command: str, config: dict, paths: dict) -> None:
    payload = {"command": command, **paths, **config}
    (out_dir / "run_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_jsonl(path: Path, records) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _parse_floats(text: str, n: int, what: str) -> tuple:
    try:
        values = tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise DataError(f"bad {what}: {text!r}") from None
    if len(values) != n:
        raise DataError(f"{what} needs {n} comma-separated values, got {text!r}")
    return values


def cmd_inject(args) -> int:
    config = _resolve(args, NOISE_DEFAULTS)
    mix = _parse_floats(config["noise_mix"], 4, "noise mix")
    band = _parse_floats(config["noise_band"], 2, "noise band")
    spec = noise.NoiseSpec(rate=config["noise_rate"], mix=mix, seed=config["seed"],
                           location_iou_band=band)

    snapshot = dataset.load_snapshot(args.labels, args.classes)
    corrupted, ledger = noise.inject_noise(snapshot, spec)
    corrupted, mapping = dataset.normalize_uids(corrupted)
    ledger = noise.remap_ledger(ledger, mapping)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save_snapshot(corrupted, out, validation=bool(args.validation))
    noise.write_ledger(ledger, out / "ledger.jsonl")
    _write_run_config(out, "inject", config,
                      {"labels": args.labels, "classes": args.classes})
    counts = ledger.kind_counts()
    print(f"injected {len(ledger.entries)} corruptions over {snapshot.total_boxes()} boxes: "
          + ", ".join(f"{k}={counts[k]}" for k in noise.NOISE_KINDS))
    return 0


def cmd_oracle(args) -> int:
    config = _resolve(args, ORACLE_DEFAULTS)
    if getattr(args, "exact", None):
        config.update({k: v for k, v in ORACLE_DEFAULTS.items() if k != "seed"})
        config["exact"] = True
    else:
        config["exact"] = False
    oracle_config = oracle.OracleConfig(
        recall=config["recall"],
        score_agree=(config["score_mean"], config["score_concentration"]),
        localization_sigma=config["sigma"],
        confusion_rate=config["confusion"],
        false_positive_rate=config["fp_rate"],
        seed=config["seed"],
    )
    snapshot = dataset.load_snapshot(args.labels, args.classes)
    predictions = oracle.generate_predictions(snapshot, oracle_config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save_predictions(predictions, out)
    _write_run_config(out, "oracle", config,
                      {"labels": args.labels, "classes": args.classes})
    total = sum(len(v) for v in predictions.values())
    print(f"wrote predictions for {len(predictions)} images ({total} boxes)")
    return 0


def cmd_detect(args) -> int:
    config = _resolve(args, PIPELINE_DEFAULTS)
    snapshot = dataset.load_snapshot(args.labels, args.classes, predictions_dir=args.preds)
    analyzed = pipeline.analyze_snapshot(snapshot, _run_config(config))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "clusters.jsonl", [ac.report_row() for ac in analyzed])
    _write_run_config(out, "detect", config,
                      {"labels": args.labels, "classes": args.classes, "preds": args.preds})
    _print_detect_summary(analyzed)
    return 0


def _print_detect_summary(analyzed) -> None:
    flagged = [ac for ac in analyzed if ac.scored.flagged]
    by_type: dict[str, int] = {}
    for ac in flagged:
        by_type[ac.error_type.value] = by_type.get(ac.error_type.value, 0) + 1
    print(f"{len(analyzed)} clusters, {len(flagged)} flagged")
    for name in sorted(by_type):
        print(f"  {name:<16} {by_type[name]}")


def cmd_clean(args) -> int:
    out = Path(args.out)
    if dataset.is_validation_dir(args.labels) or (out.exists() and dataset.is_validation_dir(out)):
        raise DataError(
            "target is a protected validation split: the validation set stays fixed "
            "and is never involved in data cleaning or correction"
        )
    config = _resolve(args, PIPELINE_DEFAULTS)
    snapshot = dataset.load_snapshot(args.labels, args.classes, predictions_dir=args.preds)
    corrected, decisions, analyzed = pipeline.clean_snapshot(snapshot, _run_config(config))
    corrected, _ = dataset.normalize_uids(corrected)

    out.mkdir(parents=True, exist_ok=True)
    dataset.save_snapshot(corrected, out, validation=bool(args.validation))
    _write_jsonl(out / "decisions.jsonl", [_decision_record(d) for d in decisions])
    _write_jsonl(out / "clusters.jsonl", [ac.report_row() for ac in analyzed])
    _write_run_config(out, "clean", config,
                      {"labels": args.labels, "classes": args.classes, "preds": args.preds})
    applied = [d for d in decisions if d.action.value != "none"]
    print(f"applied {len(applied)} corrections "
          f"({snapshot.total_boxes()} boxes in, {corrected.total_boxes()} out)")
    return 0


def _decision_record(d) -> dict:
    return {
        "image_id": d.image_id,
        "cluster_id": d.cluster_id,
        "error_type": d.error_type.value,
        "action": d.action.value,
        "target_uid": d.target_uid,
        "new_class": d.new_class,
        "new_box": None if d.new_box is None else
            {"cx": d.new_box.cx, "cy": d.new_box.cy, "w": d.new_box.w, "h": d.new_box.h},
        "score": d.score,
    }


def cmd_eval(args) -> int:
    config = _resolve(args, PIPELINE_DEFAULTS)
    run_config = _run_config(config)
    snapshot = dataset.load_snapshot(args.labels, args.classes, predictions_dir=args.preds)
    analyzed = pipeline.analyze_snapshot(snapshot, run_config)

    report: dict = {}
    if args.ledger:
        ledger = noise.read_ledger(args.ledger)
        rec = metrics.score_recognition(ledger, analyzed, delta=run_config.delta,
                                        match_any_type=run_config.match_any_type)
        # kinds with no injected events are absent rather than null
        recognition = {k: v for k, v in sorted(rec.per_type.items()) if v is not None}
        if rec.average_accuracy is not None:
            recognition["average_accuracy"] = rec.average_accuracy
        recognition["confusion"] = rec.confusion
        recognition["injected"] = rec.injected
        report["recognition"] = recognition

    reference = None
    if args.reference:
        reference = dataset.load_snapshot(args.reference, args.classes)
        p, r, f1 = metrics.box_prf(snapshot, reference, iou_threshold=run_config.delta)
        report["prf_labels_vs_reference"] = {"precision": p, "recall": r, "f1": f1}

    if args.cleaned:
        if reference is None:
            raise DataError("--cleaned needs --reference to judge against")
        cleaned = dataset.load_snapshot(args.cleaned, args.classes)
        p, r, f1 = metrics.box_prf(cleaned, reference, iou_threshold=run_config.delta)
        report["prf_cleaned_vs_reference"] = {"precision": p, "recall": r, "f1": f1}
        mod = metrics.score_modifications(snapshot, cleaned, reference, delta=run_config.delta)
        report["modifications"] = {
            "total_modified": mod.total_modified,
            "correct": mod.correct,
            "incorrect": mod.incorrect,
            "ineffective": mod.ineffective,
        }

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_jsonl(out / "report.jsonl", _report_lines(report))
    _write_run_config(out, "eval", config, {
        "labels": args.labels, "classes": args.classes, "preds": args.preds,
        "ledger": args.ledger, "reference": args.reference, "cleaned": args.cleaned,
    })
    _print_report(report)
    return 0


def _report_lines(report: dict) -> list[dict]:
    lines = []
    for section in sorted(report):
        for key, value in sorted(report[section].items()):
            if isinstance(value, dict):
                continue
            lines.append({"section": section, "metric": key, "value": value})
    return lines


def _print_report(report: dict) -> None:
    for section in sorted(report):
        print(section)
        for key, value in sorted(report[section].items()):
            if isinstance(value, dict):
                continue
            if isinstance(value, float):
                print(f"  {key:<28} {value:.4f}")
            else:
                print(f"  {key:<28} {value}")


def cmd_diff(args) -> int:
    before = dataset.load_snapshot(args.before, args.classes)
    after = dataset.load_snapshot(args.after, args.classes)
    diff = dataset.diff_snapshots(before, after)
    records = dataset.diff_to_records(diff)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out / "diff.jsonl", records)
    print(f"added={len(diff.added)} removed={len(diff.removed)} "
          f"relabeled={len(diff.relabeled)} relocated={len(diff.relocated)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
