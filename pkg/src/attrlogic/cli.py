"""Command-line entry point wiring all workflows together.

Every subcommand is a pure function of its input files and flags: no
hidden state, no network.  Outputs are written atomically (temp file +
rename).  Exit status is 0 on success, 1 on a domain error (one line on
stderr), 2 on a usage error.  Set ATTRLOGIC_LOG=debug|info|quiet to adjust
log verbosity.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import audit as audit_mod
from . import compensate as compensate_mod
from . import metrics as metrics_mod
from . import recognition as recog
from . import trainer as trainer_mod
from .errors import AttrLogicError
from .schema import fh37k_default, parse_schema, serialize_schema, validate_schema

log = logging.getLogger("attrlogic")


def _load_schema(value: str):
    if value.startswith("builtin:"):
        name = value.split(":", 1)[1]
        if name != "fh37k":
            raise AttrLogicError(f"unknown builtin schema {name!r}")
        return fh37k_default()
    with open(value, encoding="utf-8") as fh:
        return parse_schema(fh.read())


def _atomic_path(path):
    """Temp-file sibling used for atomic replacement (keeps the suffix)."""
    directory, name = os.path.split(path)
    return os.path.join(directory, f".tmp{os.getpid()}-{name}")


def _atomic_write_text(path, text):
    tmp = _atomic_path(path)
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_emit(path, writer):
    """Run ``writer(tmp_path)`` then rename the temp file into place."""
    tmp = _atomic_path(path)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_schema_validate(args):
    schema = _load_schema(args.schema)
    violations = validate_schema(schema)
    if args.out:
        report = {
            "name": schema.name,
            "attribute_count": len(schema),
            "violations": violations,
        }
        _atomic_write_text(args.out, json.dumps(report, indent=2) + "\n")
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return 1
    print(
        f"schema {schema.name}: {len(schema)} attributes, "
        f"{len(schema.exclusion_rules)} exclusion rules, "
        f"{len(schema.dependency_rules)} dependency rules, "
        f"{len(schema.exhaustive_groups)} exhaustive groups"
    )
    return 0


def cmd_audit(args):
    schema = _load_schema(args.schema)
    scores = audit_mod.load_score_csv(args.scores, schema)
    report = audit_mod.audit_dataset(schema, scores, args.threshold)
    _atomic_write_text(args.out, report.to_json() + "\n")
    print(
        f"audited {report.n_total} rows: {report.n_incomplete} incomplete, "
        f"{report.n_impossible} impossible, failure ratio {report.failure_ratio:.4f}"
    )
    return 0


def cmd_compensate(args):
    schema = _load_schema(args.schema)
    scores = audit_mod.load_score_csv(args.scores, schema)
    result = compensate_mod.compensate_dataset(schema, scores, args.threshold)
    _atomic_emit(args.out, lambda tmp: audit_mod.write_matrix_csv(tmp, schema.attributes, result))
    print(f"wrote {result.shape[0]} compensated rows to {args.out}")
    return 0


def _load_features_csv(path):
    _, ids, values = audit_mod.load_table_csv(path)
    return ids, values


def cmd_train(args):
    schema = _load_schema(args.schema)
    mapping = trainer_mod.read_config_file(args.config)
    config = trainer_mod.train_config_from_mapping(mapping)
    if "train_features" in mapping:
        train_ids, train_x = _load_features_csv(mapping["train_features"])
        train_labels = audit_mod.load_binary_csv(mapping["train_labels"], schema)
        train_data = trainer_mod.LabeledData(train_x, train_labels)
        val_data = None
        if "val_features" in mapping:
            _, val_x = _load_features_csv(mapping["val_features"])
            val_labels = audit_mod.load_binary_csv(mapping["val_labels"], schema)
            val_data = trainer_mod.LabeledData(val_x, val_labels)
    else:
        spec = trainer_mod.synthetic_spec_from_mapping(mapping)
        splits = trainer_mod.generate_synthetic(schema, spec)
        train_data, val_data = splits.train, splits.val
        log.info("generated synthetic dataset (%d rejections)", splits.rejections)
    model, train_log = trainer_mod.train(config, schema, train_data, val_data)
    _atomic_emit(args.out, lambda tmp: trainer_mod.save_checkpoint(model, tmp))
    if args.log:
        _atomic_emit(args.log, lambda tmp: trainer_mod.write_log_jsonl(train_log, tmp))
    if args.curves:
        from .plots import save_training_curves

        _atomic_emit(args.curves, lambda tmp: save_training_curves(train_log, tmp))
    last = train_log[-1]
    print(
        f"trained {config.loss_mode} for {config.epochs} epochs: "
        f"loss {last['loss']:.4f}, p_ex {last['p_ex']:.4f}, p_d {last['p_d']:.4f}"
    )
    return 0


def cmd_eval(args):
    schema = _load_schema(args.schema)
    model = trainer_mod.load_checkpoint(args.model)
    ids, features = _load_features_csv(args.features)
    scores, preds = trainer_mod.evaluate(model, features, schema, args.threshold, ids)
    _atomic_emit(
        args.scores_out, lambda tmp: audit_mod.write_matrix_csv(tmp, schema.attributes, scores)
    )
    if args.preds_out:
        _atomic_emit(
            args.preds_out, lambda tmp: audit_mod.write_matrix_csv(tmp, schema.attributes, preds)
        )
    print(f"evaluated {len(ids)} rows")
    return 0


def cmd_metrics(args):
    schema = _load_schema(args.schema)
    preds = audit_mod.load_binary_csv(args.preds, schema)
    labels = audit_mod.load_binary_csv(args.labels, schema)
    if args.mode == "consistency":
        report = metrics_mod.consistency_enforced_accuracy(schema, preds, labels)
    else:
        report = metrics_mod.attribute_accuracy(preds, labels, schema.attributes)
    _atomic_write_text(args.out, report.to_json() + "\n")
    if args.table:
        _atomic_write_text(args.table, report.to_table() + "\n")
    print(
        f"{report.mode}: acc_avg {report.acc_avg:.4f}, "
        f"acc_avg_n {report.acc_avg_n:.4f}, acc_avg_p {report.acc_avg_p:.4f}"
    )
    return 0


def cmd_fmr_report(args):
    embeddings = recog.load_embeddings(args.embeddings)
    kept = recog.filter_high_confidence(embeddings, args.min_conf)
    log.info("kept %d/%d high-confidence records", len(kept), len(embeddings))
    demographics = sorted(set(kept.demographics))
    if args.reference not in demographics:
        raise AttrLogicError(
            f"reference demographic {args.reference!r} has no high-confidence records"
        )
    pair_tables = {
        demo: recog.pair_scores(kept, demo, threads=args.threads) for demo in demographics
    }
    reference_impostors = np.concatenate(
        [v for v in pair_tables[args.reference].impostor.values()]
    )
    calibration = recog.calibrate_threshold(reference_impostors, args.target_fmr)
    report = recog.fmr_by_category(
        {demo: table.impostor for demo, table in pair_tables.items()},
        calibration.threshold,
        args.reference,
        args.target_fmr,
    )
    _atomic_write_text(args.out, report.to_json() + "\n")
    if args.table:
        _atomic_write_text(args.table, report.to_table() + "\n")
    if args.hist_dir or args.figures_dir:
        for demo, table in pair_tables.items():
            histograms = recog.distribution_histograms(table, args.bins)
            if args.hist_dir:
                os.makedirs(args.hist_dir, exist_ok=True)
                for (tag, cat), (edges, counts) in sorted(histograms.items()):
                    name = f"{demo}_{tag}_{cat[0]}-{cat[1]}.csv"
                    path = os.path.join(args.hist_dir, name)
                    _atomic_emit(path, lambda tmp: recog.write_histogram_csv(tmp, edges, counts))
            if args.figures_dir:
                from .plots import save_score_distributions

                os.makedirs(args.figures_dir, exist_ok=True)
                path = os.path.join(args.figures_dir, f"{demo}_distributions.png")
                _atomic_emit(
                    path, lambda tmp: save_score_distributions(demo, histograms, tmp)
                )
    print(
        f"threshold {calibration.threshold:.6f} achieves FMR "
        f"{calibration.achieved_fmr:.2e} on {calibration.n_scores} "
        f"{args.reference} impostor pairs"
    )
    return 0


def cmd_synth(args):
    if args.kind == "dataset":
        schema = _load_schema(args.schema)
        spec = trainer_mod.SyntheticDatasetSpec(
            n_train=args.n_train,
            n_val=args.n_val,
            n_test=args.n_test,
            feature_dim=args.feature_dim,
            noise_sigma=args.noise_sigma,
            distractor_dims=args.distractor_dims,
            seed=args.seed,
        )
        splits = trainer_mod.generate_synthetic(schema, spec)
        os.makedirs(args.out_dir, exist_ok=True)
        feature_cols = [f"f{i}" for i in range(splits.train.features.shape[1])]
        for split_name in ("train", "val", "test"):
            data = getattr(splits, split_name)
            features = audit_mod.ScoreMatrix(list(data.labels.row_ids), data.features)
            fpath = os.path.join(args.out_dir, f"{split_name}_features.csv")
            lpath = os.path.join(args.out_dir, f"{split_name}_labels.csv")
            _atomic_emit(fpath, lambda tmp: audit_mod.write_matrix_csv(tmp, feature_cols, features))
            _atomic_emit(
                lpath, lambda tmp: audit_mod.write_matrix_csv(tmp, schema.attributes, data.labels)
            )
        print(f"wrote dataset splits to {args.out_dir} ({splits.rejections} sampler rejections)")
    else:
        embeddings = recog.generate_embeddings(
            n_subjects=args.subjects,
            images_per_subject=args.images_per_subject,
            dim=args.dim,
            seed=args.seed,
        )
        _atomic_emit(args.out, lambda tmp: recog.save_embeddings(embeddings, tmp))
        print(f"wrote {len(embeddings)} embeddings to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrlogic",
        description="Logical-consistency auditing, losses, and score analysis "
        "for multi-label attribute prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def schema_flag(p):
        p.add_argument(
            "--schema",
            required=True,
            help="constraint DSL file, or builtin:fh37k",
        )

    p = sub.add_parser("schema-validate", help="parse a schema and check its invariants")
    schema_flag(p)
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=cmd_schema_validate)

    p = sub.add_parser("audit", help="classify prediction rows and aggregate counts")
    schema_flag(p)
    p.add_argument("--scores", required=True, help="score CSV (id,<attr>,...)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("compensate", help="fill empty exhaustive groups by max score")
    schema_flag(p)
    p.add_argument("--scores", required=True, help="score CSV (id,<attr>,...)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="compensated binary CSV path")
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("train", help="train the desk-scale classifier")
    schema_flag(p)
    p.add_argument("--config", required=True, help="flat key=value training config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch JSONL log path")
    p.add_argument("--curves", help="training-curves PNG path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a feature CSV with a checkpoint")
    schema_flag(p)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--features", required=True, help="feature CSV (id,f0,...)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--scores-out", required=True, help="probability CSV path")
    p.add_argument("--preds-out", help="binarized CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="accuracy report, plain or consistency-enforced")
    schema_flag(p)
    p.add_argument("--preds", required=True, help="binary prediction CSV")
    p.add_argument("--labels", required=True, help="binary label CSV")
    p.add_argument("--mode", choices=("plain", "consistency"), default="plain")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--table", help="aligned text table path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("fmr-report", help="per-category false-match-rate analysis")
    p.add_argument("--embeddings", required=True, help="EMB1 embedding file")
    p.add_argument("--min-conf", type=float, default=0.9)
    p.add_argument("--reference", default="WM", help="demographic used to calibrate")
    p.add_argument("--target-fmr", type=float, default=1e-4)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--table", help="aligned text table path")
    p.add_argument("--hist-dir", help="directory for per-stream histogram CSVs")
    p.add_argument("--figures-dir", help="directory for distribution figures (PNG)")
    p.set_defaults(func=cmd_fmr_report)

    p = sub.add_parser("synth", help="generate synthetic datasets or embeddings")
    p.add_argument("--kind", choices=("dataset", "embeddings"), default="dataset")
    p.add_argument("--schema", default="builtin:fh37k", help="schema for --kind dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", help="output directory for --kind dataset")
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-val", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=0.6)
    p.add_argument("--distractor-dims", type=int, default=8)
    p.add_argument("--out", help="output file for --kind embeddings")
    p.add_argument("--subjects", type=int, default=200)
    p.add_argument("--images-per-subject", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("ATTRLOGIC_LOG", "info").lower()
    logging.basicConfig(
        level={"debug": logging.DEBUG, "quiet": logging.ERROR}.get(level, logging.INFO),
        format="%(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth":
        if args.kind == "dataset" and not args.out_dir:
            parser.error("synth --kind dataset requires --out-dir")
        if args.kind == "embeddings" and not args.out:
            parser.error("synth --kind embeddings requires --out")
    try:
        return args.func(args)
    except AttrLogicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
