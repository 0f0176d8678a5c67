"""``hotspot`` command line.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ConfigError, DataError, InvalidConfig
from .pipeline import (
    PipelineConfig,
    run_all,
    run_evaluate,
    run_featurize,
    run_generate,
    run_ingest,
    run_predict,
    run_train,
)
from .schema import default_schema
from .synth import preset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("hotspot")


def _weights(text: str) -> list[float]:
    try:
        return [float(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weight list {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--seed", type=int, help="overrides every seed")


def _synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="separable, hard or paper-scale")
    p.add_argument("--n-users", type=int)
    p.add_argument("--affected-fraction", type=float)
    p.add_argument("--dirty-rate", type=float)
    p.add_argument("--missing-rate", type=float)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split-ratio", type=float)
    p.add_argument("--max-leaves", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--positive-weight", type=float, dest="positive_class_weight")
    p.add_argument("--no-goss", action="store_true")
    p.add_argument("--no-efb", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hotspot", description="Complaint hotspot prediction from CP/UP records.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic labelled dataset")
    _common(p)
    _synth_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="validate, deduplicate and impute raw records")
    _common(p)
    p.add_argument("--in", dest="src", required=True, help="directory with cp.csv and up.csv")
    p.add_argument("--out", required=True)

    p = sub.add_parser("featurize", help="window records into a feature matrix")
    _common(p)
    p.add_argument("--in", dest="src", required=True, help="directory of cleaned records")
    p.add_argument("--labels", help="labels.csv (user_id,label)")
    p.add_argument("--window", type=int, dest="window_s")
    p.add_argument("--out", required=True, help="features.csv path")

    p = sub.add_parser("train", help="split by user and fit the boosted ensemble")
    _common(p)
    _train_flags(p)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="metrics, curves, importance and weight sweep")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True, help="held-out features")
    p.add_argument("--train-features", help="needed for --sweep")
    p.add_argument("--sweep", type=_weights, help="comma-separated positive-class weights")
    p.add_argument("--sweep-on", choices=("test", "train"), default="test")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="score windows and list affected users")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-flagged", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="generate through predict in one directory")
    _common(p)
    _synth_flags(p)
    _train_flags(p)
    p.add_argument("--sweep", type=_weights)
    p.add_argument("--out", required=True)

    p = sub.add_parser("schema", help="schema utilities")
    ssub = p.add_subparsers(dest="schema_command", required=True)
    e = ssub.add_parser("export", help="print or write the record schema as JSON")
    e.add_argument("--out")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.load(getattr(args, "config", None))
    get = lambda name: getattr(args, name, None)  # noqa: E731
    if get("preset"):
        config = replace(config, synth=replace(preset(args.preset), seed=config.synth.seed))
    synth_over = {k: get(k) for k in ("n_users", "affected_fraction", "dirty_rate", "missing_rate") if get(k) is not None}
    train_over = {k: get(k) for k in ("max_leaves", "max_iterations", "learning_rate", "positive_class_weight")
                  if get(k) is not None}
    if get("no_goss"):
        train_over["goss_enabled"] = False
    if get("no_efb"):
        train_over["efb_enabled"] = False
    top = {}
    for key in ("split_ratio", "threshold", "min_flagged", "window_s"):
        if get(key) is not None:
            top[key] = get(key)
    if get("sweep") is not None:
        top["sweep_weights"] = args.sweep
    try:
        config = replace(config, synth=replace(config.synth, **synth_over),
                         train=replace(config.train, **train_over), **top)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None
    if get("seed") is not None:
        config = config.with_seed(args.seed)
    return config.validate()


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "schema":
        text = default_schema().to_json()
        if args.out:
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
        return EXIT_OK

    config = resolve_config(args)
    registry = default_schema()
    if args.command == "generate":
        ds = run_generate(config.synth, args.out, registry)
        log.info("wrote %d CP and %d UP records for %d users", len(ds.cp), len(ds.up), len(ds.labels))
    elif args.command == "ingest":
        report = run_ingest(args.src, args.out, registry)
        log.info("kept %d of %d rows", report.rows_kept, report.rows_read)
    elif args.command == "featurize":
        m = run_featurize(args.src, args.out, args.labels, config.window_s, registry)
        log.info("%d windows x %d features", len(m), len(m.columns))
    elif args.command == "train":
        ens = run_train(args.features, args.out, config)
        log.info("%d trees, best iteration %s", len(ens.trees), ens.best_iteration)
    elif args.command == "evaluate":
        report = run_evaluate(args.model, args.features, args.out, config, args.train_features, args.sweep_on)
        print(json.dumps({k: report[k] for k in ("precision", "recall", "f1", "roc_auc")}, sort_keys=True))
    elif args.command == "predict":
        preds = run_predict(args.model, args.features, args.out, config)
        log.info("%d windows scored, %d flagged", len(preds), int(preds["flag"].sum()))
    elif args.command == "run":
        report = run_all(args.out, config, registry)
        print(json.dumps({k: report[k] for k in ("precision", "recall", "f1", "roc_auc")}, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"hotspot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"hotspot: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"hotspot: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
