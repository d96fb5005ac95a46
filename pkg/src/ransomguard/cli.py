"""Static PE-header ransomware detection: extract, select, train, evaluate, predict, plot.

Exit codes: 0 success, 1 usage, 2 data or I/O error, 3 PE parse failure,
4 numerical failure (singular matrix, divergence).
Option defaults may be overridden by ``RANSOMGUARD_*`` environment variables;
explicit flags always win.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .classifiers import KINDS, ClassifierSpec, DivergenceError, predict, score, train
from .dataset import (DEFAULT_FOLDS, DEFAULT_LABEL_COLUMN, DEFAULT_SEED, DatasetError,
                      PositiveClass, load_csv)
from .evaluate import (ExperimentConfig, ExperimentError, compare_to_reference, feature_mode,
                       load_reference, run_experiment)
from .metrics import MetricError, mean_roc, read_roc_csv
from .modelfile import fingerprint_file, load_model, save_model
from .numeric import NumericError
from .pe_extract import FEATURE_SCHEMA, PEParseError, extract_features, parse_pe
from .plot import render_roc_svg, split_mean
from .preprocess import (DEFAULT_VARIANCE_THRESHOLD, DEFAULT_VIF_THRESHOLD, SCALING_MODES,
                         calibrate_scaling, select_features, variance_sweep, write_sweep_csv)

log = logging.getLogger("ransomguard")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARSE, EXIT_NUMERIC = 0, 1, 2, 3, 4
ENV_PREFIX = "RANSOMGUARD_"
DEFAULT_SWEEP = "0,0.25,0.5,1,2"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _env(name, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"bad value {raw!r} for {ENV_PREFIX}{name}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_params(items, single_kind=None) -> dict:
    """``--param rf.n_trees=10`` (or ``n_trees=10`` with ``single_kind``) -> {kind: {...}}."""
    out: dict = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        kind, dot, name = key.partition(".")
        if not dot:
            if single_kind is None:
                raise UsageError(f"--param {item!r}: use <model>.<name>=<value>")
            kind, name = single_kind, key
        out.setdefault(kind, {})[name] = _parse_value(value)
    return out


def _echo_config(command: str, config: dict):
    print(f"config[{command}]: {json.dumps(config, sort_keys=True)}", file=sys.stderr)


def _add_common(p, data=True):
    if data:
        p.add_argument("--data", default=_env("DATASET", None),
                       help="dataset CSV (env RANSOMGUARD_DATASET)")
        p.add_argument("--label-column", default=_env("LABEL_COLUMN", DEFAULT_LABEL_COLUMN))
        p.add_argument("--label-means", default=_env("LABEL_MEANS", "legitimate"),
                       choices=[c.value for c in PositiveClass],
                       help="class denoted by a raw label of 1")
        p.add_argument("--delimiter", default=None, help="CSV delimiter (guessed if omitted)")
    p.add_argument("--seed", type=int, default=_env("SEED", DEFAULT_SEED, int))
    p.add_argument("--positive-class", default=_env("POSITIVE_CLASS", "ransomware"),
                   choices=[c.value for c in PositiveClass])
    p.add_argument("--features", default=_env("FEATURES", None),
                   help="auto | paper13 | paper12 | list:a,b,...")
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")


def _load_table(args):
    if not args.data:
        raise UsageError("--data is required (or set RANSOMGUARD_DATASET)")
    return load_csv(args.data, args.label_column, args.positive_class, args.label_means,
                    args.delimiter)


def _iter_inputs(paths):
    for p in paths:
        if os.path.isdir(p):
            for root, dirs, files in os.walk(p):
                dirs.sort()
                for f in sorted(files):
                    yield os.path.join(root, f)
        elif os.path.exists(p):
            yield p
        else:
            raise FileNotFoundError(f"no such input: {p}")


def cmd_extract(args) -> int:
    inputs = list(_iter_inputs(args.inputs))
    rows = []
    for path in inputs:
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        try:
            features = extract_features(parse_pe(raw))
        except PEParseError as exc:
            log.warning("skipping %s: %s at offset %#x", path, exc.reason, exc.offset)
            continue
        rows.append([os.path.basename(path), hashlib.md5(raw).hexdigest()]
                    + [repr(features[n]) for n in FEATURE_SCHEMA])
    if not rows:
        log.error("no input parsed as a PE file")
        return EXIT_PARSE
    header = ["Name", "md5"] + list(FEATURE_SCHEMA)
    if args.legitimate is not None:
        header.append(DEFAULT_LABEL_COLUMN)
        rows = [r + [str(args.legitimate)] for r in rows]
    append = args.append and os.path.exists(args.output) and os.path.getsize(args.output) > 0
    with open(args.output, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(header)
        w.writerows(rows)
    log.info("wrote %d row(s) to %s (%d input(s) skipped)", len(rows), args.output,
             len(inputs) - len(rows))
    return EXIT_OK


def _feature_names(option):
    try:
        return feature_mode(option)[1]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_select(args) -> int:
    names = _feature_names(args.features or "auto")
    table = _load_table(args)
    columns = list(table.columns) if names is None else names
    m = table.select(columns)
    config = {"data": args.data, "features": args.features or "auto", "scaling": args.scaling,
              "variance_threshold": args.variance_threshold,
              "vif_threshold": args.vif_threshold, "positive_class": args.positive_class}
    _echo_config("select", config)
    report = select_features(m, columns, args.variance_threshold, args.vif_threshold,
                             args.scaling)
    report.calibration = calibrate_scaling(m, args.variance_threshold, args.calibration_target)
    if not report.calibration["matching_modes"]:
        log.warning("no scaling mode yields %d survivors at variance threshold %g: %s",
                    args.calibration_target, args.variance_threshold,
                    report.calibration["counts"])
    thresholds = [float(t) for t in args.sweep.split(",") if t.strip()]
    sweep = variance_sweep(m, thresholds, args.scaling)
    if args.sweep_csv:
        write_sweep_csv(sweep, args.sweep_csv)
    text = report.to_json()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    if args.json or not args.output:
        print(text)
    else:
        print(f"stage 1 ({args.scaling} variance > {args.variance_threshold:g}): "
              f"{len(report.stage1_columns)} of {len(columns)} columns")
        for name, v in report.final_vif.items():
            print(f"  {name:<32} VIF {v:.2f}")
        print(f"final: {len(report.final_columns)} columns")
    return EXIT_OK


def cmd_train(args) -> int:
    names = _feature_names(args.features or "paper13")
    table = _load_table(args)
    columns = list(table.columns) if names is None else names
    params = _parse_params(args.param, args.model).get(args.model, {})
    spec = ClassifierSpec(args.model, params, args.seed)
    _echo_config("train", {"data": args.data, "features": columns, **spec.to_dict(),
                           "positive_class": args.positive_class})
    model = train(spec, table.select(columns), table.labels, columns)
    model.metadata["positive_class"] = args.positive_class
    save_model(model, args.output, fingerprint_file(args.data))
    print(f"wrote {args.model} model to {args.output}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    models = tuple(m.strip().lower() for m in args.models.split(",") if m.strip())
    try:
        config = _experiment_config(args, models)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _echo_config("evaluate", config.to_dict())
    table = _load_table(args)
    report = run_experiment(config, table)
    return _finish_evaluate(args, report)


def _experiment_config(args, models) -> ExperimentConfig:
    return ExperimentConfig(
        dataset=args.data, label_column=args.label_column, positive_class=args.positive_class,
        features=args.features or "paper13", scaling_mode=args.scaling,
        variance_threshold=args.variance_threshold, vif_threshold=args.vif_threshold,
        global_selection=args.global_selection, models=models,
        model_params=_parse_params(args.param), k=args.folds, seed=args.seed,
        beta=args.beta, nn_monitor=args.nn_monitor)


def _finish_evaluate(args, report) -> int:
    text = report.to_json()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    if args.roc_dir:
        report.write_roc_csvs(args.roc_dir)
    for name, ts in report.timings.items():
        print(f"timing {name}: {sum(ts):.1f}s total over {len(ts)} folds", file=sys.stderr)
    if args.json:
        print(text)
    else:
        print(report.table())
    if args.reference is not None:
        ref = load_reference(None if args.reference == "builtin" else args.reference)
        checks, failures = compare_to_reference(report, ref, args.tolerance)
        for c in checks:
            status = "PASS" if c.passed else "FAIL"
            print(f"{status} {c.classifier} {c.metric}: {c.reported:.4f} vs {c.reference:.2f} "
                  f"(tol {args.tolerance:g})", file=sys.stderr)
        print(f"reference check: {len(checks) - len(failures)}/{len(checks)} cells within "
              f"tolerance", file=sys.stderr)
    return EXIT_OK


def _read_csv_rows(path, features):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in features if f not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path}: missing model feature column(s) {missing}")
        rows = []
        for i, r in enumerate(reader):
            try:
                rows.append([float(r[f]) for f in features])
            except (TypeError, ValueError):
                raise DatasetError(f"{path}: unparseable value in row {i + 2}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, len(features))


def cmd_predict(args) -> int:
    model = load_model(args.model)
    results = []
    for path in args.inputs:
        if path.lower().endswith(".csv"):
            X = _read_csv_rows(path, model.features)
            labels = [f"{path}:{i + 2}" for i in range(X.shape[0])]
        else:
            with open(path, "rb") as fh:
                features = extract_features(parse_pe(fh.read()))
            missing = [f for f in model.features if f not in features]
            if missing:
                raise DatasetError(f"model needs feature(s) the extractor does not produce: "
                                   f"{missing}")
            X = np.array([[features[f] for f in model.features]])
            labels = [path]
        if X.shape[0] == 0:
            continue
        p = score(model, X)
        y = predict(model, X, args.threshold)
        results.extend(zip(labels, p.tolist(), y.tolist()))
    if args.json:
        print(json.dumps([{"input": n, "probability": p, "label": y} for n, p, y in results],
                         indent=2))
    else:
        for n, p, y in results:
            print(f"{n} {p:.6f} {y}")
    return EXIT_OK


def cmd_plot_roc(args) -> int:
    fold_paths, mean_path = split_mean(args.inputs)
    folds = [(os.path.splitext(os.path.basename(p))[0], read_roc_csv(p)) for p in fold_paths]
    if mean_path is not None:
        mean = ("mean", read_roc_csv(mean_path))
    else:
        mean = ("mean", mean_roc([c for _, c in folds]))
    svg = render_roc_svg(folds, mean, args.title)
    with open(args.output, "w") as fh:
        fh.write(svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ransomguard", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="extract PE header features into a CSV")
    p.add_argument("inputs", nargs="+", help="PE files or directories")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--legitimate", type=int, choices=(0, 1), default=None,
                   help="append a 'legitimate' label column with this value")
    p.add_argument("--append", action="store_true", help="append rows to an existing CSV")
    p.set_defaults(func=cmd_extract)

    def selection_flags(p):
        p.add_argument("--scaling", default=_env("SCALING", "raw"), choices=SCALING_MODES,
                       help="scaling applied before the variance threshold")
        p.add_argument("--variance-threshold", type=float,
                       default=_env("VARIANCE_THRESHOLD", DEFAULT_VARIANCE_THRESHOLD, float))
        p.add_argument("--vif-threshold", type=float,
                       default=_env("VIF_THRESHOLD", DEFAULT_VIF_THRESHOLD, float))

    p = sub.add_parser("select", help="variance + VIF feature selection report")
    _add_common(p)
    selection_flags(p)
    p.add_argument("-o", "--output", help="SelectionReport JSON path")
    p.add_argument("--sweep", default=DEFAULT_SWEEP, help="comma-separated thresholds")
    p.add_argument("--sweep-csv", help="write (threshold, count) sweep CSV here")
    p.add_argument("--calibration-target", type=int, default=13)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train one classifier on the whole dataset")
    _add_common(p)
    p.add_argument("--model", required=True, choices=KINDS)
    p.add_argument("--param", action="append", help="hyperparameter override name=value")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="stratified k-fold evaluation")
    _add_common(p)
    selection_flags(p)
    p.add_argument("--models", default=_env("MODELS", ",".join(KINDS)))
    p.add_argument("--folds", type=int, default=_env("FOLDS", DEFAULT_FOLDS, int))
    p.add_argument("--beta", type=float, default=_env("BETA", 1.0, float))
    p.add_argument("--global-selection", action="store_true",
                   help="select features once on the full dataset (auto mode)")
    p.add_argument("--nn-monitor", choices=("validation", "test"), default="validation",
                   help="early-stopping data: validation split or the held-out fold")
    p.add_argument("--param", action="append", help="hyperparameter override model.name=value")
    p.add_argument("-o", "--output", help="EvalReport JSON path")
    p.add_argument("--roc-dir", help="directory for per-fold and mean ROC CSVs")
    p.add_argument("--reference", nargs="?", const="builtin", default=None,
                   help="compare against a reference table (default: the bundled reference results)")
    p.add_argument("--tolerance", type=float, default=0.02)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="score PE files or feature CSV rows")
    p.add_argument("--model", required=True)
    p.add_argument("--input", dest="inputs", action="append", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot-roc", help="render ROC CSVs as SVG")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--title", default="ROC curve")
    p.set_defaults(func=cmd_plot_roc)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ExperimentError):
        return _exit_code(exc.cause)
    if isinstance(exc, PEParseError):
        return EXIT_PARSE
    if isinstance(exc, (NumericError, DivergenceError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ransomguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ransomguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError, MetricError, ExperimentError) as exc:
        code = _exit_code(exc)
        print(f"ransomguard: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
