"""Command-line entry point: ``featstack {fit,predict,report,synth}``."""

import argparse
import csv
import dataclasses
import sys

from .errors import ConfigError, DataError, ModelFormatError, StageError
from .evaluation import EvalReport
from .experiment import ExperimentConfig, run_experiment, synth_example
from .io import load_model, read_numeric_csv, write_csv
from .report import emit_report
from .stacking import predict_stacked

def _cmd_fit(args):
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, output_dir=args.out)
    result = run_experiment(config)
    files = emit_report(result.report, args.format, None, include_timings=True)
    if args.format == "table":
        sys.stdout.write(files["report.txt"])
    else:
        sys.stdout.write(files["accuracy.csv"])
    print(f"artifacts written to {result.output_dir}", file=sys.stderr)
    return 0

def _cmd_predict(args):
    model = load_model(args.model)
    header, values = read_numeric_csv(args.data)
    names = model.feature_names or [h for h in header if h != args.target]
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{args.data}: columns {missing} required by the model are absent")
    X = values[:, [header.index(n) for n in names]]
    pred, weights, phi = predict_stacked(model, X)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        header = ["prediction"]
        if weights is not None:
            header += [f"weight_{n}" for n in model.learner_names]
        if phi is not None:
            header.append("phi")
        w.writerow(header)
        for i in range(len(pred)):
            row = [repr(float(pred[i]))]
            if weights is not None:
                row += [repr(float(v)) for v in weights[i]]
            if phi is not None:
                row.append(repr(float(phi[i])))
            w.writerow(row)
    finally:
        if args.out:
            out.close()
    return 0

def _cmd_report(args):
    with open(args.report) as fh:
        report = EvalReport.from_json(fh.read())
    files = emit_report(report, args.format, args.out, include_timings=False)
    if args.out is None:
        for text in files.values():
            sys.stdout.write(text)
    return 0

def _cmd_synth(args):
    data = synth_example(args.n, args.seed, args.noise)
    write_csv(args.out, data, "y")
    return 0

def build_parser():
    parser = argparse.ArgumentParser(prog="featstack",
                                     description="Feature-dependent stacking experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the train/test protocol from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--format", choices=("table", "delimited"), default="table")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV with the model's feature columns")
    p.add_argument("--target", default="y", help="target column to ignore if present")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("report", help="render a saved report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=("table", "delimited"), default="table")
    p.add_argument("--out", help="directory to write the rendered files to")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("synth", help="generate the linear-vs-quadratic synthetic data")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)
    return parser

def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ModelFormatError, StageError, OSError) as exc:
        print(f"featstack {args.command}: error: {exc}", file=sys.stderr)
        return 2

if __name__ == "__main__":
    sys.exit(main())
