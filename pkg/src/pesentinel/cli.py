"""``pesentinel`` command line: synth, ingest, features, train, evaluate, scan, serve.

Exit status: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path

from pesentinel import __version__
from pesentinel.classifiers import ClassifierError, ForestConfig, load_model, save_model
from pesentinel.datamine import (
    BENIGN,
    MALWARE,
    DatamineError,
    export_hashmap_csv,
    ingest,
    load_matrix,
    save_matrix,
)
from pesentinel.evaluation import EvaluationError, comparison_table, evaluate, proposed_pipeline, split
from pesentinel.pe import Limits, PEError
from pesentinel.scanner import Scanner, rank_key
from pesentinel.selection import SelectionError, select_top
from pesentinel.synthetic import BadSpec, SyntheticSpec, write_synthetic_corpus

log = logging.getLogger("pesentinel")

FORMATS = ("text", "csv", "json-lines")


def _fraction(text, low_open=True, high_closed=True):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    ok_low = value > 0 if low_open else value >= 0
    ok_high = value <= 1 if high_closed else value < 1
    if not (ok_low and ok_high):
        lo = "(0" if low_open else "[0"
        hi = "1]" if high_closed else "1)"
        raise argparse.ArgumentTypeError(f"must be in {lo}, {hi}, got {value}")
    return value


def fraction(text):
    return _fraction(text)


def holdout_fraction(text):
    return _fraction(text, low_open=False, high_closed=False)


def probability(text):
    return _fraction(text, low_open=False)


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def seed_int(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def features_per_split(text):
    if text in ("sqrt", "all"):
        return text
    return positive_int(text)


def _emit(args, records, text_lines=None, csv_text=None):
    out = sys.stdout
    if args.format == "json-lines":
        for rec in records:
            out.write(json.dumps(rec, sort_keys=True) + "\n")
    elif args.format == "csv" and csv_text is not None:
        out.write(csv_text)
    else:
        for line in text_lines if text_lines is not None else [json.dumps(r, sort_keys=True) for r in records]:
            out.write(line + "\n")


def cmd_synth(args):
    if not 0 <= args.planted <= args.vocab_size:
        raise UsageError(f"--planted must be between 0 and --vocab-size ({args.vocab_size})")
    spec = SyntheticSpec(
        n_benign=args.n_benign,
        n_malware=args.n_malware,
        vocab_size=args.vocab_size,
        planted=tuple((i * (args.vocab_size // args.planted), args.p_malware, args.p_benign)
                      for i in range(args.planted)) if args.planted else (),
        background_p=args.background,
        seed=args.seed,
    )
    corpus, manifest = write_synthetic_corpus(spec, args.out)
    counts = corpus.matrix.label_counts()
    rec = {"manifest": str(manifest), "samples": len(corpus.matrix), **counts,
           "planted": [f"fn_{f:04d}" for f in spec.planted_ids]}
    _emit(args, [rec], [f"wrote {len(corpus.matrix)} binaries "
                        f"({counts[MALWARE]} malware, {counts[BENIGN]} benign); manifest {manifest}"])
    return 0


def cmd_ingest(args):
    sources = [(d, MALWARE) for d in args.malware] + [(d, BENIGN) for d in args.benign]
    if not sources and args.manifest is None:
        raise UsageError("give --malware/--benign directories or --manifest")
    matrix = ingest(sources, manifest=args.manifest, threads=args.threads)
    save_matrix(matrix, args.matrix)
    if args.csv:
        export_hashmap_csv(matrix, args.csv)
    skipped = matrix.provenance.get("skipped", [])
    for item in skipped:
        log.warning("skipped %s: %s", item["path"], item["error"])
    counts = matrix.label_counts()
    rec = {"matrix": args.matrix, "samples": len(matrix), "functions": len(matrix.vocabulary),
           "skipped": len(skipped), **counts}
    _emit(args, [rec], [f"{len(matrix)} samples ({counts[MALWARE]} malware, {counts[BENIGN]} benign), "
                        f"{len(matrix.vocabulary)} functions, {len(skipped)} skipped -> {args.matrix}"])
    return 0


def cmd_features(args):
    matrix = load_matrix(args.matrix)
    report = select_top(matrix, args.fraction)
    if args.out:
        report.write_csv(args.out)
    retained = set(report.retained)
    shown = report.scores[:args.top] if args.top else report.scores
    records = [{"function_id": s.function_id, "function_name": s.function_name, "info_gain": s.ig,
                "info_gain_corrected": s.ig_corrected, "retained": s.function_id in retained}
               for s in shown]
    buf = io.StringIO()
    report.write_csv(buf)
    lines = [f"label entropy {report.label_entropy:.6f} bits; retained {len(report.retained)} "
             f"of {len(report.scores)} functions (fraction {report.fraction})",
             f"{'FunctionID':>10}  {'FunctionName':<32} {'InfoGain':>14} {'Corrected':>14}"]
    lines += [f"{s.function_id:>10}  {s.function_name:<32} {s.ig:>14.12f} {s.ig_corrected:>14.12f}" for s in shown]
    _emit(args, records, lines, buf.getvalue())
    return 0


def _forest_config(args):
    return ForestConfig(
        n_trees=args.trees,
        sample_fraction=args.sample_fraction,
        features_per_split=args.features_per_split,
        max_depth=args.max_depth,
        seed=args.seed,
    )


def _split_seed(args):
    return args.seed if args.split_seed is None else args.split_seed


def cmd_train(args):
    matrix = load_matrix(args.matrix)
    split_seed = _split_seed(args)
    if args.test_fraction > 0:
        train, _ = split(matrix, args.test_fraction, split_seed)
    else:
        train = matrix
    model, report = proposed_pipeline(train, _forest_config(args), args.fraction, n_jobs=args.threads)
    provenance = {
        "tool_version": __version__,
        "training_samples": len(train),
        "label_counts": train.label_counts(),
        "selection_fraction": args.fraction,
        "retained_features": len(report.retained),
        "test_fraction": args.test_fraction,
        "split_seed": split_seed,
    }
    save_model(model, args.model, provenance)
    rec = {"model": args.model, "trees": args.trees, "training_samples": len(train),
           "retained_features": len(report.retained), "vocabulary": len(matrix.vocabulary)}
    _emit(args, [rec], [f"trained {args.trees} trees on {len(train)} samples, "
                        f"{len(report.retained)}/{len(matrix.vocabulary)} functions -> {args.model}"])
    return 0


def cmd_evaluate(args):
    if args.model is None and not args.table:
        raise UsageError("evaluate needs --model (or --table)")
    matrix = load_matrix(args.matrix)
    if args.table:
        table = comparison_table(matrix, _forest_config(args), args.fraction,
                                 args.test_fraction or 0.1, _split_seed(args), n_jobs=args.threads)
        _emit(args, table.as_records(), table.render_text().rstrip("\n").split("\n"), table.to_csv())
        return 0
    model = load_model(args.model)
    prov = getattr(model, "provenance_", {})
    test_fraction = args.test_fraction if args.test_fraction is not None else prov.get("test_fraction", 0.1)
    split_seed = args.split_seed if args.split_seed is not None else prov.get("split_seed", args.seed)
    if test_fraction and test_fraction > 0:
        _, test = split(matrix, test_fraction, split_seed)
    else:
        test = matrix
    report = evaluate(model, test)
    cells = report.row_cells()
    lines = report.summary_lines() + ["", f"TP {cells[0]}  FP {cells[1]}  DR {cells[2]}  ACY {cells[3]}"]
    csv_text = "TP,FP,DR,ACY\n" + ",".join(cells) + "\n"
    _emit(args, [report.as_dict()], lines, csv_text)
    return 0


def cmd_scan(args):
    model = load_model(args.model)
    scanner = Scanner(model, Limits.from_env())
    verdicts = []
    failed = False
    for path in args.files:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            print(f"error: {path}: {exc.strerror or exc}", file=sys.stderr)
            failed = True
            continue
        verdict = scanner.scan(data, os.path.basename(path))
        failed |= verdict.error is not None
        verdicts.append(verdict)
    verdicts.sort(key=rank_key)
    csv_lines = ["content_hash,label,risk_score,error,source_name"] + [
        ",".join([v.content_hash, v.label, "" if v.risk_score is None else f"{v.risk_score:.4f}",
                  v.error or "", v.source_name]) for v in verdicts]
    records = []
    for v in verdicts:
        rec = v.as_dict()
        rec.pop("duration_ms")
        records.append(rec)
    _emit(args, records, [v.text_line() for v in verdicts], "\n".join(csv_lines) + "\n")
    return 1 if failed else 0


def cmd_serve(args):
    from pesentinel.service import serve

    serve(args.model, args.bind)
    return 0


class UsageError(Exception):
    pass


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="pesentinel", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=FORMATS, default="text", help="output format")
    common.add_argument("--threads", type=positive_int, default=os.cpu_count() or 1,
                        help="worker threads (default: logical cores)")

    forest = argparse.ArgumentParser(add_help=False)
    forest.add_argument("--fraction", type=fraction, default=0.8,
                        help="fraction of functions kept by information gain")
    forest.add_argument("--trees", type=positive_int, default=100, help="trees in the forest")
    forest.add_argument("--sample-fraction", type=fraction, default=0.632,
                        help="bootstrap sample size per tree, as a fraction of the training rows")
    forest.add_argument("--features-per-split", type=features_per_split, default="sqrt",
                        help="candidate functions per split: 'sqrt' (ceil of the square root of the "
                             "retained count), 'all', or an integer")
    forest.add_argument("--max-depth", type=positive_int, default=None, help="tree depth cap (unlimited if unset)")
    forest.add_argument("--seed", type=seed_int, default=42, help="forest seed (SplitMix64)")
    forest.add_argument("--split-seed", type=seed_int, default=None, help="holdout split seed (default: --seed)")

    p = sub.add_parser("synth", parents=[common], formatter_class=fmt,
                       help="write a seeded synthetic corpus of PE files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=seed_int, default=42, help="generator seed")
    p.add_argument("--n-malware", type=positive_int, default=500)
    p.add_argument("--n-benign", type=positive_int, default=500)
    p.add_argument("--vocab-size", type=positive_int, default=200)
    p.add_argument("--planted", type=int, default=20, help="number of evenly spaced discriminative functions")
    p.add_argument("--p-malware", type=probability, default=0.9, help="planted presence probability in malware")
    p.add_argument("--p-benign", type=probability, default=0.1, help="planted presence probability in benign")
    p.add_argument("--background", type=probability, default=0.3, help="presence probability of other functions")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], formatter_class=fmt,
                       help="parse labeled binaries into a feature matrix")
    p.add_argument("--malware", action="append", default=[], metavar="DIR", help="directory of malware samples")
    p.add_argument("--benign", action="append", default=[], metavar="DIR", help="directory of benign samples")
    p.add_argument("--manifest", help="CSV of path,label lines")
    p.add_argument("--matrix", required=True, help="output matrix file")
    p.add_argument("--csv", help="also export the presence table as CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", parents=[common], formatter_class=fmt,
                       help="rank functions by information gain")
    p.add_argument("--matrix", required=True)
    p.add_argument("--fraction", type=fraction, default=0.8, help="fraction of functions retained")
    p.add_argument("--out", help="write FunctionID,FunctionName,InfoGain,InfoGainCorrected CSV here")
    p.add_argument("--top", type=positive_int, default=None, help="print only the first N rows")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common, forest], formatter_class=fmt,
                       help="select functions and train the forest")
    p.add_argument("--matrix", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--test-fraction", type=holdout_fraction, default=0.1,
                   help="stratified holdout excluded from training (0 trains on everything)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common, forest], formatter_class=fmt,
                       help="score a model on the holdout, or print the comparison table")
    p.add_argument("--matrix", required=True)
    p.add_argument("--model")
    p.add_argument("--test-fraction", type=holdout_fraction, default=None,
                   help="holdout fraction (default: the one recorded at training, else 0.1)")
    p.add_argument("--table", action="store_true",
                   help="train decision tree, naive Bayes, forest and IG-selected forest on one split and compare")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scan", parents=[common], formatter_class=fmt,
                       help="score files, highest risk first")
    p.add_argument("--model", required=True)
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("serve", parents=[common], formatter_class=fmt, help="run the HTTP scan service")
    p.add_argument("--model", required=True)
    p.add_argument("--bind", default="127.0.0.1:8080", help="HOST:PORT")
    p.set_defaults(func=cmd_serve)
    return parser


OPERATIONAL_ERRORS = (PEError, DatamineError, ClassifierError, EvaluationError, SelectionError,
                      BadSpec, OSError, ValueError, RuntimeError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except OPERATIONAL_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # last resort: no tracebacks for users
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def run(argv=None):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else (0 if exc.code is None else 2)


if __name__ == "__main__":
    sys.exit(main())
