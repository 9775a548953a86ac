"""Command-line interface: fit, cv, synth and dump-graph subcommands.

Exit codes: 0 on success, 1 on validation or configuration problems, 2 when a
solver fails to converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .data import generate_synthetic_pair, load_dataset, load_synthetic_spec, save_dataset
from .errors import ConvergenceError, ValidationError
from .evaluate import load_experiment_config, resolve_datasets, run_cv, write_report
from .neighborhood import build_graph
from .optimizer import fit


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="wdmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_fit = sub.add_parser("fit", help="train on the full datasets of a config")
    p_fit.add_argument("--config", required=True, help="experiment config JSON")
    p_fit.add_argument("--out", required=True, help="where to write the model JSON")
    p_fit.add_argument("--seed", type=int, default=None, help="override config seed")
    p_fit.add_argument("--standardize", action="store_true",
                       help="standardize features jointly over both domains")
    p_fit.add_argument("--trace", default=None, metavar="PATH",
                       help="write per-iteration objective terms as JSON lines")

    p_cv = sub.add_parser("cv", help="stratified cross-validation experiment")
    p_cv.add_argument("--config", required=True, help="experiment config JSON")
    p_cv.add_argument("--out", default=None, help="report path (JSON; TSV beside it)")
    p_cv.add_argument("--seed", type=int, default=None, help="override config seed")
    p_cv.add_argument("--parallel", type=int, default=None,
                      help="run folds in this many worker processes")
    p_cv.add_argument("--standardize", action="store_true",
                      help="standardize features jointly over both domains")
    p_cv.add_argument("--trace", action="store_true",
                      help="include per-iteration objective terms in the report")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset pair")
    p_synth.add_argument("--spec", required=True, help="synthetic spec JSON")
    p_synth.add_argument("--out-prefix", required=True,
                         help="prefix for the source/target output files")
    p_synth.add_argument("--format", default="dense-csv",
                         choices=("dense-csv", "sparse-svmlight"))

    p_graph = sub.add_parser("dump-graph", help="write a neighborhood graph as JSON")
    p_graph.add_argument("--data", required=True, help="dataset file")
    p_graph.add_argument("--format", default="dense-csv",
                         choices=("dense-csv", "sparse-svmlight"))
    p_graph.add_argument("--n-features", type=int, default=None,
                         help="declared dimension for sparse input")
    p_graph.add_argument("--k", type=int, default=5)
    p_graph.add_argument("--out", required=True)
    return parser


def _cmd_fit(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.standardize:
        config = dataclasses.replace(config, standardize=True)
    source, target = resolve_datasets(config)
    state = fit(source, target, config.hp, seed=config.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model": state.model.to_json_dict(),
        "pi": [float(v) for v in state.weights.pi],
        "objective_trace": list(state.objective_trace),
        "iterations": state.iteration,
    }
    out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if args.trace:
        lines = [json.dumps(entry) for entry in state.term_trace]
        Path(args.trace).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"fit: {state.iteration} iterations, "
          f"objective {state.objective_trace[-1]:.6g} -> {out}")
    return 0


def _cmd_cv(args) -> int:
    config = load_experiment_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.parallel is not None:
        overrides["parallel"] = args.parallel
    if args.standardize:
        overrides["standardize"] = True
    if args.trace:
        overrides["trace"] = True
    if overrides:
        config = dataclasses.replace(config, **overrides)
    out = args.out or config.out
    if out is None:
        raise ValidationError("no output path: pass --out or set 'out' in the config")
    report = run_cv(config)
    write_report(report, out)
    means = {m: e["mean_accuracy"] for m, e in report["methods"].items()}
    print(f"cv: {means} -> {out}")
    return 0


def _cmd_synth(args) -> int:
    spec = load_synthetic_spec(args.spec)
    source, target = generate_synthetic_pair(spec)
    prefix = Path(args.out_prefix)
    if args.out_prefix.endswith(("/", "\\")) or prefix.is_dir():
        prefix.mkdir(parents=True, exist_ok=True)
        source_path = prefix / "source.csv"
        target_path = prefix / "target.csv"
    else:
        prefix.parent.mkdir(parents=True, exist_ok=True)
        source_path = prefix.parent / (prefix.name + "source.csv")
        target_path = prefix.parent / (prefix.name + "target.csv")
    save_dataset(source, source_path, args.format)
    save_dataset(target, target_path, args.format)
    print(f"synth: wrote {source_path} and {target_path}")
    return 0


def _cmd_dump_graph(args) -> int:
    dataset = load_dataset(args.data, args.format, n_features=args.n_features)
    graph = build_graph(dataset, args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(graph.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"dump-graph: wrote {out}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "cv": _cmd_cv,
    "synth": _cmd_synth,
    "dump-graph": _cmd_dump_graph,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 2


cli_main = main


if __name__ == "__main__":
    sys.exit(main())
