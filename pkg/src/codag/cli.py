"""Config-driven command line: run experiments, generate data, report, recompute metrics.

Commands:
    run         --config C [--override k=v]... --out D [--jobs N] [--resume]
    gen-data    --config C --out D
    report      --runs D
    eval-matrix --file F
    version

The config file is JSON with sections sequence/model/adapt/dg/aug plus
domain_order, seeds, variant, and buffer_capacity (see README). Overrides
use dotted paths (``dg.alpha=0``); values parse as JSON with plain-string
fallback. CODAG_SEED in the environment replaces the seed list.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .evaluate import metrics_from_grids
from .orchestrate import ExperimentConfig, run_experiment


class CliError(Exception):
    """User-facing failure with an exit code."""

    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: line {exc.lineno}: invalid JSON: {exc.msg}") from None


def apply_override(config: dict, assignment: str) -> None:
    """Apply ``dotted.path=value`` onto a nested config dict."""
    if "=" not in assignment:
        raise CliError(f"override must look like key=value, got {assignment!r}")
    path, raw_value = assignment.split("=", 1)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = config
    keys = path.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise CliError(f"override path {path!r} does not address a config section")
    node[keys[-1]] = value


def build_config(config_path: str, overrides, out_dir=None) -> ExperimentConfig:
    raw = _load_config_file(config_path)
    for assignment in overrides or ():
        apply_override(raw, assignment)
    env_seed = os.environ.get("CODAG_SEED")
    if env_seed is not None:
        try:
            raw["seeds"] = [int(env_seed)]
        except ValueError:
            raise CliError(f"CODAG_SEED must be an integer, got {env_seed!r}") from None
    try:
        config = ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{config_path}: invalid config: {exc}") from None
    if out_dir is not None:
        config.out_dir = out_dir
    return config


def cmd_run(args) -> int:
    config = build_config(args.config, args.override, out_dir=args.out)
    results = run_experiment(config, resume=args.resume, jobs=args.jobs)
    agg = results["aggregate"]
    print(f"variant={results['variant']} digest={results['config_digest'][:12]}")
    for name in ("tda", "tdg", "fa", "all"):
        entry = agg[name]
        if entry is None:
            print(f"  {name.upper():>4}: n/a")
        else:
            print(f"  {name.upper():>4}: {100 * entry['mean']:6.2f} ± {100 * entry['std']:.2f}")
    if config.out_dir:
        print(f"results written to {os.path.join(config.out_dir, 'results.json')}")
    return 0


def cmd_gen_data(args) -> int:
    config = build_config(args.config, args.override)
    os.makedirs(args.out, exist_ok=True)
    specs = config.sequence.specs()
    from .data import make_rotated_clusters

    for spec in specs:
        if spec.kind != "synthetic-rotated":
            raise CliError("gen-data only materializes synthetic-rotated sequences")
        ds = make_rotated_clusters(spec, config.sequence.n_per_domain,
                                   config.sequence.k, config.sequence.d)
        path = os.path.join(args.out, f"domain_{spec.id:02d}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{i}" for i in range(ds.d)] + ["label"])
            for row, label in zip(ds.x, ds.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])
        print(f"wrote {path} ({len(ds)} rows)")
    return 0


def _collect_results(runs_dir: str) -> list[dict]:
    found = []
    for root, _dirs, files in os.walk(runs_dir):
        if "results.json" in files:
            with open(os.path.join(root, "results.json"), encoding="utf-8") as fh:
                found.append(json.load(fh))
    return found


def cmd_report(args) -> int:
    if not os.path.isdir(args.runs):
        raise CliError(f"runs directory not found: {args.runs}")
    results = _collect_results(args.runs)
    if not results:
        raise CliError(f"no results.json files under {args.runs}", code=1)

    by_variant: dict[str, dict[str, list[float]]] = {}
    for res in results:
        bucket = by_variant.setdefault(res["variant"],
                                       {"tda": [], "tdg": [], "fa": [], "all": []})
        for entry in res["per_seed"].values():
            m = entry["metrics"]
            for short, key in (("tda", "tda_mean"), ("tdg", "tdg_mean"),
                               ("fa", "fa_mean"), ("all", "all")):
                if m[key] is not None:
                    bucket[short].append(m[key])

    header = f"{'variant':<20}" + "".join(f"{name.upper():>16}" for name in ("tda", "tdg", "fa", "all"))
    lines = [header, "-" * len(header)]
    table = {}
    for variant in sorted(by_variant):
        cells = []
        table[variant] = {}
        for name in ("tda", "tdg", "fa", "all"):
            values = by_variant[variant][name]
            if not values:
                cells.append(f"{'n/a':>16}")
                table[variant][name] = None
                continue
            arr = np.asarray(values)
            mean, std = float(arr.mean()), float(arr.std())
            table[variant][name] = {"mean": mean, "std": std, "n": len(values)}
            cells.append(f"{100 * mean:>9.2f} ±{100 * std:5.2f}")
        lines.append(f"{variant:<20}" + "".join(cells))
    text = "\n".join(lines)
    print(text)
    report_path = os.path.join(args.runs, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=2)
    print(f"report written to {report_path}")
    return 0


def cmd_eval_matrix(args) -> int:
    if not os.path.exists(args.file):
        raise CliError(f"matrix file not found: {args.file}")
    with open(args.file, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.file}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict) or "dg" not in raw:
        raise CliError(f"{args.file}: expected an object with a 'dg' grid "
                       "and optional 'da' grid")
    try:
        metrics = metrics_from_grids(raw["dg"], raw.get("da"))
    except ValueError as exc:
        raise CliError(f"{args.file}: {exc}") from None
    for name, value in (("TDA", metrics.tda_mean), ("TDG", metrics.tdg_mean),
                        ("FA", metrics.fa_mean), ("All", metrics.all)):
        print(f"{name:>4}: " + ("n/a" if value is None else f"{100 * value:.2f}"))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="config override, e.g. dg.alpha=0 (repeatable)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--jobs", type=int, default=1, help="parallel seed processes")
    run.add_argument("--resume", action="store_true", help="continue a partial run")
    run.set_defaults(func=cmd_run)

    gen = sub.add_parser("gen-data", help="write the synthetic domains as CSV files")
    gen.add_argument("--config", required=True)
    gen.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_data)

    rep = sub.add_parser("report", help="aggregate results.json files into a table")
    rep.add_argument("--runs", required=True, help="directory tree of runs")
    rep.set_defaults(func=cmd_report)

    ev = sub.add_parser("eval-matrix", help="recompute metrics from a saved matrix")
    ev.add_argument("--file", required=True, help="JSON file with 'dg' and optional 'da' grids")
    ev.set_defaults(func=cmd_eval_matrix)

    ver = sub.add_parser("version", help="print the package version")
    ver.set_defaults(func=lambda args: (print(__version__), 0)[1])
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
